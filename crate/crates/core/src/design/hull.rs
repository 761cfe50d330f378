//! Incremental 3-D convex hull, used as the exact oracle for the feasible-torque set.

use std::collections::HashSet;

use nalgebra::Vector3;

use crate::{Error, Result};

/// A triangulated hull with outward-oriented faces.
#[derive(Debug, Clone)]
pub struct Hull {
    pub points: Vec<Vector3<f64>>,
    /// Vertex indices, counter-clockwise seen from outside.
    pub faces: Vec<[usize; 3]>,
}

/// One supporting plane `n·x = offset` with unit outward normal `n`.
#[derive(Debug, Clone, Copy)]
pub struct Facet {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub vertices: [Vector3<f64>; 3],
}

impl Hull {
    pub fn facets(&self) -> Vec<Facet> {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.points[i]);
                let normal = (b - a).cross(&(c - a)).normalize();
                Facet { normal, offset: normal.dot(&a), vertices: [a, b, c] }
            })
            .collect()
    }

    /// Signed distance from `p` to the hull boundary, positive inside.
    pub fn interior_distance(&self, p: &Vector3<f64>) -> f64 {
        self.facets()
            .iter()
            .map(|f| f.offset - f.normal.dot(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Indices of points that appear as hull vertices.
    pub fn vertex_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.faces.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

fn plane(points: &[Vector3<f64>], f: &[usize; 3]) -> (Vector3<f64>, f64) {
    let [a, b, c] = f.map(|i| points[i]);
    let n = (b - a).cross(&(c - a));
    let n = n / n.norm();
    (n, n.dot(&a))
}

/// Convex hull of a point cloud. Fails with [`Error::DegenerateSet`] when the
/// points do not span three dimensions.
pub fn convex_hull(points: &[Vector3<f64>]) -> Result<Hull> {
    if points.len() < 4 {
        return Err(Error::DegenerateSet);
    }
    let scale = points.iter().map(|p| p.amax()).fold(0.0, f64::max).max(1e-300);
    let eps = 1e-10 * scale;

    // initial tetrahedron from extreme points
    let i0 = (0..points.len())
        .min_by(|&a, &b| points[a].x.total_cmp(&points[b].x))
        .unwrap();
    let far = |key: &dyn Fn(&Vector3<f64>) -> f64| {
        (0..points.len())
            .max_by(|&a, &b| key(&points[a]).total_cmp(&key(&points[b])))
            .unwrap()
    };
    let p0 = points[i0];
    let i1 = far(&|p| (p - p0).norm());
    let d01 = (points[i1] - p0).normalize();
    let i2 = far(&|p| (p - p0).cross(&d01).norm());
    let n012 = (points[i1] - p0).cross(&(points[i2] - p0));
    if n012.norm() <= eps * scale {
        return Err(Error::DegenerateSet);
    }
    let n012 = n012.normalize();
    let i3 = far(&|p| (p - p0).dot(&n012).abs());
    if (points[i3] - p0).dot(&n012).abs() <= eps {
        return Err(Error::DegenerateSet);
    }

    let mut faces: Vec<[usize; 3]> = Vec::new();
    let inside = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    for f in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
        let (n, d) = plane(points, &f);
        faces.push(if n.dot(&inside) < d { f } else { [f[0], f[2], f[1]] });
    }

    let seed = [i0, i1, i2, i3];
    for (idx, p) in points.iter().enumerate() {
        if seed.contains(&idx) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| {
                let (n, d) = plane(points, f);
                n.dot(p) - d > eps
            })
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut visible_edges = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                visible_edges.insert((f[k], f[(k + 1) % 3]));
            }
        }
        let mut next = Vec::with_capacity(faces.len() + 4);
        let mut horizon = Vec::new();
        for (f, &v) in faces.iter().zip(&visible) {
            if !v {
                next.push(*f);
                continue;
            }
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if !visible_edges.contains(&(b, a)) {
                    horizon.push((a, b));
                }
            }
        }
        for (a, b) in horizon {
            next.push([a, b, idx]);
        }
        faces = next;
    }
    Ok(Hull { points: points.to_vec(), faces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_cube_facets() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(Vector3::new(
                (i & 1) as f64 * 2.0 - 1.0,
                ((i >> 1) & 1) as f64 * 2.0 - 1.0,
                ((i >> 2) & 1) as f64 * 2.0 - 1.0,
            ));
        }
        pts.push(Vector3::new(0.1, -0.2, 0.3));
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.faces.len(), 12);
        assert_eq!(h.vertex_indices().len(), 8);
        assert!((h.interior_distance(&Vector3::zeros()) - 1.0).abs() < 1e-12);
        assert!((h.interior_distance(&Vector3::new(0.5, 0.0, 0.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_cloud_is_enclosed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..300)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..3.0)))
            .collect();
        let h = convex_hull(&pts).unwrap();
        for f in h.facets() {
            for p in &pts {
                assert!(f.normal.dot(p) <= f.offset + 1e-9);
            }
        }
        // Euler: closed triangulated sphere has F = 2V - 4
        assert_eq!(h.faces.len(), 2 * h.vertex_indices().len() - 4);
    }

    #[test]
    fn planar_points_are_degenerate() {
        let pts: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect();
        assert_eq!(convex_hull(&pts).unwrap_err(), Error::DegenerateSet);
    }
}
