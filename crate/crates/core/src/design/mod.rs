//! Feasible control-torque space under thrust vectoring and the propeller-tilt
//! optimisation built on it.
//!
//! Each rotor contributes three torque generators per unit thrust: the link-axis
//! component `M e_x sinθ` with coefficient range `[0, 1]`, and the two vectoring
//! components `M e_y cosθ`, `M e_z cosθ` with range `[−1, 1]`, where
//! `M = ([p×] + σE) R_{cog←L}`. The feasible set is the zonotope spanned by them.

pub mod hull;
pub mod isres;

use nalgebra::{Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::math::skew;
use crate::model::{forward_kinematics, JointState, RobotModel};
use crate::{Error, Result};

pub use hull::{convex_hull, Facet, Hull};
pub use isres::IsresSettings;

/// Pairs whose cross product is shorter than this define no facet.
pub const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TorqueGeneratorSet {
    /// Torque per unit `λ_max`, ordered rotor by rotor as `(v_i1, v_i2, v_i3)`.
    pub vectors: Vec<Vector3<f64>>,
    /// Coefficient range `[a, b]` of each generator.
    pub ranges: Vec<(f64, f64)>,
}

impl TorqueGeneratorSet {
    /// Generators with the symmetric range `[−1, 1]`.
    pub fn symmetric(vectors: Vec<Vector3<f64>>) -> Self {
        let ranges = vec![(-1.0, 1.0); vectors.len()];
        Self { vectors, ranges }
    }

    /// Same generators with every range widened to `[−1, 1]`.
    pub fn symmetrized(&self) -> Self {
        Self::symmetric(self.vectors.clone())
    }

    pub fn is_symmetric(&self) -> bool {
        self.ranges.iter().all(|&(a, b)| a == -b)
    }

    /// All `2^n` combinations of range endpoints, scaled by `λ_max`.
    pub fn vertices(&self, lambda_max: f64) -> Vec<Vector3<f64>> {
        let n = self.vectors.len();
        (0u64..1 << n)
            .map(|mask| {
                (0..n).fold(Vector3::zeros(), |acc, k| {
                    let (a, b) = self.ranges[k];
                    let alpha = if mask >> k & 1 == 1 { b } else { a };
                    acc + self.vectors[k] * alpha
                }) * lambda_max
            })
            .collect()
    }
}

/// Generators of the rolling configuration (joints at the rolling angle) for the
/// model's current tilts. They do not depend on the vectoring angles.
pub fn torque_generators(model: &RobotModel) -> Result<TorqueGeneratorSet> {
    let fs = forward_kinematics(model, &JointState::rolling(), &Isometry3::identity())?;
    let mut vectors = Vec::with_capacity(9);
    let mut ranges = Vec::with_capacity(9);
    for (i, link) in model.links.iter().enumerate() {
        let m = (skew(&fs.rotor_positions[i]) + nalgebra::Matrix3::identity() * link.sigma())
            * fs.link_rotations[i].matrix();
        let (s, c) = link.rotor_tilt.sin_cos();
        vectors.push(m.column(0) * s);
        vectors.push(m.column(1) * c);
        vectors.push(m.column(2) * c);
        ranges.extend([(0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)]);
    }
    Ok(TorqueGeneratorSet { vectors, ranges })
}

fn facet_normals(gen: &TorqueGeneratorSet) -> Result<Vec<Vector3<f64>>> {
    let v = &gen.vectors;
    let mut normals = Vec::new();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            let c = v[i].cross(&v[j]);
            let norm = c.norm();
            if norm >= PARALLEL_EPS {
                normals.push(c / norm);
            }
        }
    }
    if normals.is_empty() {
        return Err(Error::DegenerateSet);
    }
    Ok(normals)
}

/// Guaranteed torque `λ_max · min_ij Σ_k |n_ijᵀ v_k|` with `n_ij` the unit normal of
/// generator pair `(i, j)`. Ranges are ignored: every generator is treated as
/// symmetric.
pub fn min_feasible_torque(gen: &TorqueGeneratorSet, lambda_max: f64) -> Result<f64> {
    let normals = facet_normals(gen)?;
    let d = normals
        .iter()
        .map(|n| gen.vectors.iter().map(|v| n.dot(v).abs()).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(lambda_max * d)
}

/// Guaranteed torque honouring each generator's own range: the smallest support
/// value `h(±n_ij) = Σ_k max(a_k nᵀv_k, b_k nᵀv_k)` over all facet normals. Negative
/// when the origin lies outside the feasible set.
pub fn min_feasible_torque_ranged(gen: &TorqueGeneratorSet, lambda_max: f64) -> Result<f64> {
    let normals = facet_normals(gen)?;
    let support = |n: &Vector3<f64>| -> f64 {
        gen.vectors
            .iter()
            .zip(&gen.ranges)
            .map(|(v, &(a, b))| {
                let s = n.dot(v);
                (a * s).max(b * s)
            })
            .sum()
    };
    let d = normals
        .iter()
        .map(|n| support(n).min(support(&-n)))
        .fold(f64::INFINITY, f64::min);
    Ok(lambda_max * d)
}

/// Exact hull of the feasible torque set by vertex enumeration.
pub fn feasible_torque_hull(gen: &TorqueGeneratorSet, lambda_max: f64) -> Result<Hull> {
    convex_hull(&gen.vertices(lambda_max))
}

/// Distance from the origin to the nearest facet of the exact hull.
pub fn hull_min_torque(gen: &TorqueGeneratorSet, lambda_max: f64) -> Result<f64> {
    Ok(feasible_torque_hull(gen, lambda_max)?.interior_distance(&Vector3::zeros()))
}

/// `w₁ τ_min/λ_max − w₂‖θ‖²` with generators built in the rolling configuration.
pub fn design_objective(theta: &[f64; 3], model: &RobotModel, w1: f64, w2: f64) -> Result<f64> {
    if theta.iter().any(|t| !(t.abs() < std::f64::consts::FRAC_PI_2)) {
        return Err(Error::Domain(format!("tilt angles must satisfy |θ| < π/2, got {theta:?}")));
    }
    let gen = torque_generators(&model.clone().with_tilts(*theta))?;
    let tau = min_feasible_torque(&gen, 1.0)?;
    Ok(w1 * tau - w2 * theta.iter().map(|t| t * t).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSettings {
    pub w1: f64,
    pub w2: f64,
    /// Symmetric bound on every tilt, radians.
    pub bound: f64,
    #[serde(flatten)]
    pub optimizer: IsresSettings,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self { w1: 4.0, w2: 1.0, bound: 0.5, optimizer: IsresSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub theta: [f64; 3],
    /// `τ_min(θ_opt)`, N·m.
    pub tau_min: f64,
    pub objective: f64,
    pub evaluations: usize,
    pub seed: u64,
    /// `τ_min` of the untilted design, N·m.
    pub tau_min_untilted: f64,
    pub objective_untilted: f64,
    /// Exact hull distance at `θ_opt` honouring the `[0, 1]` link-axis range, N·m.
    pub tau_min_exact: f64,
}

/// Maximises [`design_objective`] over `θ ∈ [−bound, bound]³`. The untilted design is
/// part of the initial population, so the result is never worse than it.
pub fn optimize_tilt(model: &RobotModel, settings: &DesignSettings) -> Result<DesignResult> {
    if !(settings.bound > 0.0 && settings.bound < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Optimizer(format!("tilt bound {} outside (0, π/2)", settings.bound)));
    }
    let DesignSettings { w1, w2, bound, optimizer } = *settings;
    let objective = |x: &[f64]| match design_objective(&[x[0], x[1], x[2]], model, w1, w2) {
        Ok(v) => (-v, 0.0),
        Err(_) => (f64::INFINITY, 1.0),
    };
    let out = isres::minimize(objective, &[-bound; 3], &[bound; 3], &[vec![0.0; 3]], &optimizer)?;
    let theta = [out.x[0], out.x[1], out.x[2]];
    let tilted = model.clone().with_tilts(theta);
    let untilted = model.clone().with_tilts([0.0; 3]);
    let lmax = model.thrust_max;
    let gen = torque_generators(&tilted)?;
    Ok(DesignResult {
        theta,
        tau_min: min_feasible_torque(&gen, lmax)?,
        objective: -out.value,
        evaluations: out.evaluations,
        seed: optimizer.seed,
        tau_min_untilted: min_feasible_torque(&torque_generators(&untilted)?, lmax)?,
        objective_untilted: design_objective(&[0.0; 3], model, w1, w2)?,
        tau_min_exact: hull_min_torque(&gen, lmax)?,
    })
}

/// Facets of the feasible torque hull as CSV.
pub fn facets_csv(hull: &Hull) -> String {
    let mut s = String::from("nx,ny,nz,offset,ax,ay,az,bx,by,bz,cx,cy,cz\n");
    for f in hull.facets() {
        let mut row = vec![f.normal.x, f.normal.y, f.normal.z, f.offset];
        for v in f.vertices {
            row.extend([v.x, v.y, v.z]);
        }
        s.push_str(&row.iter().map(|v| format!("{v:.9e}")).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

/// Hull vertices as CSV.
pub fn vertices_csv(hull: &Hull) -> String {
    let mut s = String::from("tx,ty,tz\n");
    for i in hull.vertex_indices() {
        let p = hull.points[i];
        s.push_str(&format!("{:.9e},{:.9e},{:.9e}\n", p.x, p.y, p.z));
    }
    s
}
