//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use delta_core::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Brute-force optimum of `min ½xᵀPx + qᵀx, A_eq x = b, G x ≤ h` (P positive
/// definite) by enumerating every active subset of the inequalities and keeping the
/// primal- and dual-feasible KKT point with the lowest objective.
pub fn active_set_oracle(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let n = q.len();
    let me = a_eq.nrows();
    let mi = g.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << mi) {
        let act: Vec<usize> = (0..mi).filter(|i| mask >> i & 1 == 1).collect();
        let k = me + act.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-q));
        for r in 0..me {
            for j in 0..n {
                kkt[(n + r, j)] = a_eq[(r, j)];
                kkt[(j, n + r)] = a_eq[(r, j)];
            }
            rhs[n + r] = b_eq[r];
        }
        for (a, &i) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + a, j)] = g[(i, j)];
                kkt[(j, n + me + a)] = g[(i, j)];
            }
            rhs[n + me + a] = h[i];
        }
        let Some(v) = kkt.lu().solve(&rhs) else { continue };
        let x = v.rows(0, n).into_owned();
        let feasible = (g * &x - h).iter().all(|s| *s <= 1e-9) && (a_eq * &x - b_eq).amax() <= 1e-9;
        let duals_ok = (0..act.len()).all(|a| v[n + me + a] >= -1e-9);
        if feasible && duals_ok {
            let f = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
            if best.as_ref().map_or(true, |b| f < b.1) {
                best = Some((x, f));
            }
        }
    }
    best
}

/// A strictly feasible random problem with `n` variables, `me` equalities and `mi`
/// one-sided inequalities `G x ≤ h`. Returns the problem for the solver and the raw
/// data for the oracle.
pub fn random_qp(
    rng: &mut ChaCha8Rng,
    n: usize,
    me: usize,
    mi: usize,
) -> (QpProblem, (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>)) {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    let g = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &g * &x0 + DVector::from_fn(mi, |_, _| rng.random_range(0.05..1.0));
    let pb = QpProblem::new(
        p.clone(),
        q.clone(),
        a_eq.clone(),
        b_eq.clone(),
        g.clone(),
        DVector::from_element(mi, f64::NEG_INFINITY),
        h.clone(),
    )
    .unwrap();
    (pb, (p, q, a_eq, b_eq, g, h))
}

/// Best feasible objective found by a lattice search over the null space of the
/// equality constraints, refined `levels` times around the incumbent. Independent of
/// the ADMM machinery; only useful for a handful of free directions.
pub fn grid_qp_oracle(pb: &QpProblem, points: usize, levels: usize) -> Option<f64> {
    let n = pb.n();
    let a = &pb.a_eq;
    let x_p = a.clone().pseudo_inverse(1e-12).ok()? * &pb.b_eq;
    let eig = (a.transpose() * a).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i].abs() < 1e-10 * scale).collect();
    let basis = DMatrix::from_fn(n, null.len(), |r, c| eig.eigenvectors[(r, null[c])]);
    let k = null.len();
    let feasible = |x: &DVector<f64>| {
        let ax = &pb.a_in * x;
        (0..ax.len()).all(|i| ax[i] >= pb.lower[i] - 1e-9 && ax[i] <= pb.upper[i] + 1e-9)
    };
    let mut centre = DVector::zeros(k);
    let mut radius = 2.0 * x_p.norm() + 1.0;
    let mut best: Option<f64> = None;
    for _ in 0..=levels {
        let step = 2.0 * radius / (points - 1) as f64;
        let mut incumbent = centre.clone();
        for idx in 0..points.pow(k as u32) {
            let mut rem = idx;
            let z = DVector::from_fn(k, |_, _| {
                let i = rem % points;
                rem /= points;
                -radius + step * i as f64
            }) + &centre;
            let x = &x_p + &basis * &z;
            if !feasible(&x) {
                continue;
            }
            let f = pb.objective(&x);
            if best.map_or(true, |b| f < b) {
                best = Some(f);
                incumbent = z;
            }
        }
        centre = incumbent;
        radius = 2.0 * step;
    }
    best
}
