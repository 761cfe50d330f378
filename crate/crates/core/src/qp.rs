//! Dense convex QP solver: minimise `½xᵀPx + qᵀx` subject to `A_eq x = b_eq` and
//! `l ≤ A_in x ≤ u`.
//!
//! Operator splitting (ADMM) on the stacked constraint `l ≤ Ax ≤ u`, with Ruiz
//! equilibration, over-relaxation and a polishing step that solves the KKT system on
//! the guessed active set. Dual sign convention: `Px + q + Aᵀy = 0`, `y_i > 0` on an
//! active upper bound and `y_i < 0` on an active lower bound.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Validates dimensions and bounds, and symmetrises `P`.
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        if p.shape() != (n, n) {
            return Err(Error::Qp(format!("P is {:?}, expected {n}x{n}", p.shape())));
        }
        if a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return Err(Error::Qp("equality block dimensions inconsistent".into()));
        }
        if a_in.ncols() != n || a_in.nrows() != lower.len() || lower.len() != upper.len() {
            return Err(Error::Qp("inequality block dimensions inconsistent".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::Qp("lower bound exceeds upper bound".into()));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        let finite_v = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&p) || !finite_v(&q) || !finite(&a_eq) || !finite_v(&b_eq) || !finite(&a_in)
            || lower.iter().chain(upper.iter()).any(|v| v.is_nan())
        {
            return Err(Error::Qp("non-finite problem data".into()));
        }
        let p = (&p + p.transpose()) * 0.5;
        if n > 0 && p.clone().symmetric_eigenvalues().min() < -1e-10 {
            return Err(Error::Qp("P is not positive semidefinite".into()));
        }
        Ok(Self { p, q, a_eq, b_eq, a_in, lower, upper })
    }

    /// Problem with only inequality constraints.
    pub fn inequality_only(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a_in: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        Self::new(p, q, DMatrix::zeros(0, n), DVector::zeros(0), a_in, lower, upper)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (me, mi, n) = (self.a_eq.nrows(), self.a_in.nrows(), self.n());
        let mut a = DMatrix::zeros(me + mi, n);
        a.rows_mut(0, me).copy_from(&self.a_eq);
        a.rows_mut(me, mi).copy_from(&self.a_in);
        let mut l = DVector::zeros(me + mi);
        let mut u = DVector::zeros(me + mi);
        l.rows_mut(0, me).copy_from(&self.b_eq);
        u.rows_mut(0, me).copy_from(&self.b_eq);
        l.rows_mut(me, mi).copy_from(&self.lower);
        u.rows_mut(me, mi).copy_from(&self.upper);
        (a, l, u)
    }

    /// Plain-text dump; `load` reads it back bit-exactly.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "qp {} {} {}", self.n(), self.a_eq.nrows(), self.a_in.nrows());
        let mut mat = |name: &str, m: &DMatrix<f64>| {
            let _ = writeln!(s, "{name}");
            for r in m.row_iter() {
                let _ = writeln!(s, "{}", r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "));
            }
        };
        mat("P", &self.p);
        mat("q", &DMatrix::from_row_slice(1, self.n(), self.q.as_slice()));
        mat("A_eq", &self.a_eq);
        mat("b_eq", &DMatrix::from_row_slice(1, self.b_eq.len(), self.b_eq.as_slice()));
        mat("A_in", &self.a_in);
        mat("lower", &DMatrix::from_row_slice(1, self.lower.len(), self.lower.as_slice()));
        mat("upper", &DMatrix::from_row_slice(1, self.upper.len(), self.upper.as_slice()));
        s
    }

    pub fn load(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Qp(format!("malformed qp dump: {m}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != "qp" {
            return Err(bad("header"));
        }
        let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("dimension"));
        let (n, me, mi) = (dim(header[1])?, dim(header[2])?, dim(header[3])?);
        let mut block = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            if lines.next() != Some(name) {
                return Err(bad(&format!("expected section {name}")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                // zero-width rows are written as empty lines, which are skipped
                if cols == 0 {
                    continue;
                }
                let line = lines.next().ok_or_else(|| bad("truncated"))?;
                let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
                let row = row.map_err(|_| bad("number"))?;
                if row.len() != cols {
                    return Err(bad(&format!("row width in {name}")));
                }
                data.extend(row);
            }
            Ok(DMatrix::from_row_slice(rows, cols, &data))
        };
        let p = block("P", n, n)?;
        let q = block("q", 1, n)?;
        let a_eq = block("A_eq", me, n)?;
        let b_eq = block("b_eq", 1, me)?;
        let a_in = block("A_in", mi, n)?;
        let lower = block("lower", 1, mi)?;
        let upper = block("upper", 1, mi)?;
        let v = |m: DMatrix<f64>| DVector::from_iterator(m.len(), m.iter().copied());
        Self::new(p, v(q), a_eq, v(b_eq), a_in, v(lower), v(upper))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    /// A primal infeasibility certificate was found.
    Infeasible,
    /// A dual infeasibility certificate was found: the objective is unbounded below.
    Unbounded,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIter => "max_iter",
            QpStatus::Infeasible => "infeasible",
            QpStatus::Unbounded => "unbounded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    /// Tolerance of the infeasibility certificates.
    pub tol_infeasible: f64,
    /// Rebalance `ρ` from the residual ratio every few iterations.
    pub adaptive_rho: bool,
}

const ADAPT_INTERVAL: usize = 25;

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            max_iter: 20_000,
            scaling_iters: 10,
            polish: true,
            tol_infeasible: 1e-5,
            adaptive_rho: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Primal infeasibility, stationarity and complementarity residuals (∞-norms) of a
/// candidate solution against the original problem.
pub fn kkt_residuals(problem: &QpProblem, sol: &QpSolution) -> KktResiduals {
    kkt_of(problem, &sol.x, &sol.y_eq, &sol.y_in)
}

fn kkt_of(pb: &QpProblem, x: &DVector<f64>, y_eq: &DVector<f64>, y_in: &DVector<f64>) -> KktResiduals {
    let eq = &pb.a_eq * x - &pb.b_eq;
    let ax = &pb.a_in * x;
    let mut primal = inf_norm(&eq);
    let mut complementarity: f64 = 0.0;
    for i in 0..ax.len() {
        let (l, u, a, y) = (pb.lower[i], pb.upper[i], ax[i], y_in[i]);
        primal = primal.max((a - u).max(0.0)).max((l - a).max(0.0));
        let c = if y > 0.0 {
            if u.is_finite() { y * (u - a).abs() } else { y }
        } else if y < 0.0 {
            if l.is_finite() { -y * (a - l).abs() } else { -y }
        } else {
            0.0
        };
        complementarity = complementarity.max(c);
    }
    let stat = &pb.p * x + &pb.q + pb.a_eq.transpose() * y_eq + pb.a_in.transpose() * y_in;
    let clean = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    KktResiduals { primal: clean(primal), dual: clean(inf_norm(&stat)), complementarity: clean(complementarity) }
}

/// Ruiz-equilibrated copy of the stacked problem.
struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn equilibrate(pb: &QpProblem, iters: usize) -> Scaled {
    let (mut a, mut l, mut u) = pb.stacked();
    let (n, m) = (pb.n(), a.nrows());
    let mut p = pb.p.clone();
    let mut q = pb.q.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let dx = DVector::from_fn(n, |j, _| {
            let col = p.column(j).amax().max(a.column(j).amax());
            1.0 / clamp(col).sqrt()
        });
        let dz = DVector::from_fn(m, |i, _| 1.0 / clamp(a.row(i).amax()).sqrt());
        for j in 0..n {
            for k in 0..n {
                p[(j, k)] *= dx[j] * dx[k];
            }
        }
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] *= dz[i] * dx[j];
            }
        }
        q.component_mul_assign(&dx);
        d.component_mul_assign(&dx);
        e.component_mul_assign(&dz);
    }
    for i in 0..m {
        l[i] *= e[i];
        u[i] *= e[i];
    }
    let mean_col = if n > 0 { (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64 } else { 1.0 };
    let c = 1.0 / clamp(mean_col.max(q.amax()));
    p *= c;
    q *= c;
    Scaled { p, q, a, l, u, d, e, c }
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(l[i], u[i]))
}

/// Solves from a cold start.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> QpSolution {
    solve_warm(problem, settings, None, None)
}

/// Solves starting from a primal guess and stacked duals `[y_eq; y_in]`.
pub fn solve_warm(
    problem: &QpProblem,
    settings: &QpSettings,
    x0: Option<&DVector<f64>>,
    y0: Option<&DVector<f64>>,
) -> QpSolution {
    let n = problem.n();
    let me = problem.a_eq.nrows();
    let s = equilibrate(problem, settings.scaling_iters);
    let m = s.a.nrows();
    let sigma = settings.sigma;
    let rho_vector = |rho_bar: f64| {
        DVector::from_fn(m, |i, _| {
            if s.l[i] == s.u[i] {
                1e3 * rho_bar
            } else if s.l[i].is_infinite() && s.u[i].is_infinite() {
                1e-6
            } else {
                rho_bar
            }
        })
    };
    let factor = |rho: &DVector<f64>| {
        let mut kkt = s.p.clone() + DMatrix::identity(n, n) * sigma;
        for i in 0..m {
            let row = s.a.row(i);
            kkt += row.transpose() * row * rho[i];
        }
        kkt.cholesky().expect("P + σI + AᵀρA is positive definite")
    };
    let mut rho_bar = settings.rho;
    let mut rho = rho_vector(rho_bar);
    let mut chol = factor(&rho);

    let mut x = match x0 {
        Some(x0) => x0.component_div(&s.d),
        None => DVector::zeros(n),
    };
    let mut y = match y0 {
        Some(y0) => y0.component_div(&s.e) * s.c,
        None => DVector::zeros(m),
    };
    let mut z = project(&(&s.a * &x), &s.l, &s.u);

    let unscale = |x: &DVector<f64>, y: &DVector<f64>| {
        let xu = x.component_mul(&s.d);
        let yu = y.component_mul(&s.e) / s.c;
        (xu, yu.rows(0, me).into_owned(), yu.rows(me, m - me).into_owned())
    };
    let finish = |x: &DVector<f64>, y: &DVector<f64>, status: QpStatus, iterations: usize| {
        let (xu, ye, yi) = unscale(x, y);
        let r = kkt_of(problem, &xu, &ye, &yi);
        QpSolution { x: xu, y_eq: ye, y_in: yi, status, primal_residual: r.primal, dual_residual: r.dual, iterations, polished: false }
    };
    let converged = |sol: &QpSolution| sol.primal_residual <= settings.tol_primal && sol.dual_residual <= settings.tol_dual;

    // a warm start may already be optimal
    if x0.is_some() {
        let sol = finish(&x, &y, QpStatus::Solved, 0);
        if converged(&sol) {
            return sol;
        }
        if settings.polish {
            if let Some(p) = polish(problem, &sol, settings) {
                return p;
            }
        }
    }

    let alpha = settings.alpha;
    let mut last = finish(&x, &y, QpStatus::MaxIter, 0);
    for it in 1..=settings.max_iter {
        let rhs = &x * sigma - &s.q + s.a.transpose() * (rho.component_mul(&z) - &y);
        let x_t = chol.solve(&rhs);
        let z_t = &s.a * &x_t;
        let x_new = &x_t * alpha + &x * (1.0 - alpha);
        let z_relax = &z_t * alpha + &z * (1.0 - alpha);
        let z_new = project(&(&z_relax + y.component_div(&rho)), &s.l, &s.u);
        let y_new = &y + rho.component_mul(&(&z_relax - &z_new));
        let dx = &x_new - &x;
        let dy = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        let sol = finish(&x, &y, QpStatus::Solved, it);
        if converged(&sol) {
            return sol;
        }
        if settings.polish && sol.primal_residual < 1e-3 && sol.dual_residual < 1e-3 {
            if let Some(mut p) = polish(problem, &sol, settings) {
                p.iterations = it;
                return p;
            }
        }
        if settings.adaptive_rho && it % ADAPT_INTERVAL == 0 {
            // balance the scaled primal and dual residuals
            let ax = &s.a * &x;
            let px = &s.p * &x;
            let aty = s.a.transpose() * &y;
            let prim = inf_norm(&(&ax - &z)) / inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
            let dual = inf_norm(&(&px + &s.q + &aty))
                / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)).max(1e-30);
            let ratio = (prim / dual.max(1e-30)).sqrt();
            if ratio.is_finite() && !(0.2..=5.0).contains(&ratio) {
                rho_bar = (rho_bar * ratio).clamp(1e-6, 1e6);
                rho = rho_vector(rho_bar);
                chol = factor(&rho);
            }
        }
        if primal_infeasible(&s, &dy, settings.tol_infeasible) {
            return QpSolution { status: QpStatus::Infeasible, ..sol };
        }
        if dual_infeasible(&s, &dx, settings.tol_infeasible) {
            return QpSolution { status: QpStatus::Unbounded, ..sol };
        }
        last = sol;
    }
    QpSolution { status: QpStatus::MaxIter, ..last }
}

fn primal_infeasible(s: &Scaled, dy: &DVector<f64>, eps: f64) -> bool {
    // certificate in unscaled space: Aᵀδy = 0 and uᵀδy₊ + lᵀδy₋ < 0
    let dy_u = dy.component_mul(&s.e);
    let norm = inf_norm(&dy_u);
    if norm < 1e-12 {
        return false;
    }
    let at_dy = (s.a.transpose() * dy).component_div(&s.d);
    if inf_norm(&at_dy) > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let (l, u) = (s.l[i] / s.e[i], s.u[i] / s.e[i]);
        let v = dy_u[i];
        if v > 0.0 {
            if u.is_infinite() {
                if v > eps * norm {
                    return false;
                }
            } else {
                support += u * v;
            }
        } else if v < 0.0 {
            if l.is_infinite() {
                if -v > eps * norm {
                    return false;
                }
            } else {
                support += l * v;
            }
        }
    }
    support < -eps * norm
}

fn dual_infeasible(s: &Scaled, dx: &DVector<f64>, eps: f64) -> bool {
    let dx_u = dx.component_mul(&s.d);
    let norm = inf_norm(&dx_u);
    if norm < 1e-12 {
        return false;
    }
    let p_dx = (&s.p * dx).component_div(&s.d) / s.c;
    if inf_norm(&p_dx) > eps * norm {
        return false;
    }
    if s.q.dot(dx) / s.c >= -eps * norm {
        return false;
    }
    let a_dx = (&s.a * dx).component_div(&s.e);
    (0..a_dx.len()).all(|i| {
        let (l, u) = (s.l[i], s.u[i]);
        let v = a_dx[i];
        match (l.is_finite(), u.is_finite()) {
            (true, true) => v.abs() <= eps * norm,
            (true, false) => v >= -eps * norm,
            (false, true) => v <= eps * norm,
            (false, false) => true,
        }
    })
}

fn row_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.transpose().singular_values();
    let top = sv.max();
    sv.iter().filter(|v| **v > 1e-9 * top.max(1e-300)).count()
}

/// Solves the equality-constrained KKT system on the active set guessed from `sol`;
/// returns the polished solution if it meets the tolerances with correctly signed duals.
fn polish(pb: &QpProblem, sol: &QpSolution, settings: &QpSettings) -> Option<QpSolution> {
    let n = pb.n();
    let me = pb.a_eq.nrows();
    let ax = &pb.a_in * &sol.x;
    // (row, bound, sign) with sign +1 upper, −1 lower
    let mut candidates: Vec<(usize, f64, f64, f64)> = Vec::new();
    for i in 0..ax.len() {
        let y = sol.y_in[i];
        let (l, u) = (pb.lower[i], pb.upper[i]);
        if l == u {
            candidates.push((i, l, 0.0, f64::INFINITY));
        } else if u.is_finite() && u - ax[i] < y {
            candidates.push((i, u, 1.0, y));
        } else if l.is_finite() && ax[i] - l < -y {
            candidates.push((i, l, -1.0, -y));
        }
    }
    // strongest multipliers first; rows dependent on those already kept are dropped
    // so degenerate vertices still give a nonsingular system
    candidates.sort_by(|a, b| b.3.total_cmp(&a.3));
    let mut kept = pb.a_eq.clone();
    let mut rank = row_rank(&kept);
    let mut active: Vec<(usize, f64, f64)> = Vec::new();
    for (i, bound, sign, _) in candidates {
        let mut trial = kept.clone().insert_row(kept.nrows(), 0.0);
        trial.row_mut(kept.nrows()).copy_from(&pb.a_in.row(i));
        let r = row_rank(&trial);
        if r > rank {
            kept = trial;
            rank = r;
            active.push((i, bound, sign));
        }
    }
    let k = me + active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&pb.p);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&pb.q));
    for r in 0..me {
        for j in 0..n {
            kkt[(n + r, j)] = pb.a_eq[(r, j)];
            kkt[(j, n + r)] = pb.a_eq[(r, j)];
        }
        rhs[n + r] = pb.b_eq[r];
    }
    for (a, &(i, bound, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + me + a, j)] = pb.a_in[(i, j)];
            kkt[(j, n + me + a)] = pb.a_in[(i, j)];
        }
        rhs[n + me + a] = bound;
    }
    // regularised factorisation plus refinement against the exact system
    let delta = 1e-10;
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += delta;
    }
    for j in n..n + k {
        reg[(j, j)] -= delta;
    }
    let lu = reg.lu();
    let mut v = lu.solve(&rhs)?;
    for _ in 0..5 {
        let r = &rhs - &kkt * &v;
        v += lu.solve(&r)?;
    }
    if v.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let x = v.rows(0, n).into_owned();
    let y_eq = v.rows(n, me).into_owned();
    let mut y_in = DVector::zeros(pb.a_in.nrows());
    for (a, &(i, _, sign)) in active.iter().enumerate() {
        let y = v[n + me + a];
        if sign * y < -settings.tol_dual {
            return None;
        }
        y_in[i] = if sign == 0.0 { y } else if sign * y < 0.0 { 0.0 } else { y };
    }
    let r = kkt_of(pb, &x, &y_eq, &y_in);
    if r.primal <= settings.tol_primal && r.dual <= settings.tol_dual && r.complementarity <= settings.tol_dual.max(settings.tol_primal) {
        Some(QpSolution {
            x,
            y_eq,
            y_in,
            status: QpStatus::Solved,
            primal_residual: r.primal,
            dual_residual: r.dual,
            iterations: sol.iterations,
            polished: true,
        })
    } else {
        None
    }
}
