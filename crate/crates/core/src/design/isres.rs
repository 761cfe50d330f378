//! Improved stochastic-ranking evolution strategy (ISRES) for box-bounded problems
//! with an optional constraint-violation measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsresSettings {
    /// Parents kept per generation.
    pub mu: usize,
    /// Offspring per generation.
    pub lambda: usize,
    /// Total objective evaluations.
    pub max_evaluations: usize,
    /// Probability of ranking by objective when constraints disagree.
    pub pf: f64,
    /// Differential-variation step.
    pub gamma: f64,
    /// Exponential smoothing of the step sizes.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for IsresSettings {
    fn default() -> Self {
        Self { mu: 15, lambda: 105, max_evaluations: 20_000, pf: 0.45, gamma: 0.85, alpha: 0.2, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsresOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Clone)]
struct Member {
    x: Vec<f64>,
    sigma: Vec<f64>,
    value: f64,
    violation: f64,
}

/// Stochastic ranking: a bubble sort where neighbours are compared by objective when
/// both are feasible or with probability `pf`, and by violation otherwise.
fn stochastic_rank(pop: &mut [Member], pf: f64, rng: &mut ChaCha8Rng) {
    let n = pop.len();
    for _ in 0..n {
        let mut swapped = false;
        for j in 0..n.saturating_sub(1) {
            let u: f64 = rng.random();
            let (a, b) = (&pop[j], &pop[j + 1]);
            let by_value = (a.violation == 0.0 && b.violation == 0.0) || u < pf;
            let worse = if by_value { a.value > b.value } else { a.violation > b.violation };
            if worse {
                pop.swap(j, j + 1);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
}

/// Minimises `f` over the box `[lower, upper]`. `f` returns `(value, violation)` with
/// `violation ≥ 0`, zero meaning feasible. `seeds` are evaluated first as part of the
/// initial population. Returns the best feasible point seen.
pub fn minimize<F>(
    f: F,
    lower: &[f64],
    upper: &[f64],
    seeds: &[Vec<f64>],
    settings: &IsresSettings,
) -> Result<IsresOutcome>
where
    F: Fn(&[f64]) -> (f64, f64),
{
    let n = lower.len();
    if n == 0 || upper.len() != n || lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::Optimizer("empty or inconsistent bounds".into()));
    }
    let IsresSettings { mu, lambda, max_evaluations, pf, gamma, alpha, seed } = *settings;
    if mu == 0 || lambda < mu {
        return Err(Error::Optimizer(format!("need 0 < mu <= lambda, got mu={mu}, lambda={lambda}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 1.0 / (2.0 * (n as f64).sqrt()).sqrt();
    let tau_prime = 1.0 / (2.0 * n as f64).sqrt();
    let sigma0: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| (u - l) / (n as f64).sqrt()).collect();

    let mut evaluations = 0usize;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluate = |x: Vec<f64>, sigma: Vec<f64>, evaluations: &mut usize| {
        let (value, violation) = f(&x);
        *evaluations += 1;
        let violation = if violation.is_nan() { f64::INFINITY } else { violation.max(0.0) };
        let value = if value.is_nan() { f64::INFINITY } else { value };
        if violation == 0.0 && best.as_ref().map_or(true, |b| value < b.1) {
            best = Some((x.clone(), value));
        }
        Member { x, sigma, value, violation }
    };

    let mut pop: Vec<Member> = Vec::with_capacity(lambda);
    for s in seeds.iter().take(lambda) {
        let x: Vec<f64> = s.iter().zip(lower.iter().zip(upper)).map(|(v, (l, u))| v.clamp(*l, *u)).collect();
        pop.push(evaluate(x, sigma0.clone(), &mut evaluations));
    }
    while pop.len() < lambda && evaluations < max_evaluations {
        let x = (0..n).map(|j| rng.random_range(lower[j]..=upper[j])).collect();
        pop.push(evaluate(x, sigma0.clone(), &mut evaluations));
    }

    while evaluations < max_evaluations {
        stochastic_rank(&mut pop, pf, &mut rng);
        let parents: Vec<Member> = pop[..mu.min(pop.len())].to_vec();
        let mut offspring = Vec::with_capacity(lambda);
        for k in 0..lambda {
            if evaluations >= max_evaluations {
                break;
            }
            let i = k % parents.len();
            let parent = &parents[i];
            let mut x = parent.x.clone();
            let mut sigma = parent.sigma.clone();
            let mut differential = false;
            if k + 1 < parents.len() {
                // differential variation towards the best parent
                let trial: Vec<f64> = (0..n)
                    .map(|j| x[j] + gamma * (parents[0].x[j] - parents[i + 1].x[j]))
                    .collect();
                if trial.iter().enumerate().all(|(j, v)| *v >= lower[j] && *v <= upper[j]) {
                    x = trial;
                    differential = true;
                }
            }
            if !differential {
                let global: f64 = rng.sample::<f64, _>(StandardNormal);
                let new_sigma: Vec<f64> = (0..n)
                    .map(|j| {
                        let local: f64 = rng.sample(StandardNormal);
                        (sigma[j] * (tau_prime * global + tau * local).exp()).min(sigma0[j])
                    })
                    .collect();
                for j in 0..n {
                    let mut candidate = f64::NAN;
                    for _ in 0..10 {
                        let z: f64 = rng.sample(StandardNormal);
                        let c = parent.x[j] + new_sigma[j] * z;
                        if c >= lower[j] && c <= upper[j] {
                            candidate = c;
                            break;
                        }
                    }
                    x[j] = if candidate.is_nan() { parent.x[j] } else { candidate };
                }
                for j in 0..n {
                    sigma[j] += alpha * (new_sigma[j] - sigma[j]);
                }
            }
            offspring.push(evaluate(x, sigma, &mut evaluations));
        }
        if offspring.len() < mu {
            break;
        }
        pop = offspring;
    }

    let (x, value) = best.ok_or_else(|| {
        Error::Optimizer(format!("no feasible point found in {evaluations} evaluations"))
    })?;
    Ok(IsresOutcome { x, value, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_converges() {
        let c = [0.3, -0.7, 1.2];
        let out = minimize(
            |x| ((0..3).map(|j| (x[j] - c[j]).powi(2)).sum(), 0.0),
            &[-2.0; 3],
            &[2.0; 3],
            &[],
            &IsresSettings::default(),
        )
        .unwrap();
        for j in 0..3 {
            assert!((out.x[j] - c[j]).abs() < 1e-3, "{:?}", out.x);
        }
        assert_eq!(out.evaluations, 20_000);
    }

    #[test]
    fn constrained_optimum_on_boundary() {
        // minimise x+y subject to x^2 + y^2 <= 1
        let out = minimize(
            |x| (x[0] + x[1], (x[0] * x[0] + x[1] * x[1] - 1.0).max(0.0)),
            &[-2.0; 2],
            &[2.0; 2],
            &[],
            &IsresSettings { max_evaluations: 10_000, seed: 7, ..Default::default() },
        )
        .unwrap();
        assert!((out.value + 2f64.sqrt()).abs() < 1e-3, "{}", out.value);
    }

    #[test]
    fn infeasible_everywhere_errors() {
        let err = minimize(|_| (0.0, 1.0), &[0.0], &[1.0], &[], &IsresSettings { max_evaluations: 300, ..Default::default() });
        assert!(matches!(err, Err(Error::Optimizer(_))));
    }

    #[test]
    fn same_seed_same_result() {
        let f = |x: &[f64]| ((x[0] - 0.1).powi(2) + (x[1] * 3.0).sin(), 0.0);
        let s = IsresSettings { max_evaluations: 2000, seed: 42, ..Default::default() };
        let a = minimize(f, &[-1.0; 2], &[1.0; 2], &[], &s).unwrap();
        let b = minimize(f, &[-1.0; 2], &[1.0; 2], &[], &s).unwrap();
        assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn seed_point_is_never_beaten_by_worse() {
        let out = minimize(|x| (x[0].abs(), 0.0), &[-1.0], &[1.0], &[vec![0.0]], &IsresSettings { max_evaluations: 200, ..Default::default() }).unwrap();
        assert_eq!(out.value, 0.0);
    }
}
