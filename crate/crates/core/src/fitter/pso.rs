//! Global-best particle swarm optimization with inertia weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::FitConfig;
use crate::error::{Error, Result};

/// Minimum improvement of the global best that resets the stall counter.
pub const IMPROVEMENT_TOL: f64 = 1e-9;

/// Outcome of one swarm run.
#[derive(Debug, Clone, PartialEq)]
pub struct PsoOutcome {
    pub best: Vec<f64>,
    pub value: f64,
    /// Global best after initialization and after every iteration.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub iterations: usize,
    /// Stopped because the best stalled, not because the iteration cap was hit.
    pub converged: bool,
    /// Evaluations that returned a non-finite value.
    pub non_finite: usize,
}

fn validate_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::invalid("search space needs at least one dimension"));
    }
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "bounds for dimension {d} are invalid: [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// Maximize `objective` inside `bounds`.
///
/// `starts` are placed as the first particles (clamped to the bounds); the
/// rest of the swarm is drawn uniformly. Non-finite objective values count as
/// `-inf`. Evaluations run in parallel but the result depends only on the seed.
pub fn pso_maximize<F>(
    objective: F,
    bounds: &[(f64, f64)],
    starts: &[Vec<f64>],
    cfg: &FitConfig,
) -> Result<PsoOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    validate_bounds(bounds)?;
    let dim = bounds.len();
    if let Some(s) = starts.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: s.len(),
        });
    }
    let n = cfg.swarm_size.max(starts.len());
    let vmax: Vec<f64> = bounds
        .iter()
        .map(|(lo, hi)| cfg.velocity_fraction * (hi - lo))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(n);
    for s in starts {
        pos.push(
            s.iter()
                .zip(bounds)
                .map(|(&x, &(lo, hi))| x.clamp(lo, hi))
                .collect(),
        );
    }
    while pos.len() < n {
        pos.push(
            bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect(),
        );
    }
    let mut vel: Vec<Vec<f64>> = (0..n)
        .map(|_| vmax.iter().map(|&v| rng.random_range(-v..=v)).collect())
        .collect();

    let mut non_finite = 0;
    let mut evaluate = |pos: &[Vec<f64>]| -> Vec<f64> {
        let vals: Vec<f64> = pos.par_iter().map(|x| objective(x)).collect();
        vals.into_iter()
            .map(|v| {
                if v.is_finite() {
                    v
                } else {
                    non_finite += 1;
                    f64::NEG_INFINITY
                }
            })
            .collect()
    };

    let mut pbest_val = evaluate(&pos);
    let mut evaluations = n;
    let mut pbest = pos.clone();
    let mut g = argmax(&pbest_val);
    let mut gbest = pbest[g].clone();
    let mut gval = pbest_val[g];
    let mut trace = vec![gval];

    let mut stall = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        for p in 0..n {
            for d in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * vel[p][d]
                    + cfg.cognitive * r1 * (pbest[p][d] - pos[p][d])
                    + cfg.social * r2 * (gbest[d] - pos[p][d]);
                vel[p][d] = v.clamp(-vmax[d], vmax[d]);
                let x = pos[p][d] + vel[p][d];
                let (lo, hi) = bounds[d];
                if x < lo || x > hi {
                    pos[p][d] = x.clamp(lo, hi);
                    vel[p][d] = 0.0;
                } else {
                    pos[p][d] = x;
                }
            }
        }
        let vals = evaluate(&pos);
        evaluations += n;
        for p in 0..n {
            if vals[p] > pbest_val[p] {
                pbest_val[p] = vals[p];
                pbest[p].clone_from(&pos[p]);
            }
        }
        g = argmax(&pbest_val);
        let improved = pbest_val[g] > gval + IMPROVEMENT_TOL
            || (gval == f64::NEG_INFINITY && pbest_val[g] > gval);
        if pbest_val[g] > gval {
            gval = pbest_val[g];
            gbest.clone_from(&pbest[g]);
        }
        trace.push(gval);
        if improved {
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.stall_iters {
                converged = true;
                break;
            }
        }
    }

    Ok(PsoOutcome {
        best: gbest,
        value: gval,
        trace,
        evaluations,
        iterations,
        converged,
        non_finite,
    })
}

/// First index of the largest value.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        -x.iter().map(|v| v * v).sum::<f64>()
    }

    fn rosenbrock(x: &[f64]) -> f64 {
        -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
    }

    #[test]
    fn sphere_5d() {
        let cfg = FitConfig::default();
        let out = pso_maximize(sphere, &[(-5.0, 5.0); 5], &[], &cfg).unwrap();
        assert!(out.value > -1e-4, "{}", out.value);
        assert!(out.iterations <= 200);
        assert_eq!(out.trace.len(), out.iterations + 1);
        assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(out.value, sphere(&out.best));
    }

    #[test]
    fn rosenbrock_success_rate() {
        let ok = (0..20u64)
            .filter(|&seed| {
                let cfg = FitConfig {
                    seed,
                    ..FitConfig::default()
                };
                pso_maximize(rosenbrock, &[(-2.0, 2.0); 2], &[], &cfg)
                    .unwrap()
                    .value
                    > -1e-2
            })
            .count();
        assert!(ok >= 18, "{ok} of 20 runs succeeded");
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let cfg = FitConfig {
            seed: 42,
            ..FitConfig::default()
        };
        let a = pso_maximize(rosenbrock, &[(-2.0, 2.0); 2], &[], &cfg).unwrap();
        let b = pso_maximize(rosenbrock, &[(-2.0, 2.0); 2], &[], &cfg).unwrap();
        assert_eq!(a, b);
        let c = pso_maximize(
            rosenbrock,
            &[(-2.0, 2.0); 2],
            &[],
            &FitConfig { seed: 43, ..cfg },
        )
        .unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn non_finite_values_never_abort() {
        let f = |x: &[f64]| {
            if x[0] > 0.0 {
                f64::NAN
            } else {
                -(x[0] + 1.0).powi(2)
            }
        };
        let out = pso_maximize(f, &[(-3.0, 3.0)], &[], &FitConfig::default()).unwrap();
        assert!(out.non_finite > 0);
        assert!(out.value > -1e-6 && out.best[0] <= 0.0);
    }

    #[test]
    fn positions_stay_in_bounds() {
        let f = |x: &[f64]| {
            assert!(x.iter().all(|v| (0.5..=1.5).contains(v)));
            x.iter().sum()
        };
        let out = pso_maximize(f, &[(0.5, 1.5); 3], &[], &FitConfig::default()).unwrap();
        assert!((out.value - 4.5).abs() < 1e-9);
    }

    #[test]
    fn start_point_is_evaluated_first() {
        let out = pso_maximize(
            sphere,
            &[(-5.0, 5.0); 4],
            &[vec![0.0; 4]],
            &FitConfig {
                max_iters: 1,
                ..FitConfig::default()
            },
        )
        .unwrap();
        assert_eq!(out.trace[0], 0.0);
        assert_eq!(out.best, vec![0.0; 4]);
    }

    #[test]
    fn rejects_bad_bounds() {
        let cfg = FitConfig::default();
        assert!(pso_maximize(sphere, &[], &[], &cfg).is_err());
        assert!(pso_maximize(sphere, &[(1.0, 1.0)], &[], &cfg).is_err());
        assert!(pso_maximize(sphere, &[(0.0, f64::INFINITY)], &[], &cfg).is_err());
        assert!(pso_maximize(sphere, &[(0.0, 1.0)], &[vec![0.0, 0.0]], &cfg).is_err());
    }
}
