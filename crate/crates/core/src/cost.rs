//! Pathwise and Monte Carlo estimates of the expected cost
//! `J = E[ int f dt + g(X_T) ]`.

use serde::{Deserialize, Serialize};

use crate::control::FeedbackControl;
use crate::dynamics::{simulate_with, HybridModel, HybridPath, SimulationSetup};
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub seed: u64,
}

impl CostEstimate {
    /// Sample mean and `sd / sqrt(n)` of independent samples, summed in order.
    pub fn from_samples(samples: &[f64], seed: u64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::Usage(format!("need at least 2 samples, got {n}")));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let stderr = (var / n as f64).sqrt();
        if !(mean.is_finite() && stderr.is_finite()) {
            return Err(Error::Numerical(format!("non-finite estimate {mean} +- {stderr}")));
        }
        Ok(CostEstimate {
            mean,
            stderr,
            paths: n,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct McOptions {
    pub antithetic: bool,
    pub exec: Exec,
}

/// Left-point sum `sum_k f(t_k, X_k, i_k, mu_k, nu_k) dt + g(X_n)`.
pub fn pathwise_cost(model: &HybridModel, path: &HybridPath) -> Result<f64> {
    let mut total = running_cost(model, path)?;
    total += model.terminal_cost(path.final_state())?;
    finite(total)
}

/// Left-point running-cost sum alone.
pub fn running_cost(model: &HybridModel, path: &HybridPath) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..path.steps() {
        total += model.running_cost(path.time(k), path.state(k), path.regime(k), path.mu(k), path.nu(k))? * path.dt();
    }
    finite(total)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("non-finite cost {v}")))
    }
}

/// Estimates `E[functional(path)]` over `paths` independent streams.
/// Per-path values are collected in path order before reduction, so the
/// result does not depend on the execution policy.
pub fn monte_carlo<F>(
    model: &HybridModel,
    control: &FeedbackControl,
    setup: &SimulationSetup,
    paths: usize,
    seed: u64,
    options: McOptions,
    functional: F,
) -> Result<CostEstimate>
where
    F: Fn(&HybridPath) -> Result<f64> + Sync + Send,
{
    if paths < 2 {
        return Err(Error::Usage(format!("need at least 2 paths, got {paths}")));
    }
    if options.antithetic && paths % 2 == 1 {
        return Err(Error::Usage("antithetic sampling needs an even path count".into()));
    }
    let values = options.exec.map(paths, |p| {
        let (stream, mirror) = if options.antithetic { (p / 2, p % 2 == 1) } else { (p, false) };
        let path = simulate_with(model, control, setup, seed, stream, mirror)?;
        functional(&path).map_err(|e| Error::Simulation {
            path: p,
            step: path.steps(),
            completed: 0,
            message: e.to_string(),
        })
    });
    let completed = values.iter().filter(|v| v.is_ok()).count();
    let mut samples = Vec::with_capacity(paths);
    for v in values {
        match v {
            Ok(v) => samples.push(v),
            Err(Error::Simulation { path, step, message, .. }) => {
                return Err(Error::Simulation {
                    path,
                    step,
                    completed,
                    message,
                })
            }
            Err(e) => return Err(e),
        }
    }
    let mut estimate = if options.antithetic {
        let pairs: Vec<f64> = samples.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        CostEstimate::from_samples(&pairs, seed)?
    } else {
        CostEstimate::from_samples(&samples, seed)?
    };
    estimate.paths = paths;
    Ok(estimate)
}

/// Monte Carlo estimate of `J(s, x0, i0, control)`.
pub fn monte_carlo_cost(
    model: &HybridModel,
    control: &FeedbackControl,
    setup: &SimulationSetup,
    paths: usize,
    seed: u64,
    options: McOptions,
) -> Result<CostEstimate> {
    monte_carlo(model, control, setup, paths, seed, options, |p| pathwise_cost(model, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(json: &str) -> HybridModel {
        HybridModel::from_json(json).unwrap()
    }

    fn constant(m: &HybridModel) -> FeedbackControl {
        FeedbackControl::constant(m.default_measure(), m.default_measure())
    }

    fn base(f: &str, g: &str, sigma: &str) -> HybridModel {
        model(&format!(
            r#"{{"state_dim":1,"action_set":{{"lower":[0],"upper":[1]}},
                "drift":["0"],"diffusion":[["{sigma}"]],
                "running_cost":"{f}","terminal_cost":"{g}",
                "domain":{{"lower":[-20],"upper":[20]}}}}"#
        ))
    }

    #[test]
    fn pathwise_examples() {
        let setup = |dt| SimulationSetup::new(0.0, 1.0, dt, vec![0.0], 0);
        let m = base("1", "0", "0");
        let p = simulate_with(&m, &constant(&m), &setup(0.1), 0, 0, false).unwrap();
        assert!((pathwise_cost(&m, &p).unwrap() - 1.0).abs() < 1e-12);

        let m = base("0", "x1^2", "0");
        let p = simulate_with(
            &m,
            &constant(&m),
            &SimulationSetup::new(0.0, 1.0, 0.5, vec![2.0], 0),
            0,
            0,
            false,
        )
        .unwrap();
        assert_eq!(pathwise_cost(&m, &p).unwrap(), 4.0);

        let m = base("t", "0", "0");
        let p = simulate_with(&m, &constant(&m), &setup(0.25), 0, 0, false).unwrap();
        assert!((pathwise_cost(&m, &p).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn deterministic_path_has_zero_stderr() {
        let m = base("0", "x1", "0");
        let est = monte_carlo_cost(
            &m,
            &constant(&m),
            &SimulationSetup::new(0.0, 1.0, 0.1, vec![1.0], 0),
            10,
            7,
            McOptions::default(),
        )
        .unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.paths, 10);
    }

    #[test]
    fn brownian_second_moment() {
        let m = base("0", "x1^2", "1");
        let est = monte_carlo_cost(
            &m,
            &constant(&m),
            &SimulationSetup::new(0.0, 1.0, 0.01, vec![0.0], 0),
            4000,
            3,
            McOptions::default(),
        )
        .unwrap();
        assert!((est.mean - 1.0).abs() < 3.0 * est.stderr + 0.01, "{est:?}");
    }

    #[test]
    fn shifting_f_shifts_estimate() {
        let setup = SimulationSetup::new(0.0, 1.0, 0.05, vec![0.0], 0);
        let a = base("x1^2", "abs(x1)", "1");
        let b = base("x1^2 + 2.5", "abs(x1)", "1");
        let ea = monte_carlo_cost(&a, &constant(&a), &setup, 200, 9, McOptions::default()).unwrap();
        let eb = monte_carlo_cost(&b, &constant(&b), &setup, 200, 9, McOptions::default()).unwrap();
        assert!((eb.mean - ea.mean - 2.5).abs() < 1e-10);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let m = base("x1^2", "0", "1");
        let setup = SimulationSetup::new(0.0, 1.0, 0.05, vec![0.0], 0);
        let seq = McOptions {
            exec: Exec::Sequential,
            ..Default::default()
        };
        let a = monte_carlo_cost(&m, &constant(&m), &setup, 300, 1, seq).unwrap();
        let b = monte_carlo_cost(&m, &constant(&m), &setup, 300, 1, McOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn antithetic_pairs() {
        let m = base("0", "x1", "1");
        let setup = SimulationSetup::new(0.0, 1.0, 0.1, vec![0.0], 0);
        let opts = McOptions {
            antithetic: true,
            ..Default::default()
        };
        let est = monte_carlo_cost(&m, &constant(&m), &setup, 100, 1, opts).unwrap();
        assert!(est.mean.abs() < 1e-12);
        assert!(monte_carlo_cost(&m, &constant(&m), &setup, 101, 1, opts).is_err());
    }

    #[test]
    fn too_few_paths() {
        let m = base("0", "0", "0");
        let setup = SimulationSetup::new(0.0, 1.0, 0.1, vec![0.0], 0);
        assert!(monte_carlo_cost(&m, &constant(&m), &setup, 1, 1, McOptions::default()).is_err());
    }
}
