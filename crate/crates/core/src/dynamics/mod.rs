//! Euler–Maruyama integration of the controlled state equation coupled to
//! frozen-generator regime switching.

mod model;
mod path;
mod validate;

pub use model::{Constants, Domain, HybridModel, ModelConfig, PerRegime, StartPoint, StartPointConfig};
pub use path::{csv_header, History, HybridPath, PathRecord};
pub(crate) use path::csv_error;
pub use validate::{validate_model, HypothesisCheck, ValidationReport};

use crate::control::FeedbackControl;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::rng::{PathStream, StreamRole};
use crate::switching::pick_regime;

/// One explicit step `x + b(x, i, mu) dt + sigma(x, i, mu) dW`, clamped to
/// the truncation box when the model asks for it.
pub fn em_step(
    model: &HybridModel,
    x: &[f64],
    i: usize,
    mu: &DiscreteMeasure,
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    let d = model.state_dim();
    if x.len() != d || dw.len() != d {
        return Err(Error::Usage(format!(
            "state and increment must have {d} coordinates"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Usage(format!("step size must be positive, got {dt}")));
    }
    let b = model.drift(x, i, mu)?;
    let sigma = model.diffusion(x, i, mu)?;
    let mut next: Vec<f64> = (0..d)
        .map(|r| {
            let noise: f64 = (0..d).map(|c| sigma[r * d + c] * dw[c]).sum();
            x[r] + b[r] * dt + noise
        })
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite state {next:?} after step from {x:?}")));
    }
    if model.domain().clamp {
        model.domain().clamp_point(&mut next);
    }
    Ok(next)
}

/// Time window and initial condition of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub start: f64,
    pub end: f64,
    pub dt: f64,
    pub x0: Vec<f64>,
    /// 0-based regime.
    pub i0: usize,
}

impl SimulationSetup {
    pub fn new(start: f64, end: f64, dt: f64, x0: Vec<f64>, i0: usize) -> Self {
        SimulationSetup { start, end, dt, x0, i0 }
    }

    /// Number of steps and the exact step size `(end - start) / n`.
    pub fn grid(&self) -> Result<(usize, f64)> {
        let span = self.end - self.start;
        if !(span > 0.0 && self.dt > 0.0 && span.is_finite()) {
            return Err(Error::Usage(format!(
                "need start < end and dt > 0, got [{}, {}] with dt {}",
                self.start, self.end, self.dt
            )));
        }
        let raw = span / self.dt;
        let steps = raw.round();
        if steps < 1.0 || (raw - steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Usage(format!(
                "horizon {span} is not an integer multiple of dt {}",
                self.dt
            )));
        }
        let steps = steps as usize;
        Ok((steps, span / steps as f64))
    }
}

/// Simulates path number `path` of the stream family keyed by `seed`.
pub fn simulate(
    model: &HybridModel,
    control: &FeedbackControl,
    setup: &SimulationSetup,
    seed: u64,
    path: usize,
) -> Result<HybridPath> {
    simulate_with(model, control, setup, seed, path, false)
}

/// As [`simulate`]; `antithetic` negates every Brownian increment while
/// keeping the switching draws, pairing the path with its mirror.
pub fn simulate_with(
    model: &HybridModel,
    control: &FeedbackControl,
    setup: &SimulationSetup,
    seed: u64,
    path: usize,
    antithetic: bool,
) -> Result<HybridPath> {
    let (steps, dt) = setup.grid()?;
    let d = model.state_dim();
    if setup.x0.len() != d {
        return Err(Error::Usage(format!("initial state needs {d} coordinates")));
    }
    if setup.i0 >= model.regimes() {
        return Err(Error::Usage(format!("initial regime {} out of range", setup.i0 + 1)));
    }
    model.rates().check_step(dt)?;

    let mut x0 = setup.x0.clone();
    if model.domain().clamp {
        model.domain().clamp_point(&mut x0);
    }
    let mut out = HybridPath::begin(setup.start, dt, &x0, setup.i0, steps);
    let mut brownian = PathStream::new(seed, path as u64, StreamRole::Brownian);
    let mut switching = PathStream::new(seed, path as u64, StreamRole::Switching);
    let sqrt_dt = dt.sqrt();
    let sign = if antithetic { -1.0 } else { 1.0 };
    let mut dw = vec![0.0; d];

    let fail = |step: usize, e: Error| Error::Simulation {
        path,
        step,
        completed: 0,
        message: e.to_string(),
    };

    for k in 0..steps {
        let t = out.time(k);
        let (mu, nu) = control.evaluate(t, &out.history(k)).map_err(|e| fail(k, e))?;
        for w in dw.iter_mut() {
            *w = sign * sqrt_dt * brownian.normal();
        }
        let u = switching.uniform();
        let x = out.state(k).to_vec();
        let i = out.regime(k);
        let next = em_step(model, &x, i, &mu, dt, &dw).map_err(|e| fail(k, e))?;
        if !model.domain().clamp && !model.domain().contains(&next) {
            return Err(fail(
                k,
                Error::Numerical(format!("state {next:?} left the truncation box")),
            ));
        }
        let next_regime = if model.regimes() > 1 {
            let generator = model.rates().generator(&x, &nu).map_err(|e| fail(k, e))?;
            pick_regime(&generator.transition_row(i, dt), i, u)
        } else {
            i
        };
        out.states.extend_from_slice(&next);
        out.regimes.push(next_regime);
        out.increments.extend_from_slice(&dw);
        out.mu.push(mu);
        out.nu.push(nu);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn model(json: &str) -> HybridModel {
        HybridModel::from_json(json).unwrap()
    }

    fn brownian() -> HybridModel {
        model(
            r#"{"state_dim":1,"action_set":{"lower":[0],"upper":[5]},
                "drift":["mu_m(1,0)"],"diffusion":[["1"]],
                "running_cost":"0","terminal_cost":"0",
                "domain":{"lower":[-10],"upper":[10]}}"#,
        )
    }

    #[test]
    fn em_step_examples() {
        let m = brownian();
        let d0 = m.dirac(&[0.0]).unwrap();
        assert_eq!(em_step(&m, &[0.0], 0, &d0, 0.1, &[0.3]).unwrap(), vec![0.3]);
        let d2 = m.dirac(&[2.0]).unwrap();
        let x = em_step(&m, &[0.0], 0, &d2, 0.1, &[0.0]).unwrap();
        assert!((x[0] - 0.2).abs() < 1e-15);

        let ou = model(
            r#"{"state_dim":1,"action_set":{"lower":[0],"upper":[1]},
                "drift":["-x1"],"diffusion":[["0"]],
                "running_cost":"0","terminal_cost":"0",
                "domain":{"lower":[-10],"upper":[10]}}"#,
        );
        let x = em_step(&ou, &[1.0], 0, &ou.default_measure(), 0.1, &[0.0]).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn em_step_clamps_and_rejects_blowup() {
        let m = brownian();
        let d0 = m.dirac(&[0.0]).unwrap();
        assert_eq!(em_step(&m, &[9.9], 0, &d0, 0.1, &[1.0]).unwrap(), vec![10.0]);
        let blow = model(
            r#"{"state_dim":1,"action_set":{"lower":[0],"upper":[1]},
                "drift":["exp(x1 * 1000)"],"diffusion":[["0"]],
                "running_cost":"0","terminal_cost":"0",
                "domain":{"lower":[-10],"upper":[10]}}"#,
        );
        assert!(em_step(&blow, &[5.0], 0, &blow.default_measure(), 0.1, &[0.0]).is_err());
    }

    #[test]
    fn setup_grid_checks() {
        let s = SimulationSetup::new(0.0, 1.0, 0.1, vec![0.0], 0);
        let (n, dt) = s.grid().unwrap();
        assert_eq!(n, 10);
        assert!((n as f64 * dt - 1.0).abs() < 1e-12);
        assert!(SimulationSetup::new(0.0, 1.0, 0.3, vec![0.0], 0).grid().is_err());
        assert!(SimulationSetup::new(1.0, 1.0, 0.1, vec![0.0], 0).grid().is_err());
    }

    #[test]
    fn frozen_model_gives_constant_path() {
        let m = model(
            r#"{"state_dim":1,"action_set":{"lower":[0],"upper":[1]},
                "drift":["0"],"diffusion":[["0"]],
                "running_cost":"0","terminal_cost":"0",
                "domain":{"lower":[-10],"upper":[10]}}"#,
        );
        let c = FeedbackControl::constant(m.default_measure(), m.default_measure());
        let p = simulate(&m, &c, &SimulationSetup::new(0.0, 1.0, 0.05, vec![1.5], 0), 3, 0).unwrap();
        assert_eq!(p.steps(), 20);
        assert!((0..=20).all(|k| p.state(k) == [1.5] && p.regime(k) == 0));
    }

    #[test]
    fn simulation_is_reproducible() {
        let m = brownian();
        let c = FeedbackControl::constant(m.dirac(&[0.0]).unwrap(), m.dirac(&[0.0]).unwrap());
        let setup = SimulationSetup::new(0.0, 1.0, 0.01, vec![0.0], 0);
        let a = simulate(&m, &c, &setup, 11, 5).unwrap();
        let b = simulate(&m, &c, &setup, 11, 5).unwrap();
        let other = simulate(&m, &c, &setup, 11, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.final_state(), other.final_state());
        let anti = simulate_with(&m, &c, &setup, 11, 5, true).unwrap();
        assert_eq!(anti.final_state()[0], -a.final_state()[0]);
    }

    #[test]
    fn unclamped_exit_is_a_simulation_error() {
        let mut m = brownian();
        m.set_clamp(false);
        let c = FeedbackControl::constant(m.dirac(&[5.0]).unwrap(), m.dirac(&[0.0]).unwrap());
        let err = simulate(&m, &c, &SimulationSetup::new(0.0, 4.0, 0.01, vec![0.0], 0), 1, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Simulation { .. }));
        assert_eq!(err.exit_code(), 4);
    }
}
