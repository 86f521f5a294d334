use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, MeasureRepr};

/// One simulated trajectory on a uniform step grid: states `X[0..=n]`,
/// regimes `[0..=n]`, the controls applied on each step and the Brownian
/// increments used.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPath {
    pub(crate) start: f64,
    pub(crate) dt: f64,
    pub(crate) dim: usize,
    pub(crate) states: Vec<f64>,
    pub(crate) regimes: Vec<usize>,
    pub(crate) mu: Vec<Arc<DiscreteMeasure>>,
    pub(crate) nu: Vec<Arc<DiscreteMeasure>>,
    pub(crate) increments: Vec<f64>,
}

impl HybridPath {
    pub(crate) fn begin(start: f64, dt: f64, x0: &[f64], i0: usize, steps: usize) -> Self {
        let dim = x0.len();
        let mut states = Vec::with_capacity((steps + 1) * dim);
        states.extend_from_slice(x0);
        let mut regimes = Vec::with_capacity(steps + 1);
        regimes.push(i0);
        HybridPath {
            start,
            dt,
            dim,
            states,
            regimes,
            mu: Vec::with_capacity(steps),
            nu: Vec::with_capacity(steps),
            increments: Vec::with_capacity(steps * dim),
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of completed steps `n`.
    pub fn steps(&self) -> usize {
        self.regimes.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn regime(&self, k: usize) -> usize {
        self.regimes[k]
    }

    pub fn regimes(&self) -> &[usize] {
        &self.regimes
    }

    pub fn mu(&self, k: usize) -> &DiscreteMeasure {
        &self.mu[k]
    }

    pub fn nu(&self, k: usize) -> &DiscreteMeasure {
        &self.nu[k]
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.steps())
    }

    pub fn final_regime(&self) -> usize {
        self.regime(self.steps())
    }

    /// Observed history up to and including step `k`.
    pub fn history(&self, k: usize) -> History<'_> {
        History {
            start: self.start,
            dt: self.dt,
            dim: self.dim,
            states: &self.states[..(k + 1) * self.dim],
            regimes: &self.regimes[..=k],
        }
    }

    /// `max_k |X_k|^p` along the path.
    pub fn sup_norm_pow(&self, p: i32) -> f64 {
        (0..=self.steps())
            .map(|k| {
                let r2: f64 = self.state(k).iter().map(|v| v * v).sum();
                r2.sqrt().powi(p)
            })
            .fold(0.0, f64::max)
    }

    pub fn to_record(&self, path_index: usize) -> PathRecord {
        PathRecord {
            path: path_index,
            start: self.start,
            dt: self.dt,
            times: (0..=self.steps()).map(|k| self.time(k)).collect(),
            states: (0..=self.steps()).map(|k| self.state(k).to_vec()).collect(),
            regimes: self.regimes.iter().map(|r| r + 1).collect(),
            mu: self.mu.iter().map(|m| m.to_repr()).collect(),
            nu: self.nu.iter().map(|m| m.to_repr()).collect(),
        }
    }

    /// Writes one CSV row per grid time: `path, t, X_1..X_d, regime, mu, nu`.
    /// The controls are empty on the final row.
    pub fn write_csv_rows<W: Write>(&self, out: &mut csv::Writer<W>, path_index: usize) -> Result<()> {
        for k in 0..=self.steps() {
            let mut row = Vec::with_capacity(self.dim + 5);
            row.push(path_index.to_string());
            row.push(self.time(k).to_string());
            row.extend(self.state(k).iter().map(|v| v.to_string()));
            row.push((self.regimes[k] + 1).to_string());
            if k < self.steps() {
                row.push(serde_json::to_string(&self.mu[k].to_repr())?);
                row.push(serde_json::to_string(&self.nu[k].to_repr())?);
            } else {
                row.push(String::new());
                row.push(String::new());
            }
            out.write_record(&row).map_err(csv_error)?;
        }
        Ok(())
    }
}

pub fn csv_header(dim: usize) -> Vec<String> {
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|k| format!("X_{k}")));
    header.extend(["regime", "mu", "nu"].map(String::from));
    header
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Usage(format!("csv: {other:?}")),
    }
}

/// JSON export form of a path. Regimes are 1-based.
#[derive(Debug, Clone, Serialize)]
pub struct PathRecord {
    pub path: usize,
    pub start: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub regimes: Vec<usize>,
    pub mu: Vec<MeasureRepr>,
    pub nu: Vec<MeasureRepr>,
}

/// Read-only prefix of a trajectory as seen by a feedback control.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub start: f64,
    pub dt: f64,
    pub dim: usize,
    pub states: &'a [f64],
    pub regimes: &'a [usize],
}

impl<'a> History<'a> {
    pub fn len(&self) -> usize {
        self.regimes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regimes.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.start + (self.len() - 1) as f64 * self.dt
    }

    pub fn state(&self, k: usize) -> &'a [f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn regime(&self, k: usize) -> usize {
        self.regimes[k]
    }

    /// Grid index of time `t`, provided the history covers it.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::Usage("empty history".into()));
        }
        let tol = 1e-9 * self.dt.max(1.0);
        if t < self.start - tol {
            return Err(Error::Usage(format!("time {t} precedes history start {}", self.start)));
        }
        if t > self.end_time() + tol {
            return Err(Error::Usage(format!(
                "history ends at {} but control queried at {t}",
                self.end_time()
            )));
        }
        let k = ((t - self.start) / self.dt + 1e-9).floor() as usize;
        Ok(k.min(self.len() - 1))
    }

    /// A single-point history at `(t, x, i)`.
    pub fn point(t: f64, x: &'a [f64], regime: &'a [usize]) -> Self {
        History {
            start: t,
            dt: 1.0,
            dim: x.len(),
            states: x,
            regimes: regime,
        }
    }
}
