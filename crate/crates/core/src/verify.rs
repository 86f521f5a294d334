//! Brute-force oracles and the verification battery: solver-vs-enumeration
//! identity, dynamic-programming consistency, minimizing sequences and
//! moment bounds.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::control::{ControlConfig, FeedbackControl};
use crate::cost::{monte_carlo, monte_carlo_cost, running_cost, CostEstimate, McOptions};
use crate::dynamics::{HybridModel, SimulationSetup, StartPoint, StartPointConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::measure::DiscreteMeasure;
use crate::solver::{solve, CandidateSpec, GridSpec, Operator, SpaceGrid, ValueGrid};

pub const MAX_LATTICE_NODES: usize = 31;
pub const MAX_LATTICE_REGIMES: usize = 3;
pub const MAX_LATTICE_STEPS: usize = 5;
pub const MAX_LATTICE_PAIRS: usize = 4;
/// Largest policy count for which full enumeration is also run.
pub const FULL_ENUMERATION_LIMIT: u64 = 100_000;

/// Fully discretized desk-scale problem with an explicit per-step kernel
/// over `(node, regime)` cells.
#[derive(Debug, Clone)]
pub struct LatticeProblem {
    pub nodes: usize,
    pub regimes: usize,
    pub steps: usize,
    pub pairs: usize,
    /// `((cell * pairs + p) * cells + cell')`.
    kernel: Vec<f64>,
    /// `f * dt` at `((k * cells + cell) * pairs + p)`.
    stage_cost: Vec<f64>,
    terminal: Vec<f64>,
}

impl LatticeProblem {
    pub fn from_model(
        model: &HybridModel,
        spec: &GridSpec,
        mu: &[Arc<DiscreteMeasure>],
        nu: &[Arc<DiscreteMeasure>],
    ) -> Result<Self> {
        let pairs = mu.len() * nu.len();
        if model.state_dim() != 1
            || spec.space_nodes > MAX_LATTICE_NODES
            || model.regimes() > MAX_LATTICE_REGIMES
            || spec.time_steps > MAX_LATTICE_STEPS
            || pairs > MAX_LATTICE_PAIRS
        {
            return Err(Error::Capacity(format!(
                "lattice problems need d = 1, <= {MAX_LATTICE_NODES} nodes, <= {MAX_LATTICE_REGIMES} regimes, \
                 <= {MAX_LATTICE_STEPS} steps and <= {MAX_LATTICE_PAIRS} pairs"
            )));
        }
        let op = Operator::build(model, spec, mu, nu, Exec::Sequential)?;
        let nodes = op.space.len();
        let r = op.regimes;
        let cells = nodes * r;
        let mut kernel = vec![0.0; cells * pairs * cells];
        for node in 0..nodes {
            for i in 0..r {
                let cell = node * r + i;
                for m in 0..mu.len() {
                    for n in 0..nu.len() {
                        let p = m * nu.len() + n;
                        let row = &mut kernel[(cell * pairs + p) * cells..(cell * pairs + p + 1) * cells];
                        let probs = op.transition_row(node, n, i);
                        for (target, w) in op.stencil(node, i, m) {
                            for (j, pj) in probs.iter().enumerate() {
                                row[*target as usize * r + j] += w * pj;
                            }
                        }
                        let total: f64 = row.iter().sum();
                        if (total - 1.0).abs() > 1e-12 {
                            return Err(Error::Numerical(format!("kernel row sums to {total}")));
                        }
                    }
                }
            }
        }
        let mut stage_cost = Vec::with_capacity(spec.time_steps * cells * pairs);
        for k in 0..spec.time_steps {
            for node in 0..nodes {
                for i in 0..r {
                    for m in 0..mu.len() {
                        for n in 0..nu.len() {
                            stage_cost.push(op.running_cost(k, node, i, m, n)? * op.dt);
                        }
                    }
                }
            }
        }
        let mut terminal = Vec::with_capacity(cells);
        for node in 0..nodes {
            let g = model.terminal_cost(&op.space.node(node))?;
            terminal.extend(std::iter::repeat_n(g, r));
        }
        Ok(LatticeProblem {
            nodes,
            regimes: r,
            steps: spec.time_steps,
            pairs,
            kernel,
            stage_cost,
            terminal,
        })
    }

    pub fn cells(&self) -> usize {
        self.nodes * self.regimes
    }

    pub fn kernel_row(&self, cell: usize, pair: usize) -> &[f64] {
        let c = self.cells();
        &self.kernel[(cell * self.pairs + pair) * c..(cell * self.pairs + pair + 1) * c]
    }

    fn stage(&self, k: usize, cell: usize, pair: usize) -> f64 {
        self.stage_cost[(k * self.cells() + cell) * self.pairs + pair]
    }

    fn backup(&self, k: usize, cell: usize, pair: usize, next: &[f64]) -> f64 {
        self.stage(k, cell, pair) + self.kernel_row(cell, pair).iter().zip(next).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Number of Markov policies, saturating at `u64::MAX`.
    pub fn policy_count(&self) -> u64 {
        let exponent = (self.steps * self.cells()) as u32;
        (self.pairs as u64).checked_pow(exponent).unwrap_or(u64::MAX)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedValue {
    /// `values[k * cells + node * regimes + i]`, `k = 0..=steps`.
    pub values: Vec<f64>,
    pub policies_enumerated: Option<u64>,
    /// Largest gap between per-cell minimization and full enumeration.
    pub enumeration_gap: f64,
}

/// Exact value table of a lattice problem by per-cell exhaustive
/// minimization, cross-checked by full policy enumeration when feasible.
pub fn enumerate_value(problem: &LatticeProblem) -> Result<EnumeratedValue> {
    let cells = problem.cells();
    let steps = problem.steps;
    let mut values = vec![0.0; (steps + 1) * cells];
    values[steps * cells..].copy_from_slice(&problem.terminal);
    for k in (0..steps).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * cells);
        let next = &tail[..cells];
        for cell in 0..cells {
            head[k * cells + cell] = (0..problem.pairs)
                .map(|p| problem.backup(k, cell, p, next))
                .fold(f64::INFINITY, f64::min);
        }
    }

    let count = problem.policy_count();
    if count > FULL_ENUMERATION_LIMIT {
        return Ok(EnumeratedValue {
            values,
            policies_enumerated: None,
            enumeration_gap: 0.0,
        });
    }
    let slots = steps * cells;
    let mut best = vec![f64::INFINITY; (steps + 1) * cells];
    best[steps * cells..].copy_from_slice(&problem.terminal);
    let mut choice = vec![0usize; slots];
    let mut eval = vec![0.0; (steps + 1) * cells];
    eval[steps * cells..].copy_from_slice(&problem.terminal);
    for code in 0..count {
        let mut c = code;
        for slot in choice.iter_mut() {
            *slot = (c % problem.pairs as u64) as usize;
            c /= problem.pairs as u64;
        }
        for k in (0..steps).rev() {
            let (head, tail) = eval.split_at_mut((k + 1) * cells);
            let next = &tail[..cells];
            for cell in 0..cells {
                let v = problem.backup(k, cell, choice[k * cells + cell], next);
                head[k * cells + cell] = v;
                best[k * cells + cell] = best[k * cells + cell].min(v);
            }
        }
    }
    let gap = values
        .iter()
        .zip(&best)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(EnumeratedValue {
        values,
        policies_enumerated: Some(count),
        enumeration_gap: gap,
    })
}

/// Machine-readable outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub kind: String,
    pub pass: bool,
    /// `tolerance - observed discrepancy`; negative on failure.
    pub margin: f64,
    pub tolerance: f64,
    pub details: serde_json::Value,
}

/// First-order discretization tolerance `2 (sup|f| + Lip(g)) (dt + dx)`,
/// with `sup|f|` over grid nodes, regimes, candidate pairs and grid times
/// and `Lip(g)` over adjacent nodes.
pub fn tol_disc(
    model: &HybridModel,
    spec: &GridSpec,
    mu: &[Arc<DiscreteMeasure>],
    nu: &[Arc<DiscreteMeasure>],
) -> Result<f64> {
    let space = SpaceGrid::for_model(model, spec.space_nodes);
    let dt = model.horizon() / spec.time_steps as f64;
    let mut sup_f = 0.0f64;
    let mut lip_g = 0.0f64;
    for node in 0..space.len() {
        let x = space.node(node);
        for k in 0..spec.time_steps {
            for i in 0..model.regimes() {
                for m in mu {
                    for n in nu {
                        sup_f = sup_f.max(model.running_cost(k as f64 * dt, &x, i, m, n)?.abs());
                    }
                }
            }
        }
        let g = model.terminal_cost(&x)?;
        for c in 0..space.dim() {
            if let Some(nb) = space.neighbour(node, c) {
                let gn = model.terminal_cost(&space.node(nb))?;
                lip_g = lip_g.max((g - gn).abs() / space.spacing(c));
            }
        }
    }
    Ok(2.0 * (sup_f + lip_g) * (dt + space.max_spacing()))
}

/// Solver-versus-oracle identity on a lattice problem.
pub fn check_solver_oracle(
    name: &str,
    model: &HybridModel,
    spec: &GridSpec,
    mu: &[Arc<DiscreteMeasure>],
    nu: &[Arc<DiscreteMeasure>],
    tolerance: f64,
    exec: Exec,
) -> Result<CheckReport> {
    let problem = LatticeProblem::from_model(model, spec, mu, nu)?;
    let oracle = enumerate_value(&problem)?;
    let grid = solve(model, spec, mu, nu, exec)?;
    let gap = grid
        .values
        .iter()
        .zip(&oracle.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let worst = gap.max(oracle.enumeration_gap);
    Ok(CheckReport {
        name: name.to_string(),
        kind: "solver_oracle".into(),
        pass: worst <= tolerance,
        margin: tolerance - worst,
        tolerance,
        details: json!({
            "max_abs_gap": gap,
            "enumeration_gap": oracle.enumeration_gap,
            "policies_enumerated": oracle.policies_enumerated,
            "cells": problem.cells(),
        }),
    })
}

fn setup_to(grid: &ValueGrid, k: usize, start: &StartPoint) -> SimulationSetup {
    SimulationSetup::new(0.0, k as f64 * grid.dt(), grid.dt(), start.x.clone(), start.regime)
}

/// One-step residuals at every grid time plus the simulation-side identity
/// `V(0, x0, i0) = E[ int_0^{t_k} f dt + V(t_k, X, Lambda) ]` under the
/// extracted policy.
#[allow(clippy::too_many_arguments)]
pub fn check_dpp(
    name: &str,
    model: &HybridModel,
    grid: &ValueGrid,
    intermediate_k: usize,
    start: &StartPoint,
    paths: usize,
    seed: u64,
    tolerance: Option<f64>,
    exec: Exec,
) -> Result<CheckReport> {
    let steps = grid.spec.time_steps;
    if intermediate_k == 0 || intermediate_k > steps {
        return Err(Error::Usage(format!("intermediate_k must be in 1..={steps}")));
    }
    let mut one_step = 0.0f64;
    for k in 0..steps {
        let r = grid.dpp_residual(model, k, k + 1, exec)?;
        one_step = one_step.max(r.residual).max(r.chain_vs_grid);
    }
    let block = grid.dpp_residual(model, 0, intermediate_k, exec)?;

    let policy = grid.extract_policy();
    let setup = setup_to(grid, intermediate_k, start);
    let est = monte_carlo(model, &policy, &setup, paths, seed, McOptions { exec, ..Default::default() }, |p| {
        Ok(running_cost(model, p)? + grid.value_at(intermediate_k, p.final_state(), p.final_regime()))
    })?;
    let v0 = grid.value_at(0, &start.x, start.regime);
    let disc = tol_disc(model, &grid.spec, &grid.mu, &grid.nu)?;
    let tolerance = tolerance.unwrap_or(3.0 * est.stderr + disc);
    let diff = (v0 - est.mean).abs();
    Ok(CheckReport {
        name: name.to_string(),
        kind: "dpp".into(),
        pass: one_step == 0.0 && diff <= tolerance,
        margin: tolerance - diff,
        tolerance,
        details: json!({
            "one_step_residual": one_step,
            "block_residual": block.residual,
            "intermediate_k": intermediate_k,
            "value": v0,
            "simulated": est,
            "tol_disc": disc,
        }),
    })
}

/// Costs of a declared control sequence against the grid value and the
/// extracted policy, all with the same seed schedule.
#[allow(clippy::too_many_arguments)]
pub fn check_minimizing_sequence(
    name: &str,
    model: &HybridModel,
    grid: &ValueGrid,
    sequence: &[FeedbackControl],
    start: &StartPoint,
    paths: usize,
    seed: u64,
    tolerance: Option<f64>,
    exec: Exec,
) -> Result<CheckReport> {
    let setup = setup_to(grid, grid.spec.time_steps, start);
    let opts = McOptions { exec, ..Default::default() };
    let policy = monte_carlo_cost(model, &grid.extract_policy(), &setup, paths, seed, opts)?;
    let costs: Vec<CostEstimate> = sequence
        .iter()
        .map(|c| monte_carlo_cost(model, c, &setup, paths, seed, opts))
        .collect::<Result<_>>()?;
    let v0 = grid.value_at(0, &start.x, start.regime);
    let disc = match tolerance {
        Some(t) => t,
        None => tol_disc(model, &grid.spec, &grid.mu, &grid.nu)?,
    };
    let mut margin = f64::INFINITY;
    for c in &costs {
        // never below the value function
        margin = margin.min(c.mean - (v0 - 3.0 * c.stderr - disc));
        // the extracted policy is at least as good
        let spread = 3.0 * (c.stderr.powi(2) + policy.stderr.powi(2)).sqrt();
        margin = margin.min(c.mean + spread - policy.mean);
    }
    margin = margin.min(policy.mean - (v0 - 3.0 * policy.stderr - disc));
    let mut sorted: Vec<f64> = costs.iter().map(|c| c.mean).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(CheckReport {
        name: name.to_string(),
        kind: "minimizing_sequence".into(),
        pass: margin >= 0.0,
        margin,
        tolerance: disc,
        details: json!({
            "value": v0,
            "policy": policy,
            "sequence": costs,
            "sorted_means": sorted,
        }),
    })
}

/// Gronwall bound on `E[sup_t |X_t|^p]` for `|b| + ||sigma|| <= L (1 + |x|)`
/// on `[0, T]`, `p` in `{2, 4}`:
/// `(3^{p-1} |x0|^p + A T) e^{A T}` with
/// `A = 3^{p-1} 2^{p-1} L^p (T^{p-1} + C_p T^{(p-2)/2})`, `C_2 = 4`,
/// `C_4 = (4/3)^4 * 36`.
pub fn gronwall_bound(linear_growth: f64, horizon: f64, x0_norm: f64, p: u32) -> Result<f64> {
    let c_p = match p {
        2 => 4.0,
        4 => (4.0f64 / 3.0).powi(4) * 36.0,
        _ => return Err(Error::Usage(format!("moment order must be 2 or 4, got {p}"))),
    };
    let pf = p as f64;
    let three = 3f64.powf(pf - 1.0);
    let a = three
        * 2f64.powf(pf - 1.0)
        * linear_growth.powf(pf)
        * (horizon.powf(pf - 1.0) + c_p * horizon.powf((pf - 2.0) / 2.0));
    Ok((three * x0_norm.powf(pf) + a * horizon) * (a * horizon).exp())
}

/// Empirical `E[sup_t |X_t|^p]` against `factor` times the Gronwall bound.
#[allow(clippy::too_many_arguments)]
pub fn check_moment_bound(
    name: &str,
    model: &HybridModel,
    control: &FeedbackControl,
    p: u32,
    setup: &SimulationSetup,
    paths: usize,
    seed: u64,
    factor: f64,
    exec: Exec,
) -> Result<CheckReport> {
    let l = model.constants().linear_growth.ok_or_else(|| {
        Error::Usage("moment bound needs constants.linear_growth in the model".into())
    })?;
    let x0 = setup.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bound = gronwall_bound(l, setup.end - setup.start, x0, p)?;
    let est = monte_carlo(model, control, setup, paths, seed, McOptions { exec, ..Default::default() }, |path| {
        Ok(path.sup_norm_pow(p as i32))
    })?;
    let ceiling = factor * bound;
    Ok(CheckReport {
        name: name.to_string(),
        kind: "moment_bound".into(),
        pass: est.mean <= ceiling,
        margin: ceiling - est.mean,
        tolerance: factor,
        details: json!({
            "p": p,
            "estimate": est,
            "bound": bound,
            "ceiling": ceiling,
        }),
    })
}

/// Verification suite file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub checks: Vec<CheckConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckConfig {
    pub name: String,
    /// Model file, relative to the suite file.
    pub model: String,
    /// Overrides the check's default tolerance.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub start: Option<StartPointConfig>,
    #[serde(flatten)]
    pub spec: CheckSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckSpec {
    SolverOracle {
        grid: GridSpec,
        #[serde(default)]
        candidates: CandidateSpec,
    },
    Dpp {
        grid: GridSpec,
        #[serde(default)]
        candidates: CandidateSpec,
        intermediate_k: usize,
        paths: usize,
        #[serde(default)]
        seed: u64,
    },
    MinimizingSequence {
        grid: GridSpec,
        #[serde(default)]
        candidates: CandidateSpec,
        sequence: Vec<ControlConfig>,
        paths: usize,
        #[serde(default)]
        seed: u64,
    },
    MomentBound {
        #[serde(default)]
        control: Option<ControlConfig>,
        p: u32,
        dt: f64,
        paths: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub pass: bool,
    pub checks: Vec<CheckReport>,
}

/// Start point from a check, else the model's first, else the box centre in
/// regime 1.
pub fn resolve_start(model: &HybridModel, start: Option<&StartPointConfig>) -> Result<StartPoint> {
    match start {
        Some(sp) => {
            if sp.x.len() != model.state_dim() || sp.regime == 0 || sp.regime > model.regimes() {
                return Err(Error::Usage(format!("invalid start point {sp:?}")));
            }
            Ok(StartPoint {
                x: sp.x.clone(),
                regime: sp.regime - 1,
            })
        }
        None => Ok(model.start_points().first().cloned().unwrap_or_else(|| {
            let d = model.domain();
            StartPoint {
                x: d.lower.iter().zip(&d.upper).map(|(a, b)| 0.5 * (a + b)).collect(),
                regime: 0,
            }
        })),
    }
}

impl CheckConfig {
    pub fn run(&self, base: &Path, exec: Exec) -> Result<CheckReport> {
        let model = HybridModel::load(&base.join(&self.model))?;
        let start = resolve_start(&model, self.start.as_ref())?;
        match &self.spec {
            CheckSpec::SolverOracle { grid, candidates } => {
                let (mu, nu) = candidates.build(model.action_set())?;
                check_solver_oracle(&self.name, &model, grid, &mu, &nu, self.tolerance.unwrap_or(1e-9), exec)
            }
            CheckSpec::Dpp {
                grid,
                candidates,
                intermediate_k,
                paths,
                seed,
            } => {
                let (mu, nu) = candidates.build(model.action_set())?;
                let solved = solve(&model, grid, &mu, &nu, exec)?;
                check_dpp(&self.name, &model, &solved, *intermediate_k, &start, *paths, *seed, self.tolerance, exec)
            }
            CheckSpec::MinimizingSequence {
                grid,
                candidates,
                sequence,
                paths,
                seed,
            } => {
                let (mu, nu) = candidates.build(model.action_set())?;
                let solved = solve(&model, grid, &mu, &nu, exec)?;
                let controls = sequence
                    .iter()
                    .map(|c| c.build(&model, base))
                    .collect::<Result<Vec<_>>>()?;
                check_minimizing_sequence(&self.name, &model, &solved, &controls, &start, *paths, *seed, self.tolerance, exec)
            }
            CheckSpec::MomentBound {
                control,
                p,
                dt,
                paths,
                seed,
            } => {
                let control = match control {
                    Some(c) => c.build(&model, base)?,
                    None => FeedbackControl::constant(model.default_measure(), model.default_measure()),
                };
                let setup = SimulationSetup::new(0.0, model.horizon(), *dt, start.x.clone(), start.regime);
                check_moment_bound(&self.name, &model, &control, *p, &setup, *paths, *seed, self.tolerance.unwrap_or(2.0), exec)
            }
        }
    }
}

impl VerifyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Runs the checks whose names appear in `only` (all when empty).
    pub fn run(&self, base: &Path, only: &[String], exec: Exec) -> Result<SuiteReport> {
        let selected: Vec<&CheckConfig> = self
            .checks
            .iter()
            .filter(|c| only.is_empty() || only.contains(&c.name))
            .collect();
        for name in only {
            if !self.checks.iter().any(|c| &c.name == name) {
                return Err(Error::Usage(format!("no check named `{name}`")));
            }
        }
        let checks = exec.try_map(selected.len(), |k| selected[k].run(base, exec))?;
        Ok(SuiteReport {
            pass: checks.iter().all(|c| c.pass),
            checks,
        })
    }
}
