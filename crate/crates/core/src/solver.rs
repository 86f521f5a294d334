//! Backward induction for the value function on a time x space x regime
//! lattice, with greedy policy extraction.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::control::{candidate_set, FeedbackControl, TablePolicy, DEFAULT_CANDIDATE_CAP};
use crate::dynamics::HybridModel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::measure::{ActionSet, DiscreteMeasure, MeasureRepr};
use crate::quadrature::GaussHermite;

pub const SCHEMA: &str = "hybridopt/value-grid";
pub const SCHEMA_VERSION: u32 = 1;
/// Largest number of space nodes accepted by [`solve`].
pub const MAX_NODES: usize = 250_000;
pub const INDEX_ORDER: &str = "values[(k * nodes + node) * regimes + i], k = 0..=time_steps; \
policy[(k * nodes + node) * regimes + i] = [mu, nu], k = 0..time_steps; \
node = sum_c j_c * space_nodes^(d - 1 - c) (first coordinate slowest); regimes 1-based in order";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub time_steps: usize,
    /// Nodes per state coordinate.
    pub space_nodes: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_quad_order() -> usize {
    5
}

impl GridSpec {
    pub fn new(time_steps: usize, space_nodes: usize, quad_order: usize) -> Self {
        GridSpec {
            time_steps,
            space_nodes,
            quad_order,
        }
    }

    pub fn check(&self, model: &HybridModel) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::Usage("need at least one time step".into()));
        }
        if self.space_nodes < 2 {
            return Err(Error::Usage("need at least two space nodes per coordinate".into()));
        }
        let nodes = (self.space_nodes as u128).pow(model.state_dim() as u32);
        if nodes > MAX_NODES as u128 {
            return Err(Error::Capacity(format!(
                "{}^{} space nodes exceed {MAX_NODES}",
                self.space_nodes,
                model.state_dim()
            )));
        }
        GaussHermite::new(self.quad_order)?;
        model.rates().check_step(model.horizon() / self.time_steps as f64)
    }
}

/// Candidate-set parameters: atoms per action coordinate and weight levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSpec {
    #[serde(default = "one")]
    pub mu_atoms: usize,
    #[serde(default = "one")]
    pub mu_levels: usize,
    #[serde(default = "two")]
    pub nu_atoms: usize,
    #[serde(default = "one")]
    pub nu_levels: usize,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

impl Default for CandidateSpec {
    fn default() -> Self {
        CandidateSpec {
            mu_atoms: 1,
            mu_levels: 1,
            nu_atoms: 2,
            nu_levels: 1,
        }
    }
}

pub type Candidates = (Vec<Arc<DiscreteMeasure>>, Vec<Arc<DiscreteMeasure>>);

impl CandidateSpec {
    pub fn build(&self, set: &Arc<ActionSet>) -> Result<Candidates> {
        let mu = candidate_set(set, self.mu_atoms, self.mu_levels, DEFAULT_CANDIDATE_CAP)?;
        let nu = candidate_set(set, self.nu_atoms, self.nu_levels, DEFAULT_CANDIDATE_CAP)?;
        if mu.len() * nu.len() > DEFAULT_CANDIDATE_CAP {
            return Err(Error::Capacity(format!(
                "{} x {} candidate pairs exceed {DEFAULT_CANDIDATE_CAP}",
                mu.len(),
                nu.len()
            )));
        }
        Ok((
            mu.into_iter().map(Arc::new).collect(),
            nu.into_iter().map(Arc::new).collect(),
        ))
    }
}

/// Regular tensor grid over the truncation box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes_per_dim: usize,
}

pub type Stencil = SmallVec<[(usize, f64); 8]>;

impl SpaceGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes_per_dim: usize) -> Self {
        SpaceGrid {
            lower,
            upper,
            nodes_per_dim,
        }
    }

    pub fn for_model(model: &HybridModel, nodes_per_dim: usize) -> Self {
        let dom = model.domain();
        SpaceGrid::new(dom.lower.clone(), dom.upper.clone(), nodes_per_dim)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.nodes_per_dim.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, c: usize) -> f64 {
        (self.upper[c] - self.lower[c]) / (self.nodes_per_dim - 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|c| self.spacing(c)).fold(0.0, f64::max)
    }

    fn coordinate(&self, c: usize, j: usize) -> f64 {
        if j + 1 == self.nodes_per_dim {
            self.upper[c]
        } else {
            self.lower[c] + j as f64 * self.spacing(c)
        }
    }

    fn multi_index(&self, mut idx: usize) -> SmallVec<[usize; 3]> {
        let mut out = SmallVec::from_elem(0, self.dim());
        for c in (0..self.dim()).rev() {
            out[c] = idx % self.nodes_per_dim;
            idx /= self.nodes_per_dim;
        }
        out
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(c, j)| self.coordinate(c, *j))
            .collect()
    }

    /// Flat index of the neighbour one step along coordinate `c`, if any.
    pub fn neighbour(&self, idx: usize, c: usize) -> Option<usize> {
        let j = self.multi_index(idx)[c];
        (j + 1 < self.nodes_per_dim).then(|| idx + self.nodes_per_dim.pow((self.dim() - 1 - c) as u32))
    }

    fn fractional(&self, c: usize, x: f64) -> f64 {
        let s = (x - self.lower[c]) / self.spacing(c);
        s.clamp(0.0, (self.nodes_per_dim - 1) as f64)
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        (0..self.dim()).fold(0, |acc, c| {
            let j = self.fractional(c, x[c]).round() as usize;
            acc * self.nodes_per_dim + j
        })
    }

    /// Multilinear interpolation weights at `x`, clamped to the box.
    pub fn stencil(&self, x: &[f64]) -> Stencil {
        let d = self.dim();
        let mut base = 0usize;
        let mut frac: SmallVec<[f64; 3]> = SmallVec::new();
        let mut strides: SmallVec<[usize; 3]> = SmallVec::new();
        for c in 0..d {
            let s = self.fractional(c, x[c]);
            let j = (s.floor() as usize).min(self.nodes_per_dim - 2);
            let stride = self.nodes_per_dim.pow((d - 1 - c) as u32);
            base += j * stride;
            frac.push(s - j as f64);
            strides.push(stride);
        }
        let mut out = Stencil::new();
        for corner in 0..(1usize << d) {
            let mut idx = base;
            let mut w = 1.0;
            for c in 0..d {
                if corner >> (d - 1 - c) & 1 == 1 {
                    idx += strides[c];
                    w *= frac[c];
                } else {
                    w *= 1.0 - frac[c];
                }
            }
            if w != 0.0 {
                out.push((idx, w));
            }
        }
        out
    }

    pub fn interpolate(&self, values: impl Fn(usize) -> f64, x: &[f64]) -> f64 {
        self.stencil(x).iter().map(|(idx, w)| w * values(*idx)).sum()
    }
}

/// One-step Bellman operator shared by the solver, the residual check and
/// the lattice oracle. `b`, `sigma` and the rates do not depend on time, so
/// the quadrature stencils and regime transition matrices are built once.
pub(crate) struct Operator<'a> {
    pub(crate) model: &'a HybridModel,
    pub(crate) space: SpaceGrid,
    pub(crate) dt: f64,
    pub(crate) regimes: usize,
    pub(crate) mu: &'a [Arc<DiscreteMeasure>],
    pub(crate) nu: &'a [Arc<DiscreteMeasure>],
    /// `(node * regimes + i) * |mu| + m` -> merged `(node', weight)` list.
    stencils: Vec<Vec<(u32, f64)>>,
    /// `((node * |nu| + n) * regimes + i) * regimes + j`.
    transitions: Vec<f64>,
    pub(crate) clamped: u64,
}

impl<'a> Operator<'a> {
    pub(crate) fn build(
        model: &'a HybridModel,
        spec: &GridSpec,
        mu: &'a [Arc<DiscreteMeasure>],
        nu: &'a [Arc<DiscreteMeasure>],
        exec: Exec,
    ) -> Result<Self> {
        spec.check(model)?;
        if mu.is_empty() || nu.is_empty() {
            return Err(Error::Usage("candidate sets must be non-empty".into()));
        }
        for m in mu.iter().chain(nu) {
            if m.action_set() != model.action_set().as_ref() {
                return Err(Error::Validation("candidate lies on a different action set".into()));
            }
        }
        let space = SpaceGrid::for_model(model, spec.space_nodes);
        let dt = model.horizon() / spec.time_steps as f64;
        let sqrt_dt = dt.sqrt();
        let d = model.state_dim();
        let n = model.regimes();
        let rule = GaussHermite::new(spec.quad_order)?.tensor(d);
        let domain = model.domain();

        type NodeParts = (Vec<Vec<(u32, f64)>>, Vec<f64>, u64);
        let parts: Vec<NodeParts> = exec.try_map(space.len(), |node| {
            let x = space.node(node);
            let mut stencils = Vec::with_capacity(n * mu.len());
            let mut clamped = 0u64;
            for i in 0..n {
                for m in mu {
                    let b = model.drift(&x, i, m)?;
                    let sigma = model.diffusion(&x, i, m)?;
                    let mut acc: Vec<(u32, f64)> = Vec::new();
                    let mut y = vec![0.0; d];
                    for (z, wq) in &rule {
                        for r in 0..d {
                            let noise: f64 = (0..d).map(|c| sigma[r * d + c] * z[c]).sum();
                            y[r] = x[r] + b[r] * dt + noise * sqrt_dt;
                        }
                        if y.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Numerical(format!("non-finite step from node {x:?}")));
                        }
                        if !domain.contains(&y) {
                            clamped += 1;
                        }
                        for (idx, w) in space.stencil(&y) {
                            acc.push((idx as u32, wq * w));
                        }
                    }
                    acc.sort_by_key(|e| e.0);
                    let mut merged: Vec<(u32, f64)> = Vec::with_capacity(acc.len());
                    for (idx, w) in acc {
                        match merged.last_mut() {
                            Some(last) if last.0 == idx => last.1 += w,
                            _ => merged.push((idx, w)),
                        }
                    }
                    stencils.push(merged);
                }
            }
            let mut transitions = Vec::with_capacity(nu.len() * n * n);
            for v in nu {
                if n == 1 {
                    transitions.push(1.0);
                } else {
                    transitions.extend(model.rates().generator(&x, v)?.transition_matrix(dt));
                }
            }
            Ok((stencils, transitions, clamped))
        })?;

        let mut stencils = Vec::with_capacity(space.len() * n * mu.len());
        let mut transitions = Vec::with_capacity(space.len() * nu.len() * n * n);
        let mut clamped = 0;
        for (s, t, c) in parts {
            stencils.extend(s);
            transitions.extend(t);
            clamped += c;
        }
        Ok(Operator {
            model,
            space,
            dt,
            regimes: n,
            mu,
            nu,
            stencils,
            transitions,
            clamped,
        })
    }

    pub(crate) fn pairs(&self) -> usize {
        self.mu.len() * self.nu.len()
    }

    pub(crate) fn stencil(&self, node: usize, i: usize, m: usize) -> &[(u32, f64)] {
        &self.stencils[(node * self.regimes + i) * self.mu.len() + m]
    }

    /// Row `i` of the regime transition matrix at `node` under `nu[n]`.
    pub(crate) fn transition_row(&self, node: usize, n: usize, i: usize) -> &[f64] {
        let r = self.regimes;
        let start = ((node * self.nu.len() + n) * r + i) * r;
        &self.transitions[start..start + r]
    }

    /// `out[j] = E[next(X', j)]` over the quadrature stencil of `(node, i, mu[m])`.
    fn expect(&self, node: usize, i: usize, m: usize, next: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (idx, w) in self.stencil(node, i, m) {
            let row = &next[*idx as usize * self.regimes..(*idx as usize + 1) * self.regimes];
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
    }

    pub(crate) fn running_cost(&self, k: usize, node: usize, i: usize, m: usize, n: usize) -> Result<f64> {
        let x = self.space.node(node);
        self.model
            .running_cost(k as f64 * self.dt, &x, i, &self.mu[m], &self.nu[n])
    }

    fn combine(&self, k: usize, node: usize, i: usize, m: usize, n: usize, expected: &[f64]) -> Result<f64> {
        let f = self.running_cost(k, node, i, m, n)?;
        let p = self.transition_row(node, n, i);
        let v = f * self.dt + p.iter().zip(expected).map(|(a, b)| a * b).sum::<f64>();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("non-finite value at step {k}, node {node}")))
        }
    }

    /// Minimizes over all candidate pairs at every `(node, i)` of step `k`.
    fn bellman(&self, k: usize, next: &[f64], exec: Exec) -> Result<(Vec<f64>, Vec<u32>)> {
        let r = self.regimes;
        let per_node = exec.try_map(self.space.len(), |node| {
            let mut e = vec![0.0; r];
            let mut out: SmallVec<[(f64, u32); 4]> = SmallVec::new();
            for i in 0..r {
                let mut best = (f64::INFINITY, 0u32);
                for m in 0..self.mu.len() {
                    self.expect(node, i, m, next, &mut e);
                    for n in 0..self.nu.len() {
                        let v = self.combine(k, node, i, m, n, &e)?;
                        if v < best.0 {
                            best = (v, (m * self.nu.len() + n) as u32);
                        }
                    }
                }
                out.push(best);
            }
            Ok::<_, Error>(out)
        })?;
        let mut values = Vec::with_capacity(self.space.len() * r);
        let mut policy = Vec::with_capacity(self.space.len() * r);
        for cells in per_node {
            for (v, p) in cells {
                values.push(v);
                policy.push(p);
            }
        }
        Ok((values, policy))
    }

    /// One step under a fixed pair index per cell.
    fn apply(&self, k: usize, next: &[f64], pair: impl Fn(usize, usize) -> usize + Sync, exec: Exec) -> Result<Vec<f64>> {
        let r = self.regimes;
        let per_node = exec.try_map(self.space.len(), |node| {
            let mut e = vec![0.0; r];
            (0..r)
                .map(|i| {
                    let flat = pair(node, i);
                    let (m, n) = (flat / self.nu.len(), flat % self.nu.len());
                    self.expect(node, i, m, next, &mut e);
                    self.combine(k, node, i, m, n, &e)
                })
                .collect::<Result<SmallVec<[f64; 4]>>>()
        })?;
        Ok(per_node.into_iter().flatten().collect())
    }

    fn terminal(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.space.len() * self.regimes);
        for node in 0..self.space.len() {
            let g = self.model.terminal_cost(&self.space.node(node))?;
            out.extend(std::iter::repeat_n(g, self.regimes));
        }
        Ok(out)
    }
}

/// Solved value function and greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub spec: GridSpec,
    pub horizon: f64,
    pub space: SpaceGrid,
    pub regimes: usize,
    pub action_set: Arc<ActionSet>,
    pub mu: Vec<Arc<DiscreteMeasure>>,
    pub nu: Vec<Arc<DiscreteMeasure>>,
    pub values: Vec<f64>,
    pub policy: Arc<Vec<u32>>,
    pub clamped_queries: u64,
    pub config_hash: Option<String>,
}

/// Backward induction from `V(T, x, i) = g(x)`.
pub fn solve(
    model: &HybridModel,
    spec: &GridSpec,
    mu: &[Arc<DiscreteMeasure>],
    nu: &[Arc<DiscreteMeasure>],
    exec: Exec,
) -> Result<ValueGrid> {
    let op = Operator::build(model, spec, mu, nu, exec)?;
    let cells = op.space.len() * op.regimes;
    let steps = spec.time_steps;
    let mut values = vec![0.0; (steps + 1) * cells];
    let mut policy = vec![0u32; steps * cells];
    values[steps * cells..].copy_from_slice(&op.terminal()?);
    for k in (0..steps).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * cells);
        let (v, p) = op.bellman(k, &tail[..cells], exec)?;
        head[k * cells..].copy_from_slice(&v);
        policy[k * cells..(k + 1) * cells].copy_from_slice(&p);
    }
    Ok(ValueGrid {
        spec: *spec,
        horizon: model.horizon(),
        space: op.space.clone(),
        regimes: op.regimes,
        action_set: model.action_set().clone(),
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        values,
        policy: Arc::new(policy),
        clamped_queries: op.clamped,
        config_hash: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DppResidual {
    pub k_from: usize,
    pub k_to: usize,
    /// `max |chained stored policy - best block-constant pair|`.
    pub residual: f64,
    /// `max |chained stored policy - stored V(k_from)|`.
    pub chain_vs_grid: f64,
}

impl ValueGrid {
    pub fn dt(&self) -> f64 {
        self.horizon / self.spec.time_steps as f64
    }

    pub fn state_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    fn cells(&self) -> usize {
        self.space.len() * self.regimes
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.cells()..(k + 1) * self.cells()]
    }

    pub fn value(&self, k: usize, node: usize, i: usize) -> f64 {
        self.values[k * self.cells() + node * self.regimes + i]
    }

    /// `V(t_k, x, i)` by multilinear interpolation.
    pub fn value_at(&self, k: usize, x: &[f64], i: usize) -> f64 {
        let slice = self.slice(k);
        self.space.interpolate(|node| slice[node * self.regimes + i], x)
    }

    /// Stored `(mu, nu)` candidate indices at `(k, node, i)`.
    pub fn policy_pair(&self, k: usize, node: usize, i: usize) -> (usize, usize) {
        let flat = self.policy[k * self.cells() + node * self.regimes + i] as usize;
        (flat / self.nu.len(), flat % self.nu.len())
    }

    pub fn extract_policy(&self) -> FeedbackControl {
        FeedbackControl::Table(TablePolicy {
            dt: self.dt(),
            time_steps: self.spec.time_steps,
            space: self.space.clone(),
            regimes: self.regimes,
            policy: self.policy.clone(),
            mu_candidates: self.mu.clone(),
            nu_candidates: self.nu.clone(),
        })
    }

    /// Compares the stored policy chained from `k_to` back to `k_from`
    /// against the best single candidate pair held over the whole block.
    pub fn dpp_residual(&self, model: &HybridModel, k_from: usize, k_to: usize, exec: Exec) -> Result<DppResidual> {
        if !(k_from < k_to && k_to <= self.spec.time_steps) {
            return Err(Error::Usage(format!(
                "need 0 <= k_from < k_to <= {}, got {k_from}, {k_to}",
                self.spec.time_steps
            )));
        }
        let op = Operator::build(model, &self.spec, &self.mu, &self.nu, exec)?;
        let cells = self.cells();
        let r = self.regimes;

        let mut chained = self.slice(k_to).to_vec();
        for k in (k_from..k_to).rev() {
            let policy = &self.policy[k * cells..(k + 1) * cells];
            chained = op.apply(k, &chained, |node, i| policy[node * r + i] as usize, exec)?;
        }
        let mut best = vec![f64::INFINITY; cells];
        for pair in 0..op.pairs() {
            let mut w = self.slice(k_to).to_vec();
            for k in (k_from..k_to).rev() {
                w = op.apply(k, &w, |_, _| pair, exec)?;
            }
            for (b, v) in best.iter_mut().zip(&w) {
                *b = b.min(*v);
            }
        }
        let max_gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        Ok(DppResidual {
            k_from,
            k_to,
            residual: max_gap(&chained, &best),
            chain_vs_grid: max_gap(&chained, self.slice(k_from)),
        })
    }

    /// Largest `|V(t_k, x) - V(t_k, x')| / |x - x'|` over adjacent nodes.
    pub fn space_modulus(&self) -> f64 {
        let mut out = 0.0f64;
        for k in 0..=self.spec.time_steps {
            for node in 0..self.space.len() {
                for c in 0..self.space.dim() {
                    if let Some(nb) = self.space.neighbour(node, c) {
                        for i in 0..self.regimes {
                            let dv = (self.value(k, node, i) - self.value(k, nb, i)).abs();
                            out = out.max(dv / self.space.spacing(c));
                        }
                    }
                }
            }
        }
        out
    }

    /// Largest `|V(t_{k+1}, x) - V(t_k, x)| / dt` over nodes.
    pub fn time_modulus(&self) -> f64 {
        let mut out = 0.0f64;
        for k in 0..self.spec.time_steps {
            for (a, b) in self.slice(k).iter().zip(self.slice(k + 1)) {
                out = out.max((a - b).abs() / self.dt());
            }
        }
        out
    }

    fn artifact(&self) -> Artifact {
        Artifact {
            schema: SCHEMA.to_string(),
            version: SCHEMA_VERSION,
            config_hash: self.config_hash.clone(),
            index_order: INDEX_ORDER.to_string(),
            grid: self.spec,
            horizon: self.horizon,
            space: self.space.clone(),
            regimes: self.regimes,
            action_set: (*self.action_set).clone(),
            candidates: ArtifactCandidates {
                mu: self.mu.iter().map(|m| m.to_repr()).collect(),
                nu: self.nu.iter().map(|m| m.to_repr()).collect(),
            },
            clamped_queries: self.clamped_queries,
            values: self.values.clone(),
            policy: self.policy.iter().map(|p| {
                let p = *p as usize;
                [p / self.nu.len(), p % self.nu.len()]
            }).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.artifact())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Artifact = serde_json::from_str(text)?;
        if a.schema != SCHEMA || a.version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "unsupported artifact {} v{}",
                a.schema, a.version
            )));
        }
        let set = Arc::new(a.action_set);
        let load = |reprs: &[MeasureRepr]| -> Result<Vec<Arc<DiscreteMeasure>>> {
            reprs.iter().map(|r| DiscreteMeasure::from_repr(&set, r).map(Arc::new)).collect()
        };
        let mu = load(&a.candidates.mu)?;
        let nu = load(&a.candidates.nu)?;
        if mu.is_empty() || nu.is_empty() || a.space.nodes_per_dim != a.grid.space_nodes {
            return Err(Error::Validation("inconsistent value-grid artifact".into()));
        }
        let cells = a.space.len() * a.regimes;
        if a.values.len() != (a.grid.time_steps + 1) * cells || a.policy.len() != a.grid.time_steps * cells {
            return Err(Error::Validation("value-grid arrays have the wrong length".into()));
        }
        let mut policy = Vec::with_capacity(a.policy.len());
        for [m, n] in a.policy {
            if m >= mu.len() || n >= nu.len() {
                return Err(Error::Validation("policy index out of range".into()));
            }
            policy.push((m * nu.len() + n) as u32);
        }
        Ok(ValueGrid {
            spec: a.grid,
            horizon: a.horizon,
            space: a.space,
            regimes: a.regimes,
            action_set: set,
            mu,
            nu,
            values: a.values,
            policy: Arc::new(policy),
            clamped_queries: a.clamped_queries,
            config_hash: a.config_hash,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ArtifactCandidates {
    mu: Vec<MeasureRepr>,
    nu: Vec<MeasureRepr>,
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    schema: String,
    version: u32,
    config_hash: Option<String>,
    index_order: String,
    grid: GridSpec,
    horizon: f64,
    space: SpaceGrid,
    regimes: usize,
    action_set: ActionSet,
    candidates: ArtifactCandidates,
    clamped_queries: u64,
    values: Vec<f64>,
    policy: Vec<[usize; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(json: &str) -> HybridModel {
        HybridModel::from_json(json).unwrap()
    }

    fn simple(drift: &str, sigma: &str, f: &str, g: &str) -> HybridModel {
        model(&format!(
            r#"{{"state_dim":1,"action_set":{{"lower":[0],"upper":[1]}},
                "drift":["{drift}"],"diffusion":[["{sigma}"]],
                "running_cost":"{f}","terminal_cost":"{g}",
                "domain":{{"lower":[-2],"upper":[2]}}}}"#
        ))
    }

    fn regime_cost() -> HybridModel {
        model(
            r#"{"state_dim":1,"regimes":2,"action_set":{"lower":[0],"upper":[1]},
                "drift":["0"],"diffusion":[["0"]],
                "rates":[[null,"nu_m(1,0)"],[null,null]],"rate_bound":1,
                "running_cost":"i","terminal_cost":"0",
                "domain":{"lower":[-1],"upper":[1]}}"#,
        )
    }

    fn candidates(m: &HybridModel, spec: CandidateSpec) -> Candidates {
        spec.build(m.action_set()).unwrap()
    }

    #[test]
    fn constant_terminal_cost_propagates() {
        let m = simple("0", "1", "0", "3");
        let (mu, nu) = candidates(&m, CandidateSpec { mu_atoms: 3, ..Default::default() });
        let g = solve(&m, &GridSpec::new(5, 11, 5), &mu, &nu, Exec::Parallel).unwrap();
        assert!(g.values.iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert!(g.policy.iter().all(|p| *p == 0));
    }

    #[test]
    fn frozen_state_keeps_terminal_cost() {
        let m = simple("0", "0", "0", "x1");
        let (mu, nu) = candidates(&m, CandidateSpec::default());
        let g = solve(&m, &GridSpec::new(4, 9, 3), &mu, &nu, Exec::Sequential).unwrap();
        for k in 0..=4 {
            for node in 0..9 {
                assert!((g.value(k, node, 0) - g.space.node(node)[0]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn regime_cost_value_is_one() {
        let m = regime_cost();
        let (mu, nu) = candidates(&m, CandidateSpec::default());
        let g = solve(&m, &GridSpec::new(10, 3, 3), &mu, &nu, Exec::Parallel).unwrap();
        for node in 0..3 {
            assert!((g.value(0, node, 0) - 1.0).abs() < 1e-12);
            assert!((g.value(0, node, 1) - 2.0).abs() < 1e-12);
            for k in 0..10 {
                assert_eq!(g.policy_pair(k, node, 0), (0, 0));
            }
        }
        let one = g.dpp_residual(&m, 3, 4, Exec::Parallel).unwrap();
        assert_eq!(one.residual, 0.0);
        assert_eq!(one.chain_vs_grid, 0.0);
        let two = g.dpp_residual(&m, 0, 2, Exec::Parallel).unwrap();
        assert!(two.residual <= 1e-9);
    }

    #[test]
    fn policy_tracks_target() {
        let m = model(
            r#"{"state_dim":1,"regimes":2,"action_set":{"lower":[0],"upper":[1]},
                "drift":["0"],"diffusion":[["0"]],
                "rates":[[null,null],[null,null]],"rate_bound":0,
                "running_cost":["(mu_m(1,0) - 0.3)^2","(mu_m(1,0) - 0.8)^2"],
                "terminal_cost":"0",
                "domain":{"lower":[-1],"upper":[1]}}"#,
        );
        let (mu, nu) = candidates(&m, CandidateSpec { mu_atoms: 11, nu_atoms: 1, ..Default::default() });
        let g = solve(&m, &GridSpec::new(2, 3, 1), &mu, &nu, Exec::Parallel).unwrap();
        let (a, _) = g.policy_pair(0, 1, 0);
        let (b, _) = g.policy_pair(0, 1, 1);
        assert!((mu[a].atom(0)[0] - 0.3).abs() < 1e-12);
        assert!((mu[b].atom(0)[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn larger_candidate_sets_never_increase_value() {
        let m = simple("mu_m(1,0) - 0.5", "0.5", "x1^2 + (mu_m(1,0) - 0.2)^2", "abs(x1)");
        let spec = GridSpec::new(4, 9, 3);
        let (mu2, nu) = candidates(&m, CandidateSpec { mu_atoms: 2, ..Default::default() });
        let (mu3, _) = candidates(&m, CandidateSpec { mu_atoms: 3, ..Default::default() });
        let small = solve(&m, &spec, &mu2, &nu, Exec::Parallel).unwrap();
        let large = solve(&m, &spec, &mu3, &nu, Exec::Parallel).unwrap();
        for (s, l) in small.values.iter().zip(&large.values) {
            assert!(*l <= s + 1e-12);
        }
    }

    #[test]
    fn execution_policy_does_not_change_output() {
        let m = simple("mu_m(1,0) - x1", "0.5", "x1^2", "abs(x1)");
        let (mu, nu) = candidates(&m, CandidateSpec { mu_atoms: 3, ..Default::default() });
        let spec = GridSpec::new(6, 21, 5);
        let a = solve(&m, &spec, &mu, &nu, Exec::Parallel).unwrap();
        let b = solve(&m, &spec, &mu, &nu, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn artifact_round_trip() {
        let m = regime_cost();
        let (mu, nu) = candidates(&m, CandidateSpec::default());
        let g = solve(&m, &GridSpec::new(10, 3, 3), &mu, &nu, Exec::Parallel).unwrap();
        let back = ValueGrid::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        assert!(ValueGrid::from_json("{}").is_err());
    }

    #[test]
    fn stencil_weights() {
        let s = SpaceGrid::new(vec![0.0, 0.0], vec![1.0, 2.0], 3);
        let st = s.stencil(&[0.25, 1.5]);
        let total: f64 = st.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
        let v = s.interpolate(|n| { let p = s.node(n); 2.0 * p[0] + p[1] }, &[0.25, 1.5]);
        assert!((v - 2.0).abs() < 1e-14);
        assert_eq!(s.stencil(&[5.0, -1.0]).as_slice(), &[(6, 1.0)]);
        assert_eq!(s.nearest(&[0.9, 0.1]), 6);
    }

    #[test]
    fn grid_checks() {
        let m = regime_cost();
        let (mu, nu) = candidates(&m, CandidateSpec::default());
        assert!(matches!(
            solve(&m, &GridSpec::new(5, 3, 3), &mu, &nu, Exec::Parallel),
            Err(Error::StepSize { .. })
        ));
        assert!(solve(&m, &GridSpec::new(10, 1, 3), &mu, &nu, Exec::Parallel).is_err());
    }
}
