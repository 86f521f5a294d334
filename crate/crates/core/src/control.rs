//! Feedback controls `alpha = (mu_t, nu_t)` evaluated on the observed history.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{History, HybridModel};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::measure::{ActionSet, DiscreteMeasure, MeasureRepr};
use crate::solver::{SpaceGrid, ValueGrid};

/// Default cap on the size of a generated candidate set.
pub const DEFAULT_CANDIDATE_CAP: usize = 10_000;

type Pair = (Arc<DiscreteMeasure>, Arc<DiscreteMeasure>);

#[derive(Debug, Clone)]
pub enum FeedbackControl {
    Constant {
        mu: Arc<DiscreteMeasure>,
        nu: Arc<DiscreteMeasure>,
    },
    Markov(MarkovRule),
    Table(TablePolicy),
    PathDependent(WindowPolicy),
}

/// Picks a candidate index from `(t, x, i)`.
#[derive(Debug, Clone)]
pub enum Selector {
    /// Expression over `t`, `x1..`, `i`, rounded to a 0-based index.
    Expr(Expr),
    /// One 0-based index per regime.
    ByRegime(Vec<usize>),
}

impl Selector {
    fn select(&self, t: f64, x: &[f64], regime: usize, len: usize) -> Result<usize> {
        let idx = match self {
            Selector::Expr(e) => {
                let v = e.eval(&Env::new(t, x, regime))?;
                let r = v.round();
                if (v - r).abs() > 1e-9 || r < 0.0 {
                    return Err(Error::Domain(format!(
                        "selector `{e}` gave {v}, not a candidate index"
                    )));
                }
                r as usize
            }
            Selector::ByRegime(table) => *table.get(regime).ok_or_else(|| {
                Error::Domain(format!("no selector entry for regime {}", regime + 1))
            })?,
        };
        if idx >= len {
            return Err(Error::Domain(format!(
                "candidate index {idx} out of range for {len} candidates"
            )));
        }
        Ok(idx)
    }
}

/// Markov control `(t, X_t, Lambda_t) -> (mu, nu)` over finite candidate lists.
#[derive(Debug, Clone)]
pub struct MarkovRule {
    pub mu_candidates: Vec<Arc<DiscreteMeasure>>,
    pub nu_candidates: Vec<Arc<DiscreteMeasure>>,
    pub mu: Selector,
    pub nu: Selector,
}

/// Greedy policy read off a solved value grid by nearest-node lookup.
#[derive(Debug, Clone)]
pub struct TablePolicy {
    pub dt: f64,
    pub time_steps: usize,
    pub space: SpaceGrid,
    pub regimes: usize,
    /// Flattened `mu_index * nu_len + nu_index` per `(k, node, regime)`.
    pub policy: Arc<Vec<u32>>,
    pub mu_candidates: Vec<Arc<DiscreteMeasure>>,
    pub nu_candidates: Vec<Arc<DiscreteMeasure>>,
}

impl TablePolicy {
    pub fn pair_index(&self, k: usize, node: usize, regime: usize) -> (usize, usize) {
        let flat = self.policy[(k * self.space.len() + node) * self.regimes + regime] as usize;
        let n = self.nu_candidates.len();
        (flat / n, flat % n)
    }

    fn step_of(&self, t: f64) -> usize {
        let k = (t / self.dt + 1e-9).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.time_steps - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowStatistic {
    Max,
    Min,
    Mean,
}

/// Path-dependent control: a statistic of one state coordinate over the
/// last `window` grid points, bucketed by ascending thresholds.
#[derive(Debug, Clone)]
pub struct WindowPolicy {
    pub window: usize,
    /// 0-based state coordinate.
    pub coordinate: usize,
    pub statistic: WindowStatistic,
    pub thresholds: Vec<f64>,
    /// Candidate index per bucket (`thresholds.len() + 1` entries).
    pub mu_choice: Vec<usize>,
    pub nu_choice: Vec<usize>,
    pub mu_candidates: Vec<Arc<DiscreteMeasure>>,
    pub nu_candidates: Vec<Arc<DiscreteMeasure>>,
}

impl WindowPolicy {
    fn statistic_at(&self, history: &History<'_>, k: usize) -> f64 {
        let first = (k + 1).saturating_sub(self.window);
        let values = (first..=k).map(|j| history.state(j)[self.coordinate]);
        match self.statistic {
            WindowStatistic::Max => values.fold(f64::NEG_INFINITY, f64::max),
            WindowStatistic::Min => values.fold(f64::INFINITY, f64::min),
            WindowStatistic::Mean => values.sum::<f64>() / (k + 1 - first) as f64,
        }
    }
}

impl FeedbackControl {
    pub fn constant(mu: DiscreteMeasure, nu: DiscreteMeasure) -> Self {
        FeedbackControl::Constant {
            mu: Arc::new(mu),
            nu: Arc::new(nu),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FeedbackControl::Constant { .. } => "constant",
            FeedbackControl::Markov(_) => "markov",
            FeedbackControl::Table(_) => "table",
            FeedbackControl::PathDependent(_) => "path_dependent",
        }
    }

    /// `(mu_t, nu_t)` given the history observed up to time `t`.
    pub fn evaluate(&self, t: f64, history: &History<'_>) -> Result<Pair> {
        let k = history.index_of(t)?;
        match self {
            FeedbackControl::Constant { mu, nu } => Ok((mu.clone(), nu.clone())),
            FeedbackControl::Markov(rule) => {
                let x = history.state(k);
                let i = history.regime(k);
                let m = rule.mu.select(t, x, i, rule.mu_candidates.len())?;
                let n = rule.nu.select(t, x, i, rule.nu_candidates.len())?;
                Ok((rule.mu_candidates[m].clone(), rule.nu_candidates[n].clone()))
            }
            FeedbackControl::Table(table) => {
                let node = table.space.nearest(history.state(k));
                let i = history.regime(k);
                if i >= table.regimes {
                    return Err(Error::Domain(format!("regime {} not in policy table", i + 1)));
                }
                let (m, n) = table.pair_index(table.step_of(t), node, i);
                Ok((table.mu_candidates[m].clone(), table.nu_candidates[n].clone()))
            }
            FeedbackControl::PathDependent(w) => {
                let s = w.statistic_at(history, k);
                let bucket = w.thresholds.iter().filter(|th| s >= **th).count();
                Ok((
                    w.mu_candidates[w.mu_choice[bucket]].clone(),
                    w.nu_candidates[w.nu_choice[bucket]].clone(),
                ))
            }
        }
    }

    /// Every measure the control can emit.
    pub fn measures(&self) -> Vec<&DiscreteMeasure> {
        match self {
            FeedbackControl::Constant { mu, nu } => vec![mu, nu],
            FeedbackControl::Markov(MarkovRule {
                mu_candidates,
                nu_candidates,
                ..
            })
            | FeedbackControl::Table(TablePolicy {
                mu_candidates,
                nu_candidates,
                ..
            })
            | FeedbackControl::PathDependent(WindowPolicy {
                mu_candidates,
                nu_candidates,
                ..
            }) => mu_candidates
                .iter()
                .chain(nu_candidates)
                .map(|m| m.as_ref())
                .collect(),
        }
    }

    /// Errors unless every emitted measure lives on `set`.
    pub fn check_action_set(&self, set: &ActionSet) -> Result<()> {
        for m in self.measures() {
            if m.action_set() != set {
                return Err(Error::Validation(
                    "control measure is defined on a different action set".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The extension map: a path segment known on `times[0] ..= times[last]`
/// is extended to all of `[0, T]` by freezing it before the first and after
/// the last grid time, with linear interpolation between grid times.
pub fn extend(times: &[f64], values: &[Vec<f64>], r: f64) -> Vec<f64> {
    assert!(!times.is_empty() && times.len() == values.len());
    let last = times.len() - 1;
    if r <= times[0] {
        return values[0].clone();
    }
    if r >= times[last] {
        return values[last].clone();
    }
    let k = times.partition_point(|t| *t <= r) - 1;
    if r == times[k] {
        return values[k].clone();
    }
    let w = (r - times[k]) / (times[k + 1] - times[k]);
    values[k]
        .iter()
        .zip(&values[k + 1])
        .map(|(a, b)| a + w * (b - a))
        .collect()
}

fn binomial_capped(n: usize, k: usize, cap: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc * (n - j) as u128 / (j + 1) as u128;
        if acc > cap as u128 {
            return cap + 1;
        }
    }
    acc as usize
}

/// Every measure with atoms on the regular `a^k` grid of the box and weights
/// in `{0, 1/L, ..., 1}`. Diracs come first, then by support size.
pub fn candidate_set(set: &Arc<ActionSet>, atoms_per_dim: usize, levels: usize, cap: usize) -> Result<Vec<DiscreteMeasure>> {
    if atoms_per_dim == 0 || levels == 0 {
        return Err(Error::Usage("candidate grid needs a >= 1 and L >= 1".into()));
    }
    let k = set.dim();
    let atom_count = (atoms_per_dim as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if atom_count > cap as u128 {
        return Err(Error::Capacity(format!(
            "{atoms_per_dim}^{k} candidate atoms exceed the cap {cap}"
        )));
    }
    let atom_count = atom_count as usize;
    let size = binomial_capped(levels + atom_count - 1, atom_count - 1, cap);
    if size > cap {
        return Err(Error::Capacity(format!(
            "candidate set with a={atoms_per_dim}, L={levels} exceeds the cap {cap}"
        )));
    }

    let axis = |c: usize, j: usize| {
        let (lo, hi) = (set.lower()[c], set.upper()[c]);
        if atoms_per_dim == 1 {
            0.5 * (lo + hi)
        } else if j == atoms_per_dim - 1 {
            hi
        } else {
            lo + (hi - lo) * j as f64 / (atoms_per_dim - 1) as f64
        }
    };
    let atoms: Vec<Vec<f64>> = (0..atom_count)
        .map(|mut idx| {
            let mut p = vec![0.0; k];
            for c in (0..k).rev() {
                p[c] = axis(c, idx % atoms_per_dim);
                idx /= atoms_per_dim;
            }
            p
        })
        .collect();

    let mut out: Vec<DiscreteMeasure> = Vec::with_capacity(size);
    let mut counts = vec![0usize; atom_count];
    compositions(levels, 0, &mut counts, &mut |counts| {
        let (pts, ws): (Vec<_>, Vec<_>) = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(j, c)| (atoms[j].clone(), *c as f64 / levels as f64))
            .unzip();
        let s: f64 = ws.iter().sum();
        let mut ws = ws;
        ws[0] += 1.0 - s;
        out.push(DiscreteMeasure::with_shared_set(set.clone(), pts, ws)?);
        Ok(())
    })?;
    let mut unique: Vec<DiscreteMeasure> = Vec::with_capacity(out.len());
    for m in out {
        if !unique.contains(&m) {
            unique.push(m);
        }
    }
    unique.sort_by_key(|m| m.len());
    Ok(unique)
}

fn compositions(
    remaining: usize,
    slot: usize,
    counts: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if slot == counts.len() - 1 {
        counts[slot] = remaining;
        return emit(counts);
    }
    for c in (0..=remaining).rev() {
        counts[slot] = c;
        compositions(remaining - c, slot + 1, counts, emit)?;
    }
    counts[slot] = 0;
    Ok(())
}

/// JSON control file, tagged by `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    Constant {
        mu: MeasureRepr,
        nu: MeasureRepr,
    },
    Markov {
        candidates: CandidateLists,
        mu: SelectorConfig,
        nu: SelectorConfig,
    },
    Table {
        /// Solved value-grid artifact, relative to the control file.
        grid: String,
    },
    PathDependent {
        candidates: CandidateLists,
        window: usize,
        /// 1-based state coordinate.
        #[serde(default = "first_coordinate")]
        coordinate: usize,
        statistic: WindowStatistic,
        thresholds: Vec<f64>,
        mu: Vec<usize>,
        nu: Vec<usize>,
    },
}

fn first_coordinate() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateLists {
    pub mu: Vec<MeasureRepr>,
    pub nu: Vec<MeasureRepr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SelectorConfig {
    Expr(String),
    ByRegime(Vec<usize>),
}

fn measures(set: &Arc<ActionSet>, reprs: &[MeasureRepr], what: &str) -> Result<Vec<Arc<DiscreteMeasure>>> {
    if reprs.is_empty() {
        return Err(Error::Validation(format!("{what} candidate list is empty")));
    }
    reprs
        .iter()
        .map(|r| DiscreteMeasure::from_repr(set, r).map(Arc::new))
        .collect()
}

fn selector(cfg: &SelectorConfig, model: &HybridModel, len: usize) -> Result<Selector> {
    match cfg {
        SelectorConfig::Expr(s) => {
            let e = Expr::parse(s)?;
            if e.uses_control(crate::expr::Control::Mu) || e.uses_control(crate::expr::Control::Nu) {
                return Err(Error::Validation(format!("selector `{e}` may not use moments")));
            }
            if e.state_arity() > model.state_dim() {
                return Err(Error::Validation(format!("selector `{e}` uses a missing coordinate")));
            }
            Ok(Selector::Expr(e))
        }
        SelectorConfig::ByRegime(table) => {
            if table.len() != model.regimes() || table.iter().any(|v| *v >= len) {
                return Err(Error::Validation(
                    "selector table needs one valid candidate index per regime".into(),
                ));
            }
            Ok(Selector::ByRegime(table.clone()))
        }
    }
}

impl ControlConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Builds the control against `model`; `base` resolves relative paths.
    pub fn build(&self, model: &HybridModel, base: &Path) -> Result<FeedbackControl> {
        let set = model.action_set();
        let control = match self {
            ControlConfig::Constant { mu, nu } => FeedbackControl::Constant {
                mu: Arc::new(DiscreteMeasure::from_repr(set, mu)?),
                nu: Arc::new(DiscreteMeasure::from_repr(set, nu)?),
            },
            ControlConfig::Markov { candidates, mu, nu } => {
                let mu_candidates = measures(set, &candidates.mu, "mu")?;
                let nu_candidates = measures(set, &candidates.nu, "nu")?;
                FeedbackControl::Markov(MarkovRule {
                    mu: selector(mu, model, mu_candidates.len())?,
                    nu: selector(nu, model, nu_candidates.len())?,
                    mu_candidates,
                    nu_candidates,
                })
            }
            ControlConfig::Table { grid } => {
                let grid = ValueGrid::load(&base.join(grid))?;
                if grid.state_dim() != model.state_dim() || grid.regimes() != model.regimes() {
                    return Err(Error::Validation("value grid does not match the model".into()));
                }
                grid.extract_policy()
            }
            ControlConfig::PathDependent {
                candidates,
                window,
                coordinate,
                statistic,
                thresholds,
                mu,
                nu,
            } => {
                let mu_candidates = measures(set, &candidates.mu, "mu")?;
                let nu_candidates = measures(set, &candidates.nu, "nu")?;
                if *window == 0 || *coordinate == 0 || *coordinate > model.state_dim() {
                    return Err(Error::Validation("window must be >= 1 and coordinate in range".into()));
                }
                if thresholds.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Validation("thresholds must be ascending".into()));
                }
                let buckets = thresholds.len() + 1;
                if mu.len() != buckets
                    || nu.len() != buckets
                    || mu.iter().any(|v| *v >= mu_candidates.len())
                    || nu.iter().any(|v| *v >= nu_candidates.len())
                {
                    return Err(Error::Validation(format!(
                        "path-dependent control needs {buckets} valid choices per control"
                    )));
                }
                FeedbackControl::PathDependent(WindowPolicy {
                    window: *window,
                    coordinate: coordinate - 1,
                    statistic: *statistic,
                    thresholds: thresholds.clone(),
                    mu_choice: mu.clone(),
                    nu_choice: nu.clone(),
                    mu_candidates,
                    nu_candidates,
                })
            }
        };
        control.check_action_set(set)?;
        Ok(control)
    }
}
