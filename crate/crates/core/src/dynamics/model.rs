use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Control, Env, Expr};
use crate::measure::{ActionSet, DiscreteMeasure};
use crate::switching::RateSpec;

/// Either one value shared by every regime or a per-regime table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRegime<T> {
    Table(Vec<T>),
    Shared(T),
}

impl<T: Clone> PerRegime<T> {
    fn expand(&self, regimes: usize, what: &str) -> Result<Vec<T>> {
        match self {
            PerRegime::Shared(v) => Ok(vec![v.clone(); regimes]),
            PerRegime::Table(rows) if rows.len() == regimes => Ok(rows.clone()),
            PerRegime::Table(rows) => Err(Error::Model(format!(
                "{what}: table has {} entries for {regimes} regimes",
                rows.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Lipschitz constant of the drift/diffusion pair (squared form).
    #[serde(default)]
    pub c1: Option<f64>,
    /// Lipschitz constant of the switching rates.
    #[serde(default)]
    pub c2: Option<f64>,
    /// `L` with `|b| + ||sigma|| <= L (1 + |x|)`.
    #[serde(default)]
    pub linear_growth: Option<f64>,
    #[serde(default)]
    pub running_cost_lower: Option<f64>,
    #[serde(default)]
    pub terminal_cost_lower: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "default_clamp")]
    pub clamp: bool,
}

fn default_clamp() -> bool {
    true
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp_point(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPointConfig {
    pub x: Vec<f64>,
    /// 1-based regime label.
    #[serde(default = "default_regime")]
    pub regime: usize,
}

fn default_regime() -> usize {
    1
}

/// JSON model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub state_dim: usize,
    #[serde(default = "default_regime")]
    pub regimes: usize,
    pub action_set: ActionSet,
    pub drift: PerRegime<Vec<String>>,
    pub diffusion: PerRegime<Vec<Vec<String>>>,
    /// `rates[i][j]` for `i != j`; `null` or omitted entries are zero.
    #[serde(default)]
    pub rates: Option<Vec<Vec<Option<String>>>>,
    #[serde(default)]
    pub rate_bound: f64,
    pub running_cost: PerRegime<String>,
    pub terminal_cost: String,
    #[serde(default)]
    pub constants: Constants,
    pub domain: Domain,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub start: Vec<StartPointConfig>,
}

fn default_horizon() -> f64 {
    1.0
}

/// Start point `(x, i)` with a 0-based regime.
#[derive(Debug, Clone, PartialEq)]
pub struct StartPoint {
    pub x: Vec<f64>,
    pub regime: usize,
}

/// Coefficients of the controlled hybrid system: drift `b(x, i, mu)`,
/// diffusion `sigma(x, i, mu)`, rates `q_ij(x, nu)`, running cost
/// `f(t, x, i, mu, nu)` and terminal cost `g(x)`.
#[derive(Debug, Clone)]
pub struct HybridModel {
    name: Option<String>,
    state_dim: usize,
    regimes: usize,
    drift: Vec<Vec<Expr>>,
    diffusion: Vec<Vec<Expr>>,
    rates: RateSpec,
    running_cost: Vec<Expr>,
    terminal_cost: Expr,
    action_set: Arc<ActionSet>,
    constants: Constants,
    domain: Domain,
    horizon: f64,
    start: Vec<StartPoint>,
}

fn parse_at(source: &str, what: &str) -> Result<Expr> {
    Expr::parse(source).map_err(|e| Error::Model(format!("{what}: {e}")))
}

impl HybridModel {
    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        let d = config.state_dim;
        let n = config.regimes;
        if d == 0 || d > 3 {
            return Err(Error::Model(format!("state_dim must be 1..=3, got {d}")));
        }
        if config.domain.lower.len() != d || config.domain.upper.len() != d {
            return Err(Error::Model("domain bounds must have state_dim entries".into()));
        }
        for (lo, hi) in config.domain.lower.iter().zip(&config.domain.upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Model(format!("domain needs finite lower < upper, got [{lo}, {hi}]")));
            }
        }
        if !(config.horizon.is_finite() && config.horizon > 0.0) {
            return Err(Error::Model(format!("horizon must be positive, got {}", config.horizon)));
        }
        let k = config.action_set.dim();

        let mut drift = Vec::with_capacity(n);
        for (r, row) in config.drift.expand(n, "drift")?.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Model(format!("drift for regime {} needs {d} entries", r + 1)));
            }
            let exprs = row
                .iter()
                .enumerate()
                .map(|(c, s)| parse_at(s, &format!("drift[{}][{}]", r + 1, c + 1)))
                .collect::<Result<Vec<_>>>()?;
            drift.push(exprs);
        }
        let mut diffusion = Vec::with_capacity(n);
        for (r, rows) in config.diffusion.expand(n, "diffusion")?.iter().enumerate() {
            if rows.len() != d || rows.iter().any(|row| row.len() != d) {
                return Err(Error::Model(format!(
                    "diffusion for regime {} must be {d}x{d}",
                    r + 1
                )));
            }
            let mut flat = Vec::with_capacity(d * d);
            for (a, row) in rows.iter().enumerate() {
                for (b, s) in row.iter().enumerate() {
                    flat.push(parse_at(s, &format!("diffusion[{}][{}][{}]", r + 1, a + 1, b + 1))?);
                }
            }
            diffusion.push(flat);
        }
        for e in drift.iter().chain(&diffusion).flatten() {
            if e.uses_time() || e.uses_control(Control::Nu) {
                return Err(Error::Model(format!(
                    "drift/diffusion `{e}` may depend only on x, i and mu"
                )));
            }
        }

        let rates = match (&config.rates, n) {
            (None, 1) => RateSpec::single(),
            (None, _) => return Err(Error::Model("rates are required when regimes > 1".into())),
            (Some(table), _) => {
                if table.len() != n {
                    return Err(Error::Model(format!("rates must be a {n}x{n} table")));
                }
                let mut exprs = Vec::with_capacity(n);
                for (i, row) in table.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::Model(format!("rates must be a {n}x{n} table")));
                    }
                    let mut parsed = Vec::with_capacity(n);
                    for (j, cell) in row.iter().enumerate() {
                        let cell = cell.as_deref().map(str::trim).filter(|s| !s.is_empty());
                        parsed.push(match cell {
                            Some(_) if i == j => {
                                return Err(Error::Model(format!(
                                    "diagonal rate q_{}{} is derived and must be null",
                                    i + 1,
                                    j + 1
                                )))
                            }
                            Some(s) => Some(parse_at(s, &format!("rates[{}][{}]", i + 1, j + 1))?),
                            None => None,
                        });
                    }
                    exprs.push(parsed);
                }
                RateSpec::new(exprs, config.rate_bound)?
            }
        };

        let running_cost = config
            .running_cost
            .expand(n, "running_cost")?
            .iter()
            .enumerate()
            .map(|(r, s)| parse_at(s, &format!("running_cost[{}]", r + 1)))
            .collect::<Result<Vec<_>>>()?;
        let terminal_cost = parse_at(&config.terminal_cost, "terminal_cost")?;
        if terminal_cost.uses_regime()
            || terminal_cost.uses_time()
            || terminal_cost.uses_control(Control::Mu)
            || terminal_cost.uses_control(Control::Nu)
        {
            return Err(Error::Model("terminal_cost may depend on x only".into()));
        }

        let all = drift
            .iter()
            .chain(&diffusion)
            .flatten()
            .chain(&running_cost)
            .chain(std::iter::once(&terminal_cost));
        for e in all {
            if e.state_arity() > d {
                return Err(Error::Model(format!("`{e}` references a coordinate beyond state_dim {d}")));
            }
            if e.moment_arity() > k {
                return Err(Error::Model(format!("`{e}` references an action coordinate beyond {k}")));
            }
        }
        if rates.state_arity() > d {
            return Err(Error::Model("rate references a coordinate beyond state_dim".into()));
        }

        let mut start = Vec::new();
        for sp in &config.start {
            if sp.x.len() != d || sp.regime == 0 || sp.regime > n {
                return Err(Error::Model(format!("invalid start point {sp:?}")));
            }
            start.push(StartPoint {
                x: sp.x.clone(),
                regime: sp.regime - 1,
            });
        }

        Ok(HybridModel {
            name: config.name.clone(),
            state_dim: d,
            regimes: n,
            drift,
            diffusion,
            rates,
            running_cost,
            terminal_cost,
            action_set: Arc::new(config.action_set.clone()),
            constants: config.constants.clone(),
            domain: config.domain.clone(),
            horizon: config.horizon,
            start,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(text)?;
        Self::from_config(&config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn rates(&self) -> &RateSpec {
        &self.rates
    }

    pub fn action_set(&self) -> &Arc<ActionSet> {
        &self.action_set
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn start_points(&self) -> &[StartPoint] {
        &self.start
    }

    pub fn set_clamp(&mut self, clamp: bool) {
        self.domain.clamp = clamp;
    }

    pub fn drift(&self, x: &[f64], i: usize, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
        let env = Env::new(0.0, x, i).with_mu(mu);
        self.drift[i]
            .iter()
            .map(|e| e.eval(&env).map_err(Error::from))
            .collect()
    }

    /// Row-major `d x d` diffusion matrix.
    pub fn diffusion(&self, x: &[f64], i: usize, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
        let env = Env::new(0.0, x, i).with_mu(mu);
        self.diffusion[i]
            .iter()
            .map(|e| e.eval(&env).map_err(Error::from))
            .collect()
    }

    pub fn running_cost(
        &self,
        t: f64,
        x: &[f64],
        i: usize,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
    ) -> Result<f64> {
        let env = Env::new(t, x, i).with_mu(mu).with_nu(nu);
        Ok(self.running_cost[i].eval(&env)?)
    }

    pub fn terminal_cost(&self, x: &[f64]) -> Result<f64> {
        Ok(self.terminal_cost.eval(&Env::new(0.0, x, 0))?)
    }

    pub fn dirac(&self, point: &[f64]) -> Result<DiscreteMeasure> {
        DiscreteMeasure::dirac_shared(self.action_set.clone(), point)
    }

    /// Dirac at the centre of the action set.
    pub fn default_measure(&self) -> DiscreteMeasure {
        self.dirac(&self.action_set.center()).expect("centre lies in the box")
    }
}
