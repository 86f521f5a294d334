//! Controlled transition rates, the interval stack `Gamma_ij` used to realise
//! regime jumps from a Poisson mark, and per-step regime transitions.
//!
//! Regimes are 0-based here; wire formats and expressions use 1-based labels.

use crate::error::{Error, Result};
use crate::expr::{Control, Env, Expr};
use crate::measure::DiscreteMeasure;

pub const MAX_REGIMES: usize = 16;
/// Largest admissible `dt * M`.
pub const MAX_STEP_MASS: f64 = 0.1;

/// Off-diagonal rate expressions `q_ij(x, nu)` and the declared bound `M`.
/// The diagonal is always derived: `q_ii = -sum_{j != i} q_ij`.
#[derive(Debug, Clone)]
pub struct RateSpec {
    regimes: usize,
    exprs: Vec<Option<Expr>>,
    bound: f64,
}

impl RateSpec {
    /// `exprs[i][j]` for `i != j`; diagonal entries must be `None`, and `None`
    /// off the diagonal means a zero rate.
    pub fn new(exprs: Vec<Vec<Option<Expr>>>, bound: f64) -> Result<Self> {
        let n = exprs.len();
        if n == 0 || n > MAX_REGIMES {
            return Err(Error::Model(format!(
                "regime count must be in 1..={MAX_REGIMES}, got {n}"
            )));
        }
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::Model(format!("rate bound must be finite and >= 0, got {bound}")));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in exprs.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::Model(format!("rate row {} has {} entries, expected {n}", i + 1, row.len())));
            }
            for (j, e) in row.into_iter().enumerate() {
                if let Some(e) = &e {
                    if i == j {
                        return Err(Error::Model(format!(
                            "diagonal rate q_{}{} is derived and must not be given",
                            i + 1,
                            j + 1
                        )));
                    }
                    if e.uses_time() || e.uses_control(Control::Mu) {
                        return Err(Error::Model(format!(
                            "rate q_{}{} may depend only on x and nu",
                            i + 1,
                            j + 1
                        )));
                    }
                }
                flat.push(e);
            }
        }
        Ok(RateSpec {
            regimes: n,
            exprs: flat,
            bound,
        })
    }

    /// Rate table with a single regime and no switching.
    pub fn single() -> Self {
        RateSpec {
            regimes: 1,
            exprs: vec![None],
            bound: 0.0,
        }
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Height of the mark space, `H = N (N - 1) M`.
    pub fn mark_height(&self) -> f64 {
        let n = self.regimes as f64;
        n * (n - 1.0) * self.bound
    }

    pub fn expr(&self, i: usize, j: usize) -> Option<&Expr> {
        self.exprs[i * self.regimes + j].as_ref()
    }

    pub fn state_arity(&self) -> usize {
        self.exprs.iter().flatten().map(Expr::state_arity).max().unwrap_or(0)
    }

    /// Evaluates the generator at `(x, nu)`, checking non-negativity and the
    /// declared bound.
    pub fn generator(&self, x: &[f64], nu: &DiscreteMeasure) -> Result<Generator> {
        let n = self.regimes;
        let mut q = vec![0.0; n * n];
        let mut exit = vec![0.0; n];
        for i in 0..n {
            let env = Env::new(0.0, x, i).with_nu(nu);
            let mut total = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let rate = match self.expr(i, j) {
                    Some(e) => e.eval(&env)?,
                    None => 0.0,
                };
                if rate < 0.0 {
                    return Err(Error::Model(format!(
                        "negative rate q_{}{} = {rate} at x = {x:?}",
                        i + 1,
                        j + 1
                    )));
                }
                q[i * n + j] = rate;
                total += rate;
            }
            if total > self.bound * (1.0 + 1e-12) {
                return Err(Error::BoundViolation {
                    regime: i + 1,
                    rate: total,
                    bound: self.bound,
                });
            }
            q[i * n + i] = -total;
            exit[i] = total;
        }
        Ok(Generator { regimes: n, q, exit })
    }

    pub fn check_step(&self, dt: f64) -> Result<()> {
        check_step(self.bound, dt)
    }
}

pub fn check_step(bound: f64, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Usage(format!("step size must be positive, got {dt}")));
    }
    let product = dt * bound;
    if product > MAX_STEP_MASS * (1.0 + 1e-12) {
        return Err(Error::StepSize { product });
    }
    Ok(())
}

/// A conservative Q-matrix evaluated at one `(x, nu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    regimes: usize,
    q: Vec<f64>,
    exit: Vec<f64>,
}

impl Generator {
    pub fn from_rates(regimes: usize, off_diagonal: &[f64]) -> Result<Self> {
        if off_diagonal.len() != regimes * regimes {
            return Err(Error::Validation("rate matrix shape mismatch".into()));
        }
        let mut q = off_diagonal.to_vec();
        let mut exit = vec![0.0; regimes];
        for i in 0..regimes {
            let mut total = 0.0;
            for j in 0..regimes {
                if i != j {
                    if !(q[i * regimes + j] >= 0.0) {
                        return Err(Error::Model(format!("negative rate at ({}, {})", i + 1, j + 1)));
                    }
                    total += q[i * regimes + j];
                }
            }
            q[i * regimes + i] = -total;
            exit[i] = total;
        }
        Ok(Generator { regimes, q, exit })
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.regimes + j]
    }

    /// Total exit rate `q_i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.exit[i]
    }

    /// `exp(Q dt)`, row-major.
    pub fn transition_matrix(&self, dt: f64) -> Vec<f64> {
        let n = self.regimes;
        let scaled: Vec<f64> = self.q.iter().map(|v| v * dt).collect();
        let mut p = expm(&scaled, n);
        for i in 0..n {
            let row = &mut p[i * n..(i + 1) * n];
            let mut off = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                if j != i {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                    off += *v;
                }
            }
            row[i] = 1.0 - off;
        }
        p
    }

    pub fn transition_row(&self, i: usize, dt: f64) -> Vec<f64> {
        if self.exit.iter().all(|q| *q == 0.0) {
            let mut row = vec![0.0; self.regimes];
            row[i] = 1.0;
            return row;
        }
        let n = self.regimes;
        self.transition_matrix(dt)[i * n..(i + 1) * n].to_vec()
    }
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub(crate) fn expm(a: &[f64], n: usize) -> Vec<f64> {
    let norm = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let a: Vec<f64> = a.iter().map(|v| v * scale).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=24 {
        term = matmul(&term, &a, n);
        let inv = 1.0 / k as f64;
        term.iter_mut().for_each(|v| *v *= inv);
        let mut biggest = 0.0f64;
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
            biggest = biggest.max(t.abs());
        }
        if biggest < 1e-20 {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, n);
    }
    result
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// The consecutive half-open intervals `Gamma_ij = [start, start + len)`,
/// laid out row by row in column order, each of length `q_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalLayout {
    regimes: usize,
    start: Vec<f64>,
    len: Vec<f64>,
    total_mass: f64,
    height: f64,
}

impl IntervalLayout {
    pub fn from_generator(generator: &Generator, height: f64) -> Self {
        let n = generator.regimes;
        let mut start = vec![0.0; n * n];
        let mut len = vec![0.0; n * n];
        let mut cursor = 0.0;
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                start[idx] = cursor;
                if i != j {
                    len[idx] = generator.rate(i, j);
                    cursor = start[idx] + len[idx];
                }
            }
        }
        IntervalLayout {
            regimes: n,
            start,
            len,
            total_mass: cursor,
            height,
        }
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    /// `H = N (N - 1) M`.
    pub fn height(&self) -> f64 {
        self.height
    }

    /// `sum_i q_i`, the right end of the last interval.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn length(&self, i: usize, j: usize) -> f64 {
        self.len[i * self.regimes + j]
    }

    /// `Some((left, right))`, or `None` when `Gamma_ij` is empty.
    pub fn interval(&self, i: usize, j: usize) -> Option<(f64, f64)> {
        let idx = i * self.regimes + j;
        if i == j || self.len[idx] == 0.0 {
            None
        } else {
            Some((self.start[idx], self.start[idx] + self.len[idx]))
        }
    }

    /// Signed displacement `sum_l (l - i) 1_{Gamma_il}(z)`.
    pub fn theta(&self, i: usize, z: f64) -> Result<i64> {
        if i >= self.regimes {
            return Err(Error::Domain(format!("regime {} out of range", i + 1)));
        }
        if !(z >= 0.0 && z <= self.height) {
            return Err(Error::Domain(format!(
                "mark {z} outside [0, {}]",
                self.height
            )));
        }
        for l in 0..self.regimes {
            if let Some((a, b)) = self.interval(i, l) {
                if z >= a && z < b {
                    return Ok(l as i64 - i as i64);
                }
            }
        }
        Ok(0)
    }
}

pub fn build_intervals(rates: &RateSpec, x: &[f64], nu: &DiscreteMeasure) -> Result<IntervalLayout> {
    let generator = rates.generator(x, nu)?;
    Ok(IntervalLayout::from_generator(&generator, rates.mark_height()))
}

/// Row `i` of `exp(Q(x, nu) dt)` with the generator frozen at `(x, nu)`.
pub fn step_transition_probs(
    rates: &RateSpec,
    i: usize,
    x: &[f64],
    nu: &DiscreteMeasure,
    dt: f64,
) -> Result<Vec<f64>> {
    rates.check_step(dt)?;
    if i >= rates.regimes() {
        return Err(Error::Domain(format!("regime {} out of range", i + 1)));
    }
    Ok(rates.generator(x, nu)?.transition_row(i, dt))
}

/// Inverse-CDF draw from a transition row: the stay mass comes first, then
/// the other regimes in index order.
pub fn pick_regime(probs: &[f64], i: usize, uniform: f64) -> usize {
    let mut acc = probs[i];
    if uniform < acc {
        return i;
    }
    let mut last = i;
    for (j, p) in probs.iter().enumerate() {
        if j == i || *p <= 0.0 {
            continue;
        }
        acc += p;
        last = j;
        if uniform < acc {
            return j;
        }
    }
    last
}

pub fn sample_switch(
    rates: &RateSpec,
    i: usize,
    x: &[f64],
    nu: &DiscreteMeasure,
    dt: f64,
    uniform: f64,
) -> Result<usize> {
    if !(0.0..1.0).contains(&uniform) {
        return Err(Error::Domain(format!("uniform draw {uniform} outside [0, 1)")));
    }
    let probs = step_transition_probs(rates, i, x, nu, dt)?;
    Ok(pick_regime(&probs, i, uniform))
}
