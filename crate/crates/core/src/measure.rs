//! Finitely supported probability measures on a box action set, with the
//! exact Wasserstein-1 distance.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport;

const WEIGHT_TOL: f64 = 1e-12;
const SNAP: f64 = 1e-12;
/// Largest combined support accepted by [`w1_distance`].
pub const MAX_SUPPORT: usize = 4096;

/// Axis-aligned box `U = [lower_1, upper_1] x ... x [lower_k, upper_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActionSetRepr", into = "ActionSetRepr")]
pub struct ActionSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ActionSetRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<ActionSetRepr> for ActionSet {
    type Error = Error;

    fn try_from(r: ActionSetRepr) -> Result<Self> {
        ActionSet::new(r.lower, r.upper)
    }
}

impl From<ActionSet> for ActionSetRepr {
    fn from(a: ActionSet) -> Self {
        ActionSetRepr {
            lower: a.lower,
            upper: a.upper,
        }
    }
}

impl ActionSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Validation(
                "action set bounds must be non-empty and of equal length".into(),
            ));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Validation(format!(
                    "action set coordinate {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(ActionSet { lower, upper })
    }

    pub fn unit_interval() -> Self {
        ActionSet::new(vec![0.0], vec![1.0]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Euclidean diameter of the box; bounds every W1 distance on it.
    pub fn diameter(&self) -> f64 {
        euclidean(&self.lower, &self.upper)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(p, (lo, hi))| p.is_finite() && *p >= *lo && *p <= *hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A probability measure with finitely many atoms inside an [`ActionSet`].
///
/// Atoms are merged at 1e-12 resolution and kept in lexicographic order, so
/// two measures describing the same distribution compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    set: Arc<ActionSet>,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

/// Wire form `{"atoms": [[...], ...], "weights": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRepr {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(set: &ActionSet, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::with_shared_set(Arc::new(set.clone()), atoms, weights)
    }

    pub fn with_shared_set(
        set: Arc<ActionSet>,
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Validation(format!(
                "measure needs matching non-empty atoms/weights, got {} atoms and {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let mut total = 0.0;
        for w in &weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::Validation(format!("invalid weight {w}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Validation(format!("weights sum to {total}, not 1")));
        }
        let mut merged: BTreeMap<Vec<i64>, (Vec<f64>, f64)> = BTreeMap::new();
        for (atom, w) in atoms.into_iter().zip(weights) {
            if !set.contains(&atom) {
                return Err(Error::Domain(format!("atom {atom:?} lies outside the action set")));
            }
            if w == 0.0 {
                continue;
            }
            let key: Vec<i64> = atom.iter().map(|v| (v / SNAP).round() as i64).collect();
            merged
                .entry(key)
                .and_modify(|e| e.1 += w)
                .or_insert((atom, w));
        }
        let mut flat = Vec::with_capacity(merged.len() * set.dim());
        let mut ws = Vec::with_capacity(merged.len());
        for (_, (atom, w)) in merged {
            flat.extend_from_slice(&atom);
            ws.push(w);
        }
        Ok(DiscreteMeasure {
            set,
            atoms: flat,
            weights: ws,
        })
    }

    pub fn dirac(set: &ActionSet, point: &[f64]) -> Result<Self> {
        Self::dirac_shared(Arc::new(set.clone()), point)
    }

    pub fn dirac_shared(set: Arc<ActionSet>, point: &[f64]) -> Result<Self> {
        if !set.contains(point) {
            return Err(Error::Domain(format!(
                "point {point:?} lies outside the action set"
            )));
        }
        Ok(DiscreteMeasure {
            set,
            atoms: point.to_vec(),
            weights: vec![1.0],
        })
    }

    /// Convex combination `sum_k coefficients[k] * measures[k]`.
    pub fn mixture(measures: &[DiscreteMeasure], coefficients: &[f64]) -> Result<Self> {
        let Some(first) = measures.first() else {
            return Err(Error::Validation("mixture of zero measures".into()));
        };
        if measures.len() != coefficients.len() {
            return Err(Error::Validation(
                "mixture needs one coefficient per measure".into(),
            ));
        }
        if coefficients.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Validation("mixture coefficients must be non-negative".into()));
        }
        let sum: f64 = coefficients.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Validation(format!(
                "mixture coefficients sum to {sum}, not 1"
            )));
        }
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (m, c) in measures.iter().zip(coefficients) {
            if m.set != first.set {
                return Err(Error::Validation("mixture over different action sets".into()));
            }
            for (atom, w) in m.iter() {
                atoms.push(atom.to_vec());
                weights.push(c * w);
            }
        }
        Self::with_shared_set(first.set.clone(), atoms, weights)
    }

    pub fn from_repr(set: &Arc<ActionSet>, repr: &MeasureRepr) -> Result<Self> {
        Self::with_shared_set(set.clone(), repr.atoms.clone(), repr.weights.clone())
    }

    pub fn to_repr(&self) -> MeasureRepr {
        MeasureRepr {
            atoms: self.iter().map(|(a, _)| a.to_vec()).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn action_set(&self) -> &ActionSet {
        &self.set
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        let k = self.dim();
        &self.atoms[j * k..(j + 1) * k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.atoms
            .chunks_exact(self.dim())
            .zip(self.weights.iter().copied())
    }

    /// `sum_j w_j * atom_j[coordinate]^p`.
    pub fn moment(&self, p: u32, coordinate: usize) -> f64 {
        self.iter()
            .map(|(a, w)| w * a[coordinate].powi(p as i32))
            .sum()
    }

    /// Lexicographic comparison on (support, weights); used to orient
    /// symmetric computations.
    fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        let lhs = self.atoms.iter().chain(&self.weights);
        let rhs = other.atoms.iter().chain(&other.weights);
        lhs.zip(rhs)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| self.atoms.len().cmp(&other.atoms.len()))
    }
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_repr().serialize(s)
    }
}

fn check_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.set != nu.set {
        return Err(Error::Validation(
            "W1 distance between measures on different action sets".into(),
        ));
    }
    if mu.len() + nu.len() > MAX_SUPPORT {
        return Err(Error::Capacity(format!(
            "combined support {} exceeds {MAX_SUPPORT}",
            mu.len() + nu.len()
        )));
    }
    Ok(())
}

/// Exact Wasserstein-1 distance. One-dimensional action sets use the CDF
/// formula; higher dimensions solve the transport problem exactly.
pub fn w1_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    check_pair(mu, nu)?;
    if mu.dim() == 1 {
        Ok(w1_cdf(mu, nu))
    } else {
        w1_transport(mu, nu)
    }
}

/// Sorted-CDF formula `int |F_mu - F_nu|`, valid in one dimension.
pub fn w1_cdf(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    debug_assert_eq!(mu.dim(), 1);
    // Atoms are already sorted ascending.
    let (a, b) = (&mu.atoms, &nu.atoms);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut prev: Option<f64> = None;
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let z = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            total += (fa - fb).abs() * (z - p);
        }
        while i < a.len() && a[i] == z {
            fa += mu.weights[i];
            i += 1;
        }
        while j < b.len() && b[j] == z {
            fb += nu.weights[j];
            j += 1;
        }
        prev = Some(z);
    }
    total
}

/// Exact transport linear program in any dimension.
pub fn w1_transport(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    check_pair(mu, nu)?;
    let (mu, nu) = if mu.canonical_cmp(nu).is_gt() {
        (nu, mu)
    } else {
        (mu, nu)
    };
    if mu == nu {
        return Ok(0.0);
    }
    let cost: Vec<f64> = mu
        .iter()
        .flat_map(|(x, _)| nu.iter().map(move |(y, _)| euclidean(x, y)))
        .collect();
    let plan = transport::solve(mu.weights(), nu.weights(), &cost)?;
    Ok(plan.cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> ActionSet {
        ActionSet::unit_interval()
    }

    fn m1(atoms: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(
            &unit(),
            atoms.iter().map(|a| vec![*a]).collect(),
            weights.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn action_set_validation() {
        assert!(ActionSet::new(vec![1.0], vec![1.0]).is_err());
        assert!(ActionSet::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(ActionSet::new(vec![], vec![]).is_err());
        let sq = ActionSet::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert!((sq.diameter() - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dirac_examples() {
        let d = DiscreteMeasure::dirac(&unit(), &[0.5]).unwrap();
        assert_eq!(d.atom(0), &[0.5]);
        assert_eq!(d.weights(), &[1.0]);
        assert!(matches!(
            DiscreteMeasure::dirac(&unit(), &[2.0]),
            Err(Error::Domain(_))
        ));
        let sq = ActionSet::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let d = DiscreteMeasure::dirac(&sq, &[0.0, 0.0]).unwrap();
        assert_eq!(d.atom(0), &[0.0, 0.0]);
    }

    #[test]
    fn construction_merges_and_validates() {
        let m = m1(&[1.0, 0.0, 1.0], &[0.25, 0.5, 0.25]);
        assert_eq!(m.len(), 2);
        assert_eq!(m.atom(0), &[0.0]);
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert!(DiscreteMeasure::new(&unit(), vec![vec![0.0]], vec![0.9]).is_err());
        assert!(DiscreteMeasure::new(&unit(), vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(&unit(), vec![], vec![]).is_err());
        let near = m1(&[0.3, 0.3 + 1e-14], &[0.5, 0.5]);
        assert_eq!(near.len(), 1);
    }

    #[test]
    fn mixture_examples() {
        let d0 = m1(&[0.0], &[1.0]);
        let d1 = m1(&[1.0], &[1.0]);
        let m = DiscreteMeasure::mixture(&[d0.clone(), d1.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(m, m1(&[0.0, 1.0], &[0.5, 0.5]));
        assert_eq!(DiscreteMeasure::mixture(&[d0.clone()], &[1.0]).unwrap(), d0);
        let m = DiscreteMeasure::mixture(&[m, d1.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(m, m1(&[0.0, 1.0], &[0.25, 0.75]));
        assert!(matches!(
            DiscreteMeasure::mixture(&[d0, d1], &[0.5, 0.6]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn moment_examples() {
        let set = ActionSet::new(vec![0.0], vec![5.0]).unwrap();
        let d2 = DiscreteMeasure::dirac(&set, &[2.0]).unwrap();
        assert_eq!(d2.moment(1, 0), 2.0);
        let half = m1(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(half.moment(1, 0), 0.5);
        assert_eq!(half.moment(2, 0), 0.5);
        assert_eq!(half.moment(0, 0), 1.0);
    }

    #[test]
    fn w1_examples() {
        let set = ActionSet::new(vec![0.0], vec![5.0]).unwrap();
        let a = DiscreteMeasure::dirac(&set, &[1.0]).unwrap();
        let b = DiscreteMeasure::dirac(&set, &[4.0]).unwrap();
        assert_eq!(w1_distance(&a, &b).unwrap(), 3.0);
        assert_eq!(w1_distance(&a, &a).unwrap(), 0.0);
        let half = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let d0 = m1(&[0.0], &[1.0]);
        assert_eq!(w1_distance(&half, &d0).unwrap(), 0.5);
        assert_eq!(w1_transport(&half, &d0).unwrap(), 0.5);
    }

    #[test]
    fn w1_rejects_mismatched_sets() {
        let other = ActionSet::new(vec![0.0], vec![2.0]).unwrap();
        let a = DiscreteMeasure::dirac(&unit(), &[0.5]).unwrap();
        let b = DiscreteMeasure::dirac(&other, &[0.5]).unwrap();
        assert!(matches!(w1_distance(&a, &b), Err(Error::Validation(_))));
    }

    #[test]
    fn w1_rejects_oversized_support() {
        let n = 2100;
        let atoms: Vec<Vec<f64>> = (0..n).map(|k| vec![k as f64 / n as f64]).collect();
        let a = DiscreteMeasure::new(&unit(), atoms, vec![1.0 / n as f64; n]).unwrap();
        assert!(matches!(w1_distance(&a, &a), Err(Error::Capacity(_))));
    }

    #[test]
    fn serde_wire_format() {
        let m = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"atoms":[[0.0],[1.0]],"weights":[0.5,0.5]}"#);
        let repr: MeasureRepr = serde_json::from_str(&json).unwrap();
        let back = DiscreteMeasure::from_repr(&Arc::new(unit()), &repr).unwrap();
        assert_eq!(back, m);
    }

    fn arb_measure_1d() -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec((0.0f64..=1.0, 0.01f64..1.0), 1..8).prop_map(|pairs| {
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let atoms = pairs.iter().map(|p| vec![p.0]).collect();
            let mut weights: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();
            let s: f64 = weights.iter().sum();
            weights[0] += 1.0 - s;
            DiscreteMeasure::new(&ActionSet::unit_interval(), atoms, weights).unwrap()
        })
    }

    proptest! {
        #[test]
        fn translation_invariance_1d(a in arb_measure_1d(), b in arb_measure_1d(), c in -3.0f64..3.0) {
            let wide = ActionSet::new(vec![-3.0], vec![4.0]).unwrap();
            let shift = |m: &DiscreteMeasure| DiscreteMeasure::new(
                &wide,
                m.iter().map(|(x, _)| vec![x[0] + c]).collect(),
                m.weights().to_vec(),
            ).unwrap();
            let lift = |m: &DiscreteMeasure| DiscreteMeasure::new(
                &wide,
                m.iter().map(|(x, _)| vec![x[0]]).collect(),
                m.weights().to_vec(),
            ).unwrap();
            let d0 = w1_distance(&lift(&a), &lift(&b)).unwrap();
            let d1 = w1_distance(&shift(&a), &shift(&b)).unwrap();
            prop_assert!((d0 - d1).abs() <= 1e-12);
        }

        #[test]
        fn cdf_matches_transport(a in arb_measure_1d(), b in arb_measure_1d()) {
            let cdf = w1_cdf(&a, &b);
            let lp = w1_transport(&a, &b).unwrap();
            prop_assert!((cdf - lp).abs() <= 1e-9, "cdf {} lp {}", cdf, lp);
            prop_assert!(cdf <= 1.0 + 1e-12);
        }
    }
}
