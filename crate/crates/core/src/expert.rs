//! Constraint-based estimate of the input domain.
//!
//! Envelopes are taken from the historical curves and widened by a tolerance
//! `eps`. All inequalities are non-strict. Indices in [`ExpertConfig`] are
//! 1-based; they are stored 0-based once fitted.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curves::{normalize, Curve, CurveSet};
use crate::error::{check_dim, Error, Result};
use crate::SeededRng;

const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    /// Components to constrain; all of them when absent.
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementConfig {
    /// Left index `j` of each constrained pair `(j, j + 1)`; all pairs when absent.
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Increments `x[j+1] - x[j]` for `j` in `start..=end` are constrained.
    pub start: usize,
    pub end: usize,
    pub eps: f64,
}

fn default_perturbation_scale() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    #[serde(default)]
    pub bound: Option<BoundConfig>,
    #[serde(default)]
    pub increment: Option<IncrementConfig>,
    #[serde(default)]
    pub max_variation: Option<WindowConfig>,
    #[serde(default)]
    pub total_variation: Option<WindowConfig>,
    /// Candidate perturbation sd as a fraction of the mean envelope half-width.
    #[serde(default = "default_perturbation_scale")]
    pub perturbation_scale: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            bound: None,
            increment: None,
            max_variation: None,
            total_variation: None,
            perturbation_scale: default_perturbation_scale(),
        }
    }
}

impl ExpertConfig {
    /// The fuel-rod constraint list, with the end positions following `d`.
    ///
    /// Bounds (eps 0.05) on the first and last component, increments (eps 0.03)
    /// on the two first and two last pairs, and max / total variation
    /// (eps 0.03 / 0.1) over increments `3..=d-2`.
    pub fn reference(d: usize) -> Self {
        assert!(d >= 6, "reference constraints need d >= 6");
        Self {
            bound: Some(BoundConfig {
                indices: Some(vec![1, d]),
                eps: 0.05,
            }),
            increment: Some(IncrementConfig {
                indices: Some(vec![1, 2, d - 2, d - 1]),
                eps: 0.03,
            }),
            max_variation: Some(WindowConfig {
                start: 3,
                end: d - 2,
                eps: 0.03,
            }),
            total_variation: Some(WindowConfig {
                start: 3,
                end: d - 2,
                eps: 0.1,
            }),
            perturbation_scale: default_perturbation_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// 0-based positions (component index, or left index of an increment).
    pub indices: Vec<usize>,
    pub eps: f64,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCap {
    /// 0-based inclusive range of increment indices.
    pub start: usize,
    pub end: usize,
    pub eps: f64,
    pub cap: f64,
}

/// User-supplied constraint evaluated alongside the built-in families.
pub trait CurvePredicate: Send + Sync {
    fn name(&self) -> &str;
    fn holds(&self, x: &[f64]) -> bool;
}

/// `A [x_i; x] <= b` for every historical curve `x_i`.
pub struct LinearHistoryConstraint {
    name: String,
    a: DMatrix<f64>,
    b: DVector<f64>,
    history: Vec<DVector<f64>>,
}

impl LinearHistoryConstraint {
    pub fn new(name: impl Into<String>, a: DMatrix<f64>, b: DVector<f64>, history: &CurveSet) -> Result<Self> {
        let d = history.dim();
        check_dim(2 * d, a.ncols())?;
        check_dim(a.nrows(), b.len())?;
        Ok(Self {
            name: name.into(),
            a,
            b,
            history: history
                .curves()
                .iter()
                .map(|c| DVector::from_column_slice(c.values()))
                .collect(),
        })
    }
}

impl CurvePredicate for LinearHistoryConstraint {
    fn name(&self) -> &str {
        &self.name
    }

    fn holds(&self, x: &[f64]) -> bool {
        let d = x.len();
        let a_hist = self.a.columns(0, d);
        let a_new = self.a.columns(d, d);
        let xv = DVector::from_column_slice(x);
        let from_x = a_new * xv;
        self.history.iter().all(|xi| {
            let lhs = &a_hist * xi + &from_x;
            lhs.iter().zip(self.b.iter()).all(|(l, b)| l <= b)
        })
    }
}

#[derive(Clone, Serialize, Deserialize)]
pub struct ExpertDomain {
    d: usize,
    bound: Option<Envelope>,
    increment: Option<Envelope>,
    max_variation: Option<WindowCap>,
    total_variation: Option<WindowCap>,
    /// Historical per-component range, used to scale candidate perturbations.
    component_min: Vec<f64>,
    component_max: Vec<f64>,
    perturbation_scale: f64,
    #[serde(skip)]
    generic: Vec<Arc<dyn CurvePredicate>>,
}

impl fmt::Debug for ExpertDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExpertDomain")
            .field("d", &self.d)
            .field("bound", &self.bound)
            .field("increment", &self.increment)
            .field("max_variation", &self.max_variation)
            .field("total_variation", &self.total_variation)
            .field("generic", &self.generic.iter().map(|g| g.name().to_owned()).collect::<Vec<_>>())
            .finish()
    }
}

/// Outcome of a membership test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Membership {
    pub violations: Vec<String>,
}

impl Membership {
    pub fn inside(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("tolerance must be finite and >= 0, got {eps}")))
    }
}

fn to_zero_based(indices: &[usize], upper: usize, what: &str) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&j| {
            if (1..=upper).contains(&j) {
                Ok(j - 1)
            } else {
                Err(Error::BadWindow(format!("{what} index {j} outside 1..={upper}")))
            }
        })
        .collect()
}

fn window(cfg: &WindowConfig, d: usize) -> Result<(usize, usize)> {
    check_eps(cfg.eps)?;
    if cfg.start < 1 || cfg.start >= cfg.end || cfg.end > d - 1 {
        return Err(Error::BadWindow(format!(
            "window [{}, {}] must satisfy 1 <= start < end <= {}",
            cfg.start,
            cfg.end,
            d - 1
        )));
    }
    Ok((cfg.start - 1, cfg.end - 1))
}

fn max_abs_increment(x: &[f64], start: usize, end: usize) -> f64 {
    (start..=end)
        .map(|j| (x[j + 1] - x[j]).abs())
        .fold(0.0, f64::max)
}

fn total_variation(x: &[f64], start: usize, end: usize) -> f64 {
    (start..=end).map(|j| (x[j + 1] - x[j]).abs()).sum()
}

fn envelope(history: &CurveSet, indices: Vec<usize>, eps: f64, f: impl Fn(&[f64], usize) -> f64) -> Envelope {
    let mut min = vec![f64::INFINITY; indices.len()];
    let mut max = vec![f64::NEG_INFINITY; indices.len()];
    for c in history.curves() {
        for (slot, &j) in indices.iter().enumerate() {
            let v = f(c.values(), j);
            min[slot] = min[slot].min(v);
            max[slot] = max[slot].max(v);
        }
    }
    Envelope { indices, eps, min, max }
}

impl ExpertDomain {
    /// Computes envelopes and caps over `history`.
    pub fn fit(history: &CurveSet, config: &ExpertConfig) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::EmptySet);
        }
        let d = history.dim();
        if !(config.perturbation_scale >= 0.0) {
            return Err(Error::Config("perturbation_scale must be >= 0".into()));
        }

        let bound = match &config.bound {
            Some(b) => {
                check_eps(b.eps)?;
                let idx = match &b.indices {
                    Some(i) => to_zero_based(i, d, "bound")?,
                    None => (0..d).collect(),
                };
                Some(envelope(history, idx, b.eps, |x, j| x[j]))
            }
            None => None,
        };
        let increment = match &config.increment {
            Some(b) => {
                check_eps(b.eps)?;
                let idx = match &b.indices {
                    Some(i) => to_zero_based(i, d - 1, "increment")?,
                    None => (0..d - 1).collect(),
                };
                Some(envelope(history, idx, b.eps, |x, j| x[j + 1] - x[j]))
            }
            None => None,
        };
        let cap = |cfg: &WindowConfig, f: fn(&[f64], usize, usize) -> f64| -> Result<WindowCap> {
            let (start, end) = window(cfg, d)?;
            let cap = history
                .curves()
                .iter()
                .map(|c| f(c.values(), start, end))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(WindowCap {
                start,
                end,
                eps: cfg.eps,
                cap,
            })
        };
        let max_variation = config.max_variation.as_ref().map(|w| cap(w, max_abs_increment)).transpose()?;
        let total_variation = config.total_variation.as_ref().map(|w| cap(w, total_variation)).transpose()?;

        let all = envelope(history, (0..d).collect(), 0.0, |x, j| x[j]);
        Ok(Self {
            d,
            bound,
            increment,
            max_variation,
            total_variation,
            component_min: all.min,
            component_max: all.max,
            perturbation_scale: config.perturbation_scale,
            generic: Vec::new(),
        })
    }

    /// Adds a user predicate. Historical curves are not re-checked against it.
    pub fn with_predicate(mut self, predicate: Arc<dyn CurvePredicate>) -> Self {
        self.generic.push(predicate);
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn bound(&self) -> Option<&Envelope> {
        self.bound.as_ref()
    }

    pub fn increment(&self) -> Option<&Envelope> {
        self.increment.as_ref()
    }

    pub fn max_variation(&self) -> Option<&WindowCap> {
        self.max_variation.as_ref()
    }

    pub fn total_variation(&self) -> Option<&WindowCap> {
        self.total_variation.as_ref()
    }

    /// Membership test on raw values; positivity is always required.
    pub fn check_values(&self, x: &[f64]) -> Result<Membership> {
        check_dim(self.d, x.len())?;
        let mut violations = Vec::new();
        if x.iter().any(|v| !(*v > 0.0)) {
            violations.push("positive".to_owned());
        }
        if let Some(env) = &self.bound {
            let ok = env.indices.iter().enumerate().all(|(s, &j)| {
                env.min[s] - env.eps <= x[j] && x[j] <= env.max[s] + env.eps
            });
            if !ok {
                violations.push("bound".to_owned());
            }
        }
        if let Some(env) = &self.increment {
            let ok = env.indices.iter().enumerate().all(|(s, &j)| {
                let inc = x[j + 1] - x[j];
                env.min[s] - env.eps <= inc && inc <= env.max[s] + env.eps
            });
            if !ok {
                violations.push("increment".to_owned());
            }
        }
        if let Some(w) = &self.max_variation {
            if max_abs_increment(x, w.start, w.end) > w.cap + w.eps {
                violations.push("max_variation".to_owned());
            }
        }
        if let Some(w) = &self.total_variation {
            if total_variation(x, w.start, w.end) > w.cap + w.eps {
                violations.push("total_variation".to_owned());
            }
        }
        for g in &self.generic {
            if !g.holds(x) {
                violations.push(g.name().to_owned());
            }
        }
        Ok(Membership { violations })
    }

    pub fn contains(&self, curve: &Curve) -> Result<Membership> {
        self.check_values(curve.values())
    }

    pub fn is_member(&self, x: &[f64]) -> bool {
        self.check_values(x).map(|m| m.inside()).unwrap_or(false)
    }

    /// Standard deviation of candidate perturbations.
    pub fn perturbation_sd(&self) -> f64 {
        let mut total = 0.0;
        for j in 0..self.d {
            let mut half = 0.5 * (self.component_max[j] - self.component_min[j]);
            if let Some(env) = &self.bound {
                if env.indices.contains(&j) {
                    half += env.eps;
                }
            }
            total += half;
        }
        self.perturbation_scale * total / self.d as f64
    }

    /// Draws `count` members by perturbing historical curves.
    ///
    /// Each candidate starts from a random historical curve, adds a zero-sum
    /// Gaussian perturbation, renormalizes and is kept if it lies in the
    /// domain. After [`MAX_REJECTIONS`] failures the unperturbed historical
    /// curve is returned instead.
    pub fn sample_candidates(&self, history: &CurveSet, count: usize, rng: &mut SeededRng) -> Result<Vec<Curve>> {
        check_dim(self.d, history.dim())?;
        let sd = self.perturbation_sd();
        let n = history.len();
        let mut out = Vec::with_capacity(count);
        let mut noise = vec![0.0; self.d];
        for _ in 0..count {
            let mut accepted = None;
            let mut base = &history.curves()[0];
            for _ in 0..MAX_REJECTIONS {
                base = &history.curves()[rng.random_range(0..n)];
                for e in noise.iter_mut() {
                    *e = sd * rng.sample::<f64, _>(StandardNormal);
                }
                let shift = noise.iter().sum::<f64>() / self.d as f64;
                let x: Vec<f64> = base
                    .values()
                    .iter()
                    .zip(&noise)
                    .map(|(v, e)| v + e - shift)
                    .collect();
                let Ok(x) = normalize(&x) else { continue };
                if self.is_member(&x) {
                    accepted = Some(Curve::new(history.grid().clone(), &x)?);
                    break;
                }
            }
            out.push(accepted.unwrap_or_else(|| base.clone()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn set(rows: &[Vec<f64>]) -> CurveSet {
        let grid = Arc::new(Grid::uniform(rows[0].len()).unwrap());
        CurveSet::from_rows(grid, rows).unwrap()
    }

    fn random_set(seed: u64, n: usize, d: usize) -> CurveSet {
        let mut rng = SeededRng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.2..2.0)).collect())
            .collect();
        set(&rows)
    }

    fn all_constraints(d: usize, eps: f64) -> ExpertConfig {
        ExpertConfig {
            bound: Some(BoundConfig { indices: None, eps }),
            increment: Some(IncrementConfig { indices: None, eps }),
            max_variation: Some(WindowConfig { start: 1, end: d - 1, eps }),
            total_variation: Some(WindowConfig { start: 2, end: d - 2, eps }),
            perturbation_scale: 0.25,
        }
    }

    #[test]
    fn single_curve_zero_eps_is_a_point() {
        let history = set(&[vec![1.0, 1.0, 1.0]]);
        let cfg = ExpertConfig {
            bound: Some(BoundConfig { indices: None, eps: 0.0 }),
            ..Default::default()
        };
        let dom = ExpertDomain::fit(&history, &cfg).unwrap();
        assert!(dom.is_member(&[1.0, 1.0, 1.0]));
        assert!(!dom.is_member(&[1.0 + 1e-12, 1.0, 1.0 - 1e-12]));
        let mut rng = SeededRng::seed_from_u64(1);
        let samples = dom.sample_candidates(&history, 5, &mut rng).unwrap();
        assert!(samples.iter().all(|c| c.values() == [1.0, 1.0, 1.0]));
    }

    #[test]
    fn reference_config_matches_fuel_rod_list() {
        let cfg = ExpertConfig::reference(18);
        assert_eq!(cfg.bound.as_ref().unwrap().indices, Some(vec![1, 18]));
        assert_eq!(cfg.bound.as_ref().unwrap().eps, 0.05);
        assert_eq!(cfg.increment.as_ref().unwrap().indices, Some(vec![1, 2, 16, 17]));
        assert_eq!(cfg.increment.as_ref().unwrap().eps, 0.03);
        let mv = cfg.max_variation.unwrap();
        assert_eq!((mv.start, mv.end, mv.eps), (3, 16, 0.03));
        let tv = cfg.total_variation.unwrap();
        assert_eq!((tv.start, tv.end, tv.eps), (3, 16, 0.1));
        let shifted = ExpertConfig::reference(21);
        assert_eq!(shifted.increment.unwrap().indices, Some(vec![1, 2, 19, 20]));
        assert_eq!(shifted.total_variation.unwrap().end, 19);
    }

    #[test]
    fn forced_and_boundary_bound_cases() {
        let history = set(&[vec![0.8, 1.0, 1.2], vec![0.9, 1.0, 1.1]]);
        let eps = 0.05;
        let cfg = ExpertConfig {
            bound: Some(BoundConfig { indices: Some(vec![1]), eps }),
            ..Default::default()
        };
        let dom = ExpertDomain::fit(&history, &cfg).unwrap();
        let env = dom.bound().unwrap();
        let edge = env.max[0] + eps;
        assert!(dom.is_member(&[edge, 1.0, 2.0 - edge]));
        let over = env.max[0] + 2.0 * eps;
        let m = dom.check_values(&[over, 1.0, 2.0 - over]).unwrap();
        assert_eq!(m.violations, vec!["bound".to_owned()]);
    }

    #[test]
    fn window_validation() {
        let history = random_set(3, 4, 6);
        for (start, end) in [(0, 3), (3, 3), (4, 2), (2, 6)] {
            let cfg = ExpertConfig {
                max_variation: Some(WindowConfig { start, end, eps: 0.1 }),
                ..Default::default()
            };
            assert!(matches!(ExpertDomain::fit(&history, &cfg), Err(Error::BadWindow(_))));
        }
        let cfg = ExpertConfig {
            bound: Some(BoundConfig { indices: Some(vec![7]), eps: 0.1 }),
            ..Default::default()
        };
        assert!(matches!(ExpertDomain::fit(&history, &cfg), Err(Error::BadWindow(_))));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let history = random_set(4, 3, 5);
        let dom = ExpertDomain::fit(&history, &all_constraints(5, 0.1)).unwrap();
        assert!(matches!(dom.check_values(&[1.0; 4]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn linear_history_predicate() {
        let history = set(&[vec![1.0, 1.0], vec![0.5, 1.5]]);
        // x_1 - x_{i,1} <= 0.65 for every historical curve
        let mut a = DMatrix::zeros(1, 4);
        a[(0, 0)] = -1.0;
        a[(0, 2)] = 1.0;
        let pred = LinearHistoryConstraint::new("first_step", a, DVector::from_element(1, 0.65), &history).unwrap();
        let dom = ExpertDomain::fit(&history, &ExpertConfig::default())
            .unwrap()
            .with_predicate(Arc::new(pred));
        assert!(dom.is_member(&[1.1, 0.9]));
        assert_eq!(dom.check_values(&[1.2, 0.8]).unwrap().violations, vec!["first_step".to_owned()]);
    }

    #[test]
    fn wide_eps_sampler_moves_away_from_history() {
        let history = random_set(7, 30, 10);
        let dom = ExpertDomain::fit(&history, &all_constraints(10, 0.5)).unwrap();
        let mut rng = SeededRng::seed_from_u64(11);
        let samples = dom.sample_candidates(&history, 200, &mut rng).unwrap();
        let novel = samples
            .iter()
            .filter(|s| !history.curves().iter().any(|h| h.values() == s.values()))
            .count();
        assert!(novel > 100, "only {novel} novel samples");
        for s in &samples {
            assert!(dom.contains(s).unwrap().inside());
            let mean = s.values().iter().sum::<f64>() / 10.0;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn history_is_contained(seed in 0u64..1000, n in 1usize..20, d in 5usize..15) {
            let history = random_set(seed, n, d);
            let dom = ExpertDomain::fit(&history, &all_constraints(d, 0.0)).unwrap();
            for c in history.curves() {
                prop_assert!(dom.contains(c).unwrap().inside());
            }
        }

        #[test]
        fn wider_eps_never_shrinks(seed in 0u64..1000, eps in 0.0f64..0.2, extra in 0.0f64..0.2,
                                   probe in prop::collection::vec(0.1f64..2.0, 8)) {
            let history = random_set(seed, 5, 8);
            let narrow = ExpertDomain::fit(&history, &all_constraints(8, eps)).unwrap();
            let wide = ExpertDomain::fit(&history, &all_constraints(8, eps + extra)).unwrap();
            let x = normalize(&probe).unwrap();
            if narrow.is_member(&x) {
                prop_assert!(wide.is_member(&x));
            }
            prop_assert_eq!(narrow.check_values(&x).unwrap(), narrow.check_values(&x).unwrap());
        }
    }
}
