//! Interchangeable estimates of the optimization domain.
//!
//! Each estimate implements [`InputDomain`]; [`DomainRegistry`] maps a
//! configuration name (`expert`, `kde`) to the builder that fits it.
//! A domain has a *native* representation (what the objective ultimately
//! sees once converted to a curve) and a *feature* representation where the
//! surrogate and the acquisition search operate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, SplineBasis};
use crate::curves::{Curve, CurveSet, Grid};
use crate::density::{BandwidthConfig, KdeModel};
use crate::error::{check_dim, Error, Result};
use crate::expert::{ExpertConfig, ExpertDomain};
use crate::simplex::HyperplaneMap;
use crate::SeededRng;

pub trait InputDomain: Send + Sync {
    fn name(&self) -> &'static str;

    fn grid(&self) -> &Arc<Grid>;

    /// Historical points in native representation.
    fn historical(&self) -> &[Vec<f64>];

    fn feature_dim(&self) -> usize;

    fn to_features(&self, native: &[f64]) -> Vec<f64>;

    fn from_features(&self, features: &[f64]) -> Vec<f64>;

    fn is_feasible(&self, native: &[f64]) -> bool;

    /// Candidate points in native representation. They need not all be
    /// feasible; callers filter with [`InputDomain::is_feasible`].
    fn sample_candidates(&self, count: usize, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>>;

    /// Initial per-feature step of the local acquisition search.
    fn local_steps(&self) -> Vec<f64>;

    /// The curve handed to the objective.
    fn to_curve(&self, native: &[f64]) -> Result<Curve>;

    /// Short description for reports.
    fn summary(&self) -> serde_json::Value;

    /// Human-readable summary lines.
    fn describe(&self) -> Vec<String> {
        vec![format!("{}: {}", self.name(), self.summary())]
    }

    /// Writes the fitted domain into `dir`; returns the files written.
    fn write_artifacts(&self, _dir: &Path) -> Result<Vec<PathBuf>> {
        Ok(Vec::new())
    }
}

fn default_delta() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

/// Parameters for every registered domain; each builder reads its part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Constraint list; the reference list for the grid size when absent.
    #[serde(default)]
    pub expert: Option<ExpertConfig>,
    #[serde(default)]
    pub basis: BasisConfig,
    /// L2 radius defining the density threshold.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub bandwidth: BandwidthConfig,
    /// Restrict coefficient vectors to the nonnegative orthant.
    #[serde(default = "default_true")]
    pub nonnegative: bool,
    /// Previously fitted density model to reuse instead of refitting.
    #[serde(default)]
    pub model: Option<PathBuf>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            expert: None,
            basis: BasisConfig::default(),
            delta: default_delta(),
            bandwidth: BandwidthConfig::default(),
            nonnegative: true,
            model: None,
        }
    }
}

impl DomainConfig {
    pub fn expert_config(&self, d: usize) -> ExpertConfig {
        self.expert.clone().unwrap_or_else(|| {
            if d >= 6 {
                ExpertConfig::reference(d)
            } else {
                ExpertConfig {
                    bound: Some(crate::expert::BoundConfig { indices: None, eps: 0.05 }),
                    ..Default::default()
                }
            }
        })
    }
}

/// Constraint-based domain searched in hyperplane coordinates.
pub struct ExpertSearchDomain {
    domain: ExpertDomain,
    map: HyperplaneMap,
    history: CurveSet,
    native: Vec<Vec<f64>>,
}

impl ExpertSearchDomain {
    pub fn new(domain: ExpertDomain, history: CurveSet) -> Result<Self> {
        check_dim(domain.dim(), history.dim())?;
        Ok(Self {
            map: HyperplaneMap::new(history.dim()),
            native: history.rows(),
            domain,
            history,
        })
    }

    pub fn fit(history: &CurveSet, config: &ExpertConfig) -> Result<Self> {
        Self::new(ExpertDomain::fit(history, config)?, history.clone())
    }

    pub fn expert(&self) -> &ExpertDomain {
        &self.domain
    }
}

impl InputDomain for ExpertSearchDomain {
    fn name(&self) -> &'static str {
        "expert"
    }

    fn grid(&self) -> &Arc<Grid> {
        self.history.grid()
    }

    fn historical(&self) -> &[Vec<f64>] {
        &self.native
    }

    fn feature_dim(&self) -> usize {
        self.map.coord_dim()
    }

    fn to_features(&self, native: &[f64]) -> Vec<f64> {
        self.map.forward(native).expect("native point has grid dimension")
    }

    fn from_features(&self, features: &[f64]) -> Vec<f64> {
        self.map.backward(features).expect("feature point has coordinate dimension")
    }

    fn is_feasible(&self, native: &[f64]) -> bool {
        self.domain.is_member(native)
    }

    fn sample_candidates(&self, count: usize, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .domain
            .sample_candidates(&self.history, count, rng)?
            .into_iter()
            .map(|c| c.values().to_vec())
            .collect())
    }

    fn local_steps(&self) -> Vec<f64> {
        vec![self.domain.perturbation_sd(); self.feature_dim()]
    }

    fn to_curve(&self, native: &[f64]) -> Result<Curve> {
        Curve::new(self.grid().clone(), native)
    }

    fn summary(&self) -> serde_json::Value {
        serde_json::to_value(&self.domain).unwrap_or(serde_json::Value::Null)
    }

    fn describe(&self) -> Vec<String> {
        let d = &self.domain;
        let mut out = vec![format!("expert domain: n = {}, d = {}", self.history.len(), d.dim())];
        let fmt = |v: f64| format!("{v:.4}");
        if let Some(env) = d.bound() {
            for (s, j) in env.indices.iter().enumerate() {
                out.push(format!(
                    "  bound x_{}: [{}, {}] +- {}",
                    j + 1,
                    fmt(env.min[s]),
                    fmt(env.max[s]),
                    env.eps
                ));
            }
        }
        if let Some(env) = d.increment() {
            for (s, j) in env.indices.iter().enumerate() {
                out.push(format!(
                    "  increment x_{} - x_{}: [{}, {}] +- {}",
                    j + 2,
                    j + 1,
                    fmt(env.min[s]),
                    fmt(env.max[s]),
                    env.eps
                ));
            }
        }
        if let Some(w) = d.max_variation() {
            out.push(format!(
                "  max variation on [{}, {}]: <= {} + {}",
                w.start + 1,
                w.end + 1,
                fmt(w.cap),
                w.eps
            ));
        }
        if let Some(w) = d.total_variation() {
            out.push(format!(
                "  total variation on [{}, {}]: <= {} + {}",
                w.start + 1,
                w.end + 1,
                fmt(w.cap),
                w.eps
            ));
        }
        out
    }

    fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("expert_domain.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.domain)?)?;
        Ok(vec![path])
    }
}

/// Density-based domain searched directly in coefficient space.
pub struct KdeSearchDomain {
    model: KdeModel,
    basis: SplineBasis,
    grid: Arc<Grid>,
    nonnegative: bool,
}

impl KdeSearchDomain {
    pub fn new(model: KdeModel, grid: Arc<Grid>, nonnegative: bool) -> Result<Self> {
        let basis = SplineBasis::from_config(model.basis_config())?;
        check_dim(basis.len(), model.dim())?;
        Ok(Self {
            model,
            basis,
            grid,
            nonnegative,
        })
    }

    pub fn fit(history: &CurveSet, config: &DomainConfig) -> Result<Self> {
        let basis = SplineBasis::from_config(&config.basis)?;
        let model = KdeModel::fit(history, &basis, config.delta, &config.bandwidth)?;
        Self::new(model, history.grid().clone(), config.nonnegative)
    }

    pub fn model(&self) -> &KdeModel {
        &self.model
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }
}

impl InputDomain for KdeSearchDomain {
    fn name(&self) -> &'static str {
        "kde"
    }

    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn historical(&self) -> &[Vec<f64>] {
        self.model.alphas()
    }

    fn feature_dim(&self) -> usize {
        self.model.dim()
    }

    fn to_features(&self, native: &[f64]) -> Vec<f64> {
        native.to_vec()
    }

    fn from_features(&self, features: &[f64]) -> Vec<f64> {
        features.to_vec()
    }

    fn is_feasible(&self, native: &[f64]) -> bool {
        if native.len() != self.model.dim() {
            return false;
        }
        if self.nonnegative && native.iter().any(|a| *a < 0.0) {
            return false;
        }
        self.model.is_admissible(native) && self.basis.synthesize(native, &self.grid).is_ok()
    }

    fn sample_candidates(&self, count: usize, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
        Ok((0..count).map(|_| self.model.sample(rng)).collect())
    }

    fn local_steps(&self) -> Vec<f64> {
        self.model.lambdas().to_vec()
    }

    fn to_curve(&self, native: &[f64]) -> Result<Curve> {
        self.basis.synthesize(native, &self.grid)
    }

    fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.model.alphas().len(),
            "k": self.model.dim(),
            "lambdas": self.model.lambdas(),
            "threshold": self.model.threshold(),
            "log_threshold": self.model.log_threshold(),
            "delta": self.model.delta(),
            "basis": self.model.basis_config(),
        })
    }

    fn describe(&self) -> Vec<String> {
        let lam: Vec<String> = self.model.lambdas().iter().map(|l| format!("{l:.5}")).collect();
        vec![
            format!(
                "kde domain: n = {}, d = {}, K = {}, delta = {}",
                self.model.alphas().len(),
                self.grid.len(),
                self.model.dim(),
                self.model.delta()
            ),
            format!("  lambda = ({})", lam.join(", ")),
            format!(
                "  threshold = {:e} (log {:.4})",
                self.model.threshold(),
                self.model.log_threshold()
            ),
        ]
    }

    fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("kde_model.json");
        let csv = dir.join("kde_alphas.csv");
        self.model.save(&json, &csv)?;
        Ok(vec![json, csv])
    }
}

/// Fits one kind of domain from historical curves.
pub trait DomainBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, history: &CurveSet, config: &DomainConfig) -> Result<Box<dyn InputDomain>>;
}

struct ExpertBuilder;

impl DomainBuilder for ExpertBuilder {
    fn name(&self) -> &'static str {
        "expert"
    }

    fn build(&self, history: &CurveSet, config: &DomainConfig) -> Result<Box<dyn InputDomain>> {
        let cfg = config.expert_config(history.dim());
        Ok(Box::new(ExpertSearchDomain::fit(history, &cfg)?))
    }
}

struct KdeBuilder;

impl DomainBuilder for KdeBuilder {
    fn name(&self) -> &'static str {
        "kde"
    }

    fn build(&self, history: &CurveSet, config: &DomainConfig) -> Result<Box<dyn InputDomain>> {
        match &config.model {
            Some(path) => {
                let model = KdeModel::load(path)?;
                Ok(Box::new(KdeSearchDomain::new(model, history.grid().clone(), config.nonnegative)?))
            }
            None => Ok(Box::new(KdeSearchDomain::fit(history, config)?)),
        }
    }
}

/// Domain builders keyed by name.
pub struct DomainRegistry {
    builders: BTreeMap<&'static str, Box<dyn DomainBuilder>>,
}

impl Default for DomainRegistry {
    fn default() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
        };
        r.register(Box::new(ExpertBuilder));
        r.register(Box::new(KdeBuilder));
        r
    }
}

impl DomainRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, builder: Box<dyn DomainBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(&self, name: &str, history: &CurveSet, config: &DomainConfig) -> Result<Box<dyn InputDomain>> {
        let builder = self.builders.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "domain",
            name: name.to_owned(),
            known: self.names().join(", "),
        })?;
        builder.build(history, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::gen_abc_history;
    use rand::SeedableRng;

    #[test]
    fn registry_lookup() {
        let reg = DomainRegistry::default();
        assert_eq!(reg.names(), vec!["expert", "kde"]);
        let mut rng = SeededRng::seed_from_u64(0);
        let history = gen_abc_history(40, &mut rng).unwrap();
        let err = reg.build("convex_hull", &history, &DomainConfig::default());
        assert!(matches!(err, Err(Error::UnknownStrategy { .. })));
        let dom = reg.build("expert", &history, &DomainConfig::default()).unwrap();
        assert_eq!(dom.name(), "expert");
        assert_eq!(dom.feature_dim(), 20);
        assert!(dom.historical().iter().all(|x| dom.is_feasible(x)));
    }

    #[test]
    fn expert_features_round_trip() {
        let mut rng = SeededRng::seed_from_u64(1);
        let history = gen_abc_history(30, &mut rng).unwrap();
        let dom = ExpertSearchDomain::fit(&history, &ExpertConfig::reference(21)).unwrap();
        let x = &dom.historical()[3];
        let back = dom.from_features(&dom.to_features(x));
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kde_domain_training_points_feasible() {
        let mut rng = SeededRng::seed_from_u64(2);
        let history = gen_abc_history(60, &mut rng).unwrap();
        let cfg = DomainConfig {
            bandwidth: BandwidthConfig {
                max_evals_per_start: 200,
                ..Default::default()
            },
            ..Default::default()
        };
        let dom = DomainRegistry::default().build("kde", &history, &cfg).unwrap();
        assert_eq!(dom.feature_dim(), 8);
        let feasible = dom.historical().iter().filter(|a| dom.is_feasible(a)).count();
        let nonneg = dom.historical().iter().filter(|a| a.iter().all(|v| *v >= 0.0)).count();
        assert_eq!(feasible, nonneg);
        let curve = dom.to_curve(&dom.historical()[0]).unwrap();
        assert_eq!(curve.len(), 21);
    }
}
