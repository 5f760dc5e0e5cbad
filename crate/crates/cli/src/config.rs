//! Run configuration, read from TOML (or JSON when the file ends in `.json`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use curvopt::acquisition::SearchBudget;
use curvopt::basis::BasisConfig;
use curvopt::curves::HeaderMode;
use curvopt::density::BandwidthConfig;
use curvopt::domain::DomainConfig;
use curvopt::expert::ExpertConfig;
use curvopt::objective::ObjectiveConfig;
use curvopt::optimizer::EgoConfig;
use curvopt::surrogate::GpConfig;
use curvopt::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub domain: DomainSection,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub ei: SearchBudget,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub objective: Option<ObjectiveConfig>,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    /// Only `abc` is available.
    #[serde(default = "default_family")]
    pub family: String,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_family() -> String {
    "abc".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV of historical curves, one per row.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub header: HeaderMode,
    /// Generated history instead of a file.
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

fn default_domain_type() -> String {
    "kde".into()
}

fn default_delta() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    #[serde(rename = "type", default = "default_domain_type")]
    pub kind: String,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_true")]
    pub nonnegative: bool,
    /// Previously fitted density model (JSON written by `fit-domain`).
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub expert: Option<ExpertConfig>,
    #[serde(default)]
    pub bandwidth: BandwidthConfig,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            kind: default_domain_type(),
            delta: default_delta(),
            nonnegative: true,
            model: None,
            expert: None,
            bandwidth: BandwidthConfig::default(),
        }
    }
}

fn default_thirty() -> usize {
    30
}

fn default_output() -> PathBuf {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_thirty")]
    pub n_init: usize,
    #[serde(default = "default_thirty")]
    pub n_iter: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub maximize: bool,
    #[serde(default)]
    pub min_ei: Option<f64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_init: 30,
            n_iter: 30,
            seed: None,
            maximize: false,
            min_ei: None,
            output: default_output(),
        }
    }
}

fn default_seeds() -> u64 {
    10
}

fn default_methods() -> Vec<String> {
    vec!["kde".into(), "expert".into()]
}

fn default_brute() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    /// Number of run seeds, counted up from the base seed.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    /// Brute-force reference sample size; 0 skips it.
    #[serde(default = "default_brute")]
    pub brute_samples: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            methods: default_methods(),
            brute_samples: default_brute(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    /// Reads the file and resolves its paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::parse(&text, json)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.data.path {
            resolve(base, p);
        }
        if let Some(p) = &mut self.domain.model {
            resolve(base, p);
        }
        resolve(base, &mut self.run.output);
        if let Some(obj) = &mut self.objective {
            if let Some(p) = &mut obj.anchor_file {
                resolve(base, p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("[data] needs exactly one of `path` or `synthetic`".into())),
        }
        if let Some(s) = &self.data.synthetic {
            if s.family != "abc" {
                return Err(Error::Config(format!("unknown synthetic family `{}` (known: abc)", s.family)));
            }
            if s.n == 0 {
                return Err(Error::Config("synthetic n must be >= 1".into()));
            }
        }
        if !(self.domain.delta > 0.0) {
            return Err(Error::Config(format!("delta must be > 0, got {}", self.domain.delta)));
        }
        self.ei.validate()
    }

    pub fn domain_config(&self) -> DomainConfig {
        DomainConfig {
            expert: self.domain.expert.clone(),
            basis: self.basis.clone(),
            delta: self.domain.delta,
            bandwidth: self.domain.bandwidth.clone(),
            nonnegative: self.domain.nonnegative,
            model: self.domain.model.clone(),
        }
    }

    pub fn ego_config(&self, seed: u64) -> EgoConfig {
        EgoConfig {
            n_init: self.run.n_init,
            n_iter: self.run.n_iter,
            seed,
            maximize: self.run.maximize,
            min_ei: self.run.min_ei,
            noise_sd: self.objective.as_ref().map_or(0.0, |o| o.noise_sd),
            gp: self.gp.clone(),
            search: self.ei,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml() {
        let cfg = RunConfig::parse("[data]\npath = \"h.csv\"\n", false).unwrap();
        assert_eq!(cfg.domain.kind, "kde");
        assert_eq!(cfg.run.n_init, 30);
        assert_eq!(cfg.ei.n_candidates, 2048);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("[data]\npath = \"h.csv\"\n[run]\nn_iters = 3\n", false);
        assert!(matches!(err, Err(Error::Config(_))));
        let err = RunConfig::parse("[data]\npath = \"h.csv\"\n[colour]\n", false);
        assert!(err.is_err());
    }

    #[test]
    fn json_and_toml_agree() {
        let t = RunConfig::parse(
            "[data]\nsynthetic = { n = 50, seed = 3 }\n[domain]\ntype = \"expert\"\n[gp]\nnoise = \"estimate\"\n",
            false,
        )
        .unwrap();
        let j = RunConfig::parse(
            r#"{"data": {"synthetic": {"n": 50, "seed": 3}}, "domain": {"type": "expert"}, "gp": {"noise": "estimate"}}"#,
            true,
        )
        .unwrap();
        assert_eq!(serde_json::to_value(&t).unwrap(), serde_json::to_value(&j).unwrap());
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut cfg = RunConfig::parse("[data]\npath = \"h.csv\"\n[run]\noutput = \"/abs/out\"\n", false).unwrap();
        cfg.resolve_paths(Path::new("/cfg/dir"));
        assert_eq!(cfg.data.path.unwrap(), PathBuf::from("/cfg/dir/h.csv"));
        assert_eq!(cfg.run.output, PathBuf::from("/abs/out"));
    }

    #[test]
    fn data_source_must_be_unique() {
        let cfg = RunConfig::parse("[data]\n", false).unwrap();
        assert!(cfg.validate().is_err());
    }
}
