//! Objectives the optimizer can evaluate, selected by name.
//!
//! Built in: `distance_sine` (anchor chosen in the config), `abc_general`
//! (distance-sine anchored at the (12, 6, 1) family member) and `external`
//! (a program reading a curve CSV on stdin and printing one number).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curves::{load_curveset, write_curveset, Curve, CurveSet, Grid, HeaderMode};
use crate::error::{Error, Result};
use crate::testbed::{make_abc_anchor, AbcFamily, DistanceSine};

pub trait Objective: Send {
    fn name(&self) -> &str;

    fn evaluate(&mut self, curve: &Curve) -> std::result::Result<f64, String>;

    /// Analytic testbeds get synthetic noise injected by the optimizer;
    /// real evaluators are assumed to be noisy on their own.
    fn is_testbed(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub name: String,
    /// Observation noise standard deviation.
    #[serde(default)]
    pub noise_sd: f64,
    /// distance_sine: single-curve CSV holding the anchor.
    #[serde(default)]
    pub anchor_file: Option<PathBuf>,
    /// distance_sine: family parameters (a, b, c) of the anchor.
    #[serde(default)]
    pub anchor_abc: Option<[f64; 3]>,
    /// distance_sine: row of the history removed and used as the anchor.
    #[serde(default)]
    pub anchor_index: Option<usize>,
    /// external: program and its arguments.
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub args: Vec<String>,
}

impl ObjectiveConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            noise_sd: 0.0,
            anchor_file: None,
            anchor_abc: None,
            anchor_index: None,
            command: None,
            args: Vec::new(),
        }
    }
}

/// What a builder may need besides its config.
pub struct ObjectiveContext {
    pub grid: Arc<Grid>,
    /// Curve taken out of the history when `anchor_index` is set.
    pub held_out: Option<Curve>,
}

pub trait ObjectiveBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, config: &ObjectiveConfig, ctx: &ObjectiveContext) -> Result<Box<dyn Objective>>;
}

pub struct DistanceSineObjective {
    name: &'static str,
    inner: DistanceSine,
}

impl DistanceSineObjective {
    pub fn new(name: &'static str, anchor: Curve) -> Self {
        Self {
            name,
            inner: DistanceSine::new(anchor),
        }
    }
}

impl Objective for DistanceSineObjective {
    fn name(&self) -> &str {
        self.name
    }

    fn evaluate(&mut self, curve: &Curve) -> std::result::Result<f64, String> {
        self.inner.value(curve.values()).map_err(|e| e.to_string())
    }

    fn is_testbed(&self) -> bool {
        true
    }
}

/// Runs `program args...`, feeding the curve as CSV (grid header row, then
/// values) on stdin and parsing stdout as a single real.
pub struct ExternalCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl Objective for ExternalCommand {
    fn name(&self) -> &str {
        "external"
    }

    fn evaluate(&mut self, curve: &Curve) -> std::result::Result<f64, String> {
        let mut input = Vec::new();
        let set = CurveSet::new(curve.grid().clone(), vec![curve.clone()]).map_err(|e| e.to_string())?;
        write_curveset(&set, &mut input).map_err(|e| e.to_string())?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start `{}`: {e}", self.program))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        let _ = writer.join();
        if !out.status.success() {
            return Err(format!(
                "`{}` exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let v: f64 = text
            .trim()
            .parse()
            .map_err(|_| format!("expected one number on stdout, got {:?}", text.trim()))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite objective value {v}"))
        }
    }
}

struct DistanceSineBuilder;

impl ObjectiveBuilder for DistanceSineBuilder {
    fn name(&self) -> &'static str {
        "distance_sine"
    }

    fn build(&self, config: &ObjectiveConfig, ctx: &ObjectiveContext) -> Result<Box<dyn Objective>> {
        let given = [config.anchor_file.is_some(), config.anchor_abc.is_some(), config.anchor_index.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if given != 1 {
            return Err(Error::Config(
                "distance_sine needs exactly one of anchor_file, anchor_abc, anchor_index".into(),
            ));
        }
        let anchor = if let Some(path) = &config.anchor_file {
            let set = load_curveset(path, HeaderMode::Auto)?;
            if set.len() != 1 {
                return Err(Error::Config(format!("anchor file holds {} curves, expected 1", set.len())));
            }
            Curve::new(ctx.grid.clone(), set.curves()[0].values())?
        } else if let Some([a, b, c]) = config.anchor_abc {
            let raw: Vec<f64> = ctx
                .grid
                .knots()
                .iter()
                .map(|&t| 1.0 + (a * t).cos() + b * t + (c * t).exp())
                .collect();
            Curve::new(ctx.grid.clone(), &raw)?
        } else {
            ctx.held_out
                .clone()
                .ok_or_else(|| Error::Config("anchor_index set but no curve was held out".into()))?
        };
        if anchor.len() != ctx.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: ctx.grid.len(),
                found: anchor.len(),
            });
        }
        Ok(Box::new(DistanceSineObjective::new("distance_sine", anchor)))
    }
}

struct AbcGeneralBuilder;

impl ObjectiveBuilder for AbcGeneralBuilder {
    fn name(&self) -> &'static str {
        "abc_general"
    }

    fn build(&self, _config: &ObjectiveConfig, ctx: &ObjectiveContext) -> Result<Box<dyn Objective>> {
        if *ctx.grid != **AbcFamily::default().grid() {
            return Err(Error::Config("abc_general requires the 21-knot uniform grid".into()));
        }
        Ok(Box::new(DistanceSineObjective::new("abc_general", make_abc_anchor())))
    }
}

struct ExternalBuilder;

impl ObjectiveBuilder for ExternalBuilder {
    fn name(&self) -> &'static str {
        "external"
    }

    fn build(&self, config: &ObjectiveConfig, _ctx: &ObjectiveContext) -> Result<Box<dyn Objective>> {
        let program = config
            .command
            .clone()
            .ok_or_else(|| Error::Config("external objective needs `command`".into()))?;
        Ok(Box::new(ExternalCommand {
            program,
            args: config.args.clone(),
        }))
    }
}

/// Objective builders keyed by name.
pub struct ObjectiveRegistry {
    builders: BTreeMap<&'static str, Box<dyn ObjectiveBuilder>>,
}

impl Default for ObjectiveRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(DistanceSineBuilder));
        r.register(Box::new(AbcGeneralBuilder));
        r.register(Box::new(ExternalBuilder));
        r
    }
}

impl ObjectiveRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, builder: Box<dyn ObjectiveBuilder>) {
        self.builders.insert(builder.name(), builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(&self, config: &ObjectiveConfig, ctx: &ObjectiveContext) -> Result<Box<dyn Objective>> {
        if !(config.noise_sd >= 0.0) || !config.noise_sd.is_finite() {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", config.noise_sd)));
        }
        let builder = self.builders.get(config.name.as_str()).ok_or_else(|| Error::UnknownStrategy {
            kind: "objective",
            name: config.name.clone(),
            known: self.names().join(", "),
        })?;
        builder.build(config, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> ObjectiveContext {
        ObjectiveContext {
            grid: AbcFamily::default().grid().clone(),
            held_out: None,
        }
    }

    #[test]
    fn abc_general_is_zero_at_anchor() {
        let reg = ObjectiveRegistry::default();
        let mut obj = reg.build(&ObjectiveConfig::named("abc_general"), &ctx()).unwrap();
        assert_eq!(obj.evaluate(&make_abc_anchor()).unwrap(), 0.0);
        assert!(obj.is_testbed());
    }

    #[test]
    fn distance_sine_anchor_choices() {
        let reg = ObjectiveRegistry::default();
        let mut cfg = ObjectiveConfig::named("distance_sine");
        assert!(matches!(reg.build(&cfg, &ctx()), Err(Error::Config(_))));
        cfg.anchor_abc = Some([12.0, 6.0, 1.0]);
        let mut obj = reg.build(&cfg, &ctx()).unwrap();
        assert!(obj.evaluate(&make_abc_anchor()).unwrap().abs() < 1e-15);
        cfg.anchor_index = Some(0);
        assert!(reg.build(&cfg, &ctx()).is_err());
    }

    #[test]
    fn unknown_name() {
        let err = ObjectiveRegistry::default().build(&ObjectiveConfig::named("branin"), &ctx());
        assert!(matches!(err, Err(Error::UnknownStrategy { .. })));
    }

    #[cfg(unix)]
    #[test]
    fn external_command_round_trip() {
        let mut cfg = ObjectiveConfig::named("external");
        cfg.command = Some("sh".into());
        // second CSV line, first value
        cfg.args = vec!["-c".into(), "sed -n 2p | cut -d, -f1".into()];
        let mut obj = ObjectiveRegistry::default().build(&cfg, &ctx()).unwrap();
        let anchor = make_abc_anchor();
        let v = obj.evaluate(&anchor).unwrap();
        assert_eq!(v, anchor.values()[0]);

        cfg.args = vec!["-c".into(), "cat >/dev/null; exit 3".into()];
        let mut obj = ObjectiveRegistry::default().build(&cfg, &ctx()).unwrap();
        assert!(obj.evaluate(&anchor).is_err());
    }
}
