//! Expected improvement, the incumbent ("plugin") rule, and its
//! maximization over a domain estimate.
//!
//! Everything here works in the minimization orientation.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::domain::InputDomain;
use crate::error::{Error, Result};
use crate::surrogate::GpSurrogate;
use crate::SeededRng;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn norm_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

fn norm_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / std::f64::consts::SQRT_2)
}

/// `E[max(y_plugin - Y, 0)]` for `Y ~ N(yhat, s^2)`.
pub fn expected_improvement(y_plugin: f64, yhat: f64, s: f64) -> f64 {
    let diff = y_plugin - yhat;
    if s <= 0.0 {
        return diff.max(0.0);
    }
    let u = diff / s;
    (diff * norm_cdf(u) + s * norm_pdf(u)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginMode {
    DeterministicMin,
    NoisyPenalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluginRule {
    pub mode: PluginMode,
    pub tau: f64,
}

impl PluginRule {
    pub fn deterministic() -> Self {
        Self {
            mode: PluginMode::DeterministicMin,
            tau: 0.0,
        }
    }

    pub fn noisy(tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("noise sd must be >= 0, got {tau}")));
        }
        Ok(Self {
            mode: PluginMode::NoisyPenalized,
            tau,
        })
    }

    /// Noisy rule when `tau > 0`, observed minimum otherwise.
    pub fn for_noise(tau: f64) -> Result<Self> {
        if tau > 0.0 {
            Self::noisy(tau)
        } else {
            Ok(Self::deterministic())
        }
    }
}

/// Incumbent value against which improvement is measured.
pub fn plugin_value(rule: &PluginRule, surrogate: &GpSurrogate) -> f64 {
    match rule.mode {
        PluginMode::DeterministicMin => surrogate.outputs().iter().cloned().fold(f64::INFINITY, f64::min),
        PluginMode::NoisyPenalized => {
            let m = surrogate
                .inputs()
                .iter()
                .map(|x| surrogate.predict(x).mean)
                .fold(f64::INFINITY, f64::min);
            m - 2.0 * rule.tau
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchBudget {
    pub n_candidates: usize,
    pub n_local_starts: usize,
    pub local_iters: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            n_candidates: 2048,
            n_local_starts: 8,
            local_iters: 64,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 || self.n_local_starts == 0 {
            return Err(Error::Config("search budgets must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EiChoice {
    pub native: Vec<f64>,
    pub features: Vec<f64>,
    pub ei: f64,
    /// Surrogate mean at the choice.
    pub yhat: f64,
    pub sd: f64,
    pub plugin: f64,
}

pub struct AcquisitionProblem<'a> {
    pub surrogate: &'a GpSurrogate,
    pub domain: &'a dyn InputDomain,
    pub budget: SearchBudget,
}

struct Scored {
    native: Vec<f64>,
    features: Vec<f64>,
    ei: f64,
}

impl<'a> AcquisitionProblem<'a> {
    pub fn new(surrogate: &'a GpSurrogate, domain: &'a dyn InputDomain, budget: SearchBudget) -> Self {
        Self {
            surrogate,
            domain,
            budget,
        }
    }

    fn ei_at(&self, plugin: f64, features: &[f64]) -> f64 {
        let p = self.surrogate.predict(features);
        expected_improvement(plugin, p.mean, p.sd)
    }

    fn is_training_input(&self, features: &[f64]) -> bool {
        self.surrogate.inputs().iter().any(|x| x.as_slice() == features)
    }

    /// Feasible point with the largest expected improvement found.
    pub fn maximize(&self, rule: &PluginRule, rng: &mut SeededRng) -> Result<EiChoice> {
        self.budget.validate()?;
        let plugin = plugin_value(rule, self.surrogate);
        let dom = self.domain;

        let mut pool: Vec<(Vec<f64>, Vec<f64>)> = dom
            .sample_candidates(self.budget.n_candidates, rng)?
            .into_iter()
            .filter(|x| dom.is_feasible(x))
            .map(|x| {
                let z = dom.to_features(&x);
                (x, z)
            })
            .filter(|(_, z)| !self.is_training_input(z))
            .collect();
        if pool.is_empty() {
            log::warn!("no feasible sampled candidate; falling back to historical points");
            pool = dom
                .historical()
                .iter()
                .filter(|x| dom.is_feasible(x))
                .map(|x| (x.clone(), dom.to_features(x)))
                .collect();
        }
        if pool.is_empty() {
            return Err(Error::NoFeasibleCandidate);
        }

        let scores: Vec<f64> = pool.par_iter().map(|(_, z)| self.ei_at(plugin, z)).collect();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

        let seeds: Vec<u64> = (0..self.budget.n_local_starts).map(|_| rng.random()).collect();
        let locals: Vec<Scored> = order
            .iter()
            .take(self.budget.n_local_starts)
            .zip(&seeds)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|(&i, &seed)| {
                let (x, z) = &pool[i];
                self.local_search(plugin, x.clone(), z.clone(), scores[i], seed)
            })
            .collect();

        let top = order[0];
        let mut best = Scored {
            native: pool[top].0.clone(),
            features: pool[top].1.clone(),
            ei: scores[top],
        };
        for s in locals {
            if s.ei > best.ei {
                best = s;
            }
        }
        let p = self.surrogate.predict(&best.features);
        Ok(EiChoice {
            native: best.native,
            features: best.features,
            ei: best.ei,
            yhat: p.mean,
            sd: p.sd,
            plugin,
        })
    }

    /// Random-coordinate descent on -EI with step halving after failures.
    fn local_search(&self, plugin: f64, mut x: Vec<f64>, mut z: Vec<f64>, mut ei: f64, seed: u64) -> Scored {
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut steps = self.domain.local_steps();
        let p = z.len();
        for _ in 0..self.budget.local_iters {
            let c = rng.random_range(0..p);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut moved = false;
            for dir in [sign, -sign] {
                let mut trial = z.clone();
                trial[c] += dir * steps[c];
                let native = self.domain.from_features(&trial);
                if !self.domain.is_feasible(&native) || self.is_training_input(&trial) {
                    continue;
                }
                let v = self.ei_at(plugin, &trial);
                if v > ei {
                    x = native;
                    z = trial;
                    ei = v;
                    moved = true;
                    break;
                }
            }
            if !moved {
                steps[c] *= 0.5;
            }
        }
        Scored { native: x, features: z, ei }
    }
}

/// Convenience wrapper around [`AcquisitionProblem::maximize`].
pub fn maximize_ei(
    surrogate: &GpSurrogate,
    domain: &dyn InputDomain,
    budget: SearchBudget,
    rule: &PluginRule,
    rng: &mut SeededRng,
) -> Result<EiChoice> {
    AcquisitionProblem::new(surrogate, domain, budget).maximize(rule, rng)
}
