//! The EGO loop: k-means initial design, then repeated GP fit, EI
//! maximization and evaluation.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_ei, PluginRule, SearchBudget};
use crate::curves::csv_io;
use crate::domain::InputDomain;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::surrogate::{GpConfig, GpSummary, GpSurrogate, NoiseModel};
use crate::SeededRng;

const KMEANS_ITERS: usize = 50;
const KMEANS_RESTARTS: usize = 5;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp_seed(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd iterations from k-means++ seeds; returns centers and SSE.
fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> (Vec<Vec<f64>>, f64) {
    let p = points[0].len();
    let mut centers = kmeans_pp_seed(points, k, rng);
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (a, x) in assign.iter_mut().zip(points) {
            let j = nearest(x, &centers).0;
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (&a, x) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let sse = points.iter().map(|x| nearest(x, &centers).1).sum();
    (centers, sse)
}

/// Indices of `count` historical points nearest to k-means barycenters.
pub fn init_design(points: &[Vec<f64>], count: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    if count > points.len() {
        return Err(Error::CountExceedsData {
            count,
            available: points.len(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (c, sse) = kmeans(points, count, rng);
        if best.as_ref().is_none_or(|b| sse < b.1) {
            best = Some((c, sse));
        }
    }
    let centers = best.expect("at least one restart").0;
    let mut used = vec![false; points.len()];
    let mut chosen = Vec::with_capacity(count);
    for c in &centers {
        let mut pick = (usize::MAX, f64::INFINITY);
        for (i, x) in points.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = dist2(x, c);
            if d < pick.1 {
                pick = (i, d);
            }
        }
        used[pick.0] = true;
        chosen.push(pick.0);
    }
    Ok(chosen)
}

fn default_thirty() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoConfig {
    #[serde(default = "default_thirty")]
    pub n_init: usize,
    #[serde(default = "default_thirty")]
    pub n_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub maximize: bool,
    /// Stop once the best expected improvement falls below this.
    #[serde(default)]
    pub min_ei: Option<f64>,
    /// Observation noise sd. With the default GP noise model, a positive
    /// value fixes the GP noise variance at its square.
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub search: SearchBudget,
}

impl Default for EgoConfig {
    fn default() -> Self {
        Self {
            n_init: 30,
            n_iter: 30,
            seed: 0,
            maximize: false,
            min_ei: None,
            noise_sd: 0.0,
            gp: GpConfig::default(),
            search: SearchBudget::default(),
        }
    }
}

impl EgoConfig {
    fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(Error::Config(format!("n_init must be >= 2, got {}", self.n_init)));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        self.search.validate()
    }

    fn effective_gp(&self, iteration: usize) -> GpConfig {
        let mut gp = self.gp.clone();
        if self.noise_sd > 0.0 && gp.noise == NoiseModel::Fixed(0.0) {
            gp.noise = NoiseModel::Fixed(self.noise_sd * self.noise_sd);
        }
        gp.seed = self.gp.seed.wrapping_add(self.seed).wrapping_add(iteration as u64);
        gp
    }
}

/// One objective evaluation. Values are in the user's orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoRecord {
    /// 0 for the initial design, then 1, 2, ...
    pub iter: usize,
    pub input: Vec<f64>,
    pub curve: Vec<f64>,
    pub y: f64,
    pub yhat: Option<f64>,
    pub ei: Option<f64>,
    pub plugin: Option<f64>,
    pub cumbest: f64,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoTrace {
    pub records: Vec<EgoRecord>,
    pub n_init: usize,
    pub seed: u64,
    pub maximize: bool,
}

impl EgoTrace {
    pub fn best_init(&self) -> f64 {
        self.records[..self.n_init].last().map_or(f64::NAN, |r| r.cumbest)
    }

    pub fn best(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.cumbest)
    }

    /// Cumulative best after the initial design (entry 0) and after each
    /// EI step.
    pub fn cumbest_by_iteration(&self) -> Vec<f64> {
        let mut out = vec![self.best_init()];
        out.extend(self.records[self.n_init..].iter().map(|r| r.cumbest));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub input: Vec<f64>,
    pub curve: Vec<f64>,
    /// Surrogate mean in the user's orientation.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub domain: String,
    pub objective: String,
    pub maximize: bool,
    pub n_init: usize,
    pub n_iter: usize,
    pub stopped_early: bool,
    pub best_iteration: usize,
    pub best_input: Vec<f64>,
    pub best_curve: Vec<f64>,
    pub best_observed: f64,
    pub best_init: f64,
    /// Surrogate-mean optimum over evaluated inputs, reported under noise.
    pub recommended: Option<Recommendation>,
    pub last_gp: Option<GpSummary>,
    pub domain_summary: serde_json::Value,
    pub config: EgoConfig,
}

struct Evaluator<'a> {
    objective: &'a mut dyn Objective,
    noise_sd: f64,
    noise_rng: SeededRng,
    count: usize,
}

impl Evaluator<'_> {
    fn eval(&mut self, domain: &dyn InputDomain, native: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
        let curve = domain.to_curve(native)?;
        let start = Instant::now();
        let mut y = self.objective.evaluate(&curve).map_err(|msg| Error::Objective {
            iteration: self.count,
            msg,
        })?;
        let seconds = start.elapsed().as_secs_f64();
        if !y.is_finite() {
            return Err(Error::Objective {
                iteration: self.count,
                msg: format!("non-finite value {y}"),
            });
        }
        if self.objective.is_testbed() && self.noise_sd > 0.0 {
            y += self.noise_sd * self.noise_rng.sample::<f64, _>(StandardNormal);
        }
        self.count += 1;
        Ok((curve.values().to_vec(), y, seconds))
    }
}

/// Runs the initial design and `n_iter` EI steps.
pub fn run_ego(
    objective: &mut dyn Objective,
    domain: &dyn InputDomain,
    config: &EgoConfig,
) -> Result<(EgoTrace, RunReport)> {
    config.validate()?;
    let sign = if config.maximize { -1.0 } else { 1.0 };
    let better = |a: f64, b: f64| if config.maximize { a > b } else { a < b };
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let mut noise_rng = SeededRng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);
    let objective_name = objective.name().to_owned();
    let mut evaluator = Evaluator {
        objective,
        noise_sd: config.noise_sd,
        noise_rng,
        count: 0,
    };

    let feasible: Vec<&Vec<f64>> = domain.historical().iter().filter(|x| domain.is_feasible(x)).collect();
    if feasible.len() < domain.historical().len() {
        log::warn!(
            "{} of {} historical points lie outside the {} domain and are skipped for the initial design",
            domain.historical().len() - feasible.len(),
            domain.historical().len(),
            domain.name()
        );
    }
    let points: Vec<Vec<f64>> = feasible.iter().map(|x| (*x).clone()).collect();
    let design = init_design(&points, config.n_init, &mut rng)?;

    let mut records: Vec<EgoRecord> = Vec::new();
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut internal: Vec<f64> = Vec::new();
    let mut cumbest = if config.maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    for &i in &design {
        let native = points[i].clone();
        let (curve, y, seconds) = evaluator.eval(domain, &native)?;
        if better(y, cumbest) {
            cumbest = y;
        }
        features.push(domain.to_features(&native));
        internal.push(sign * y);
        records.push(EgoRecord {
            iter: 0,
            input: native,
            curve,
            y,
            yhat: None,
            ei: None,
            plugin: None,
            cumbest,
            seconds,
        });
    }
    log::info!("initial design of {} points, best {cumbest}", design.len());

    let rule = PluginRule::for_noise(config.noise_sd)?;
    let mut last_gp = None;
    let mut stopped_early = false;
    for it in 1..=config.n_iter {
        let gp = GpSurrogate::fit(features.clone(), internal.clone(), &config.effective_gp(it))?;
        let choice = maximize_ei(&gp, domain, config.search, &rule, &mut rng)?;
        last_gp = Some(gp.summary());
        if let Some(min) = config.min_ei {
            if choice.ei < min {
                log::info!("iteration {it}: EI {} below {min}, stopping", choice.ei);
                stopped_early = true;
                break;
            }
        }
        let (curve, y, seconds) = evaluator.eval(domain, &choice.native)?;
        if better(y, cumbest) {
            cumbest = y;
        }
        log::info!("iteration {it}: y = {y}, EI = {:.3e}, best {cumbest}", choice.ei);
        features.push(choice.features);
        internal.push(sign * y);
        records.push(EgoRecord {
            iter: it,
            input: choice.native,
            curve,
            y,
            yhat: Some(sign * choice.yhat),
            ei: Some(choice.ei),
            plugin: Some(sign * choice.plugin),
            cumbest,
            seconds,
        });
    }

    let recommended = if config.noise_sd > 0.0 {
        let gp = GpSurrogate::fit(features.clone(), internal.clone(), &config.effective_gp(config.n_iter + 1))?;
        let mut best = 0;
        let mut best_mean = f64::INFINITY;
        for (i, z) in features.iter().enumerate() {
            let m = gp.predict(z).mean;
            if m < best_mean {
                best = i;
                best_mean = m;
            }
        }
        Some(Recommendation {
            input: records[best].input.clone(),
            curve: records[best].curve.clone(),
            predicted: sign * best_mean,
        })
    } else {
        None
    };

    let trace = EgoTrace {
        records,
        n_init: design.len(),
        seed: config.seed,
        maximize: config.maximize,
    };
    let best_idx = trace
        .records
        .iter()
        .position(|r| r.y == trace.best())
        .expect("best value is one of the observations");
    let best = &trace.records[best_idx];
    let report = RunReport {
        domain: domain.name().to_owned(),
        objective: objective_name,
        maximize: config.maximize,
        n_init: trace.n_init,
        n_iter: trace.records.len() - trace.n_init,
        stopped_early,
        best_iteration: best.iter,
        best_input: best.input.clone(),
        best_curve: best.curve.clone(),
        best_observed: best.y,
        best_init: trace.best_init(),
        recommended,
        last_gp,
        domain_summary: domain.summary(),
        config: config.clone(),
    };
    Ok((trace, report))
}

/// One parsed row of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub y: f64,
    pub yhat: Option<f64>,
    pub ei: Option<f64>,
    pub plugin: Option<f64>,
    pub cumbest: f64,
    pub x: Vec<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `trace.csv`, `curves.csv`, `cumbest.csv` and `report.json` into `dir`.
pub fn export_trace(trace: &EgoTrace, report: &RunReport, dir: &Path) -> Result<()> {
    if trace.records.is_empty() {
        return Err(Error::EmptySet);
    }
    std::fs::create_dir_all(dir)?;
    let p = trace.records[0].input.len();
    let mut w = csv::Writer::from_path(dir.join("trace.csv")).map_err(csv_io)?;
    let mut header: Vec<String> = ["iter", "y", "yhat", "ei", "plugin", "cumbest"].map(String::from).to_vec();
    header.extend((1..=p).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for r in &trace.records {
        let mut row = vec![
            r.iter.to_string(),
            r.y.to_string(),
            opt(r.yhat),
            opt(r.ei),
            opt(r.plugin),
            r.cumbest.to_string(),
        ];
        row.extend(r.input.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;

    let d = trace.records[0].curve.len();
    let mut w = csv::Writer::from_path(dir.join("curves.csv")).map_err(csv_io)?;
    let mut header: Vec<String> = vec!["iter".into()];
    header.extend((1..=d).map(|i| format!("v_{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for r in &trace.records {
        let mut row = vec![r.iter.to_string()];
        row.extend(r.curve.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("cumbest.csv")).map_err(csv_io)?;
    w.write_record(["iter", "cumbest"]).map_err(csv_io)?;
    for (i, v) in trace.cumbest_by_iteration().iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()]).map_err(csv_io)?;
    }
    w.flush()?;

    let f = File::create(dir.join("report.json"))?;
    serde_json::to_writer_pretty(f, report)?;
    Ok(())
}

fn parse_field(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("not a number: {s:?}"),
    })
}

/// Reads a `trace.csv` written by [`export_trace`].
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_io)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_io)?;
        if rec.len() < 6 {
            return Err(Error::Shape {
                line,
                expected: 6,
                found: rec.len(),
            });
        }
        let optional = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse_field(s, line).map(Some)
            }
        };
        rows.push(TraceRow {
            iter: rec[0].parse().map_err(|_| Error::Parse {
                line,
                msg: "bad iteration index".into(),
            })?,
            y: parse_field(&rec[1], line)?,
            yhat: optional(&rec[2])?,
            ei: optional(&rec[3])?,
            plugin: optional(&rec[4])?,
            cumbest: parse_field(&rec[5], line)?,
            x: rec.iter().skip(6).map(|s| parse_field(s, line)).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}
