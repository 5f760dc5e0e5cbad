mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;
use rand::SeedableRng;

use curvopt::curves::{load_curveset, Curve, CurveSet};
use curvopt::domain::{DomainRegistry, InputDomain};
use curvopt::objective::{ObjectiveContext, ObjectiveRegistry};
use curvopt::optimizer::{export_trace, run_ego};
use curvopt::testbed::{brute_force_max, gen_abc_history, AbcFamily};
use curvopt::{Error, ErrorKind, Result, SeededRng};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "curvopt", version, about = "Bayesian optimization over a space of curves")]
struct Cli {
    /// Run configuration (TOML, or JSON for a `.json` file)
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides `run.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for candidate scoring and GP fitting
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Maximize instead of minimize
    #[arg(long, global = true)]
    maximize: bool,
    /// Stop once the best expected improvement drops below this
    #[arg(long, global = true)]
    min_ei: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the search domain and write its artifacts
    FitDomain {
        /// Output directory; overrides `run.output`
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the optimizer once
    Optimize {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every configured method over a range of seeds
    Bench {
        #[arg(long)]
        output: Option<PathBuf>,
        /// Number of seeds; overrides `bench.seeds`
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
        ErrorKind::Objective => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.run.maximize |= cli.maximize;
    if cli.min_ei.is_some() {
        cfg.run.min_ei = cli.min_ei;
    }
    let seed = match cli.seed.or(cfg.run.seed) {
        Some(s) => s,
        None => {
            info!("seed 0 (default)");
            0
        }
    };
    match cli.command {
        Command::FitDomain { output } => {
            if let Some(o) = output {
                cfg.run.output = o;
            }
            fit_domain(&cfg)
        }
        Command::Optimize { output } => {
            if let Some(o) = output {
                cfg.run.output = o;
            }
            optimize(&cfg, seed)
        }
        Command::Bench { output, seeds } => {
            if let Some(o) = output {
                cfg.run.output = o;
            }
            if let Some(s) = seeds {
                cfg.bench.seeds = s;
            }
            bench(&cfg, seed)
        }
    }
}

fn load_history(cfg: &RunConfig) -> Result<CurveSet> {
    let set = if let Some(s) = &cfg.data.synthetic {
        let mut rng = SeededRng::seed_from_u64(s.seed);
        gen_abc_history(s.n, &mut rng)?
    } else {
        let p = cfg.data.path.as_ref().expect("validated");
        load_curveset(p, cfg.data.header).map_err(|e| match e {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", p.display()))),
            other => other,
        })?
    };
    info!("history: {} curves on {} knots", set.len(), set.dim());
    Ok(set)
}

/// Removes the held-out anchor row, if the objective asks for one.
fn split_history(cfg: &RunConfig, set: CurveSet) -> Result<(CurveSet, Option<Curve>)> {
    let Some(idx) = cfg.objective.as_ref().and_then(|o| o.anchor_index) else {
        return Ok((set, None));
    };
    if idx >= set.len() {
        return Err(Error::Config(format!(
            "anchor_index {idx} is out of range for {} curves",
            set.len()
        )));
    }
    let held = set.curves()[idx].clone();
    let rest: Vec<Curve> = set
        .curves()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != idx)
        .map(|(_, c)| c.clone())
        .collect();
    info!("anchor: history row {idx} held out");
    Ok((CurveSet::new(set.grid().clone(), rest)?, Some(held)))
}

fn build_domain(kind: &str, cfg: &RunConfig, history: &CurveSet) -> Result<Box<dyn InputDomain>> {
    let start = Instant::now();
    let domain = DomainRegistry::default().build(kind, history, &cfg.domain_config())?;
    info!("{kind} domain ready in {:.1}s", start.elapsed().as_secs_f64());
    Ok(domain)
}

fn fit_domain(cfg: &RunConfig) -> Result<()> {
    let (history, _) = split_history(cfg, load_history(cfg)?)?;
    let domain = build_domain(&cfg.domain.kind, cfg, &history)?;
    std::fs::create_dir_all(&cfg.run.output)?;
    let files = domain.write_artifacts(&cfg.run.output)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "domain: {}", domain.name())?;
    for line in domain.describe() {
        writeln!(out, "  {line}")?;
    }
    for f in files {
        writeln!(out, "wrote {}", f.display())?;
    }
    Ok(())
}

fn optimize(cfg: &RunConfig, seed: u64) -> Result<()> {
    let obj_cfg = cfg
        .objective
        .as_ref()
        .ok_or_else(|| Error::Config("optimize needs an [objective] section".into()))?;
    let (history, held_out) = split_history(cfg, load_history(cfg)?)?;
    let domain = build_domain(&cfg.domain.kind, cfg, &history)?;
    let ctx = ObjectiveContext {
        grid: history.grid().clone(),
        held_out,
    };
    let mut objective = ObjectiveRegistry::default().build(obj_cfg, &ctx)?;
    let ego = cfg.ego_config(seed);
    let (trace, report) = run_ego(objective.as_mut(), domain.as_ref(), &ego)?;
    export_trace(&trace, &report, &cfg.run.output)?;

    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{} on {} domain, seed {seed}, {}",
        report.objective,
        report.domain,
        if report.maximize { "maximizing" } else { "minimizing" }
    )?;
    writeln!(out, "evaluations: {} ({} initial)", trace.records.len(), report.n_init)?;
    if report.stopped_early {
        writeln!(out, "stopped early after {} EI steps", report.n_iter)?;
    }
    writeln!(out, "best initial: {:.6}", report.best_init)?;
    writeln!(out, "best observed: {:.6} (iteration {})", report.best_observed, report.best_iteration)?;
    if let Some(rec) = &report.recommended {
        writeln!(out, "recommended (surrogate mean): {:.6}", rec.predicted)?;
    }
    writeln!(out, "outputs in {}", cfg.run.output.display())?;
    Ok(())
}

struct BenchRow {
    method: String,
    seed: u64,
    best_init: f64,
    best_final: f64,
}

/// Best objective value over uniformly sampled family members, when the
/// history comes from the parametric family.
fn brute_reference(cfg: &RunConfig, held_out: Option<Curve>) -> Result<Option<f64>> {
    let (Some(synth), Some(obj_cfg)) = (&cfg.data.synthetic, &cfg.objective) else {
        return Ok(None);
    };
    if cfg.bench.brute_samples == 0 || obj_cfg.name == "external" {
        return Ok(None);
    }
    let family = AbcFamily::default();
    let ctx = ObjectiveContext {
        grid: family.grid().clone(),
        held_out,
    };
    let mut objective = ObjectiveRegistry::default().build(obj_cfg, &ctx)?;
    let sign = if cfg.run.maximize { 1.0 } else { -1.0 };
    let mut rng = SeededRng::seed_from_u64(synth.seed);
    rng.set_stream(2);
    let mut failure = None;
    let (best, _) = brute_force_max(
        cfg.bench.brute_samples,
        &mut rng,
        |r| family.sample_params(r),
        |&(a, b, c)| {
            let value = family
                .curve(a, b, c)
                .map_err(|e| e.to_string())
                .and_then(|curve| objective.evaluate(&curve));
            match value {
                Ok(v) => sign * v,
                Err(msg) => {
                    failure.get_or_insert(msg);
                    f64::NEG_INFINITY
                }
            }
        },
    );
    if let Some(msg) = failure {
        return Err(Error::Objective { iteration: 0, msg });
    }
    Ok(Some(sign * best))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v}"))
}

fn bench(cfg: &RunConfig, base_seed: u64) -> Result<()> {
    let obj_cfg = cfg
        .objective
        .as_ref()
        .ok_or_else(|| Error::Config("bench needs an [objective] section".into()))?;
    if cfg.bench.seeds == 0 || cfg.bench.methods.is_empty() {
        return Err(Error::Config("bench needs at least one seed and one method".into()));
    }
    let (history, held_out) = split_history(cfg, load_history(cfg)?)?;
    let brute = brute_reference(cfg, held_out.clone())?;
    if let Some(b) = brute {
        info!("brute-force reference {b:.6} from {} samples", cfg.bench.brute_samples);
    }
    let mut rows = Vec::new();
    for method in &cfg.bench.methods {
        let domain = build_domain(method, cfg, &history)?;
        for seed in base_seed..base_seed + cfg.bench.seeds {
            let ctx = ObjectiveContext {
                grid: history.grid().clone(),
                held_out: held_out.clone(),
            };
            let mut objective = ObjectiveRegistry::default().build(obj_cfg, &ctx)?;
            let (trace, report) = run_ego(objective.as_mut(), domain.as_ref(), &cfg.ego_config(seed))?;
            let dir = cfg.run.output.join(format!("{method}_seed{seed}"));
            export_trace(&trace, &report, &dir)?;
            info!(
                "{method} seed {seed}: best init {:.6}, best final {:.6}",
                report.best_init, report.best_observed
            );
            rows.push(BenchRow {
                method: method.clone(),
                seed,
                best_init: report.best_init,
                best_final: report.best_observed,
            });
        }
    }
    let csv_path = cfg.run.output.join("bench.csv");
    write_bench_csv(&csv_path, &rows, &cfg.bench.methods, brute)?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<10} {:>12} {:>12} {:>12} {:>12}", "method", "median init", "median final", "min final", "max final")?;
    for method in &cfg.bench.methods {
        let (init, fin): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| (r.best_init, r.best_final))
            .unzip();
        let s = Stats::of(&fin);
        writeln!(
            out,
            "{method:<10} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            Stats::of(&init).median,
            s.median,
            s.min,
            s.max
        )?;
    }
    if let Some(b) = brute {
        writeln!(out, "brute-force reference: {b:.6}")?;
    }
    writeln!(out, "wrote {}", csv_path.display())?;
    Ok(())
}

struct Stats {
    median: f64,
    min: f64,
    max: f64,
}

impl Stats {
    fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Self {
            median,
            min: v[0],
            max: v[n - 1],
        }
    }
}

fn write_bench_csv(path: &Path, rows: &[BenchRow], methods: &[String], brute: Option<f64>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "method,seed,best_init,best_final,brute_ref")?;
    let b = fmt_opt(brute);
    for r in rows {
        writeln!(w, "{},{},{},{},{b}", r.method, r.seed, r.best_init, r.best_final)?;
    }
    for method in methods {
        let (init, fin): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| (r.best_init, r.best_final))
            .unzip();
        let (si, sf) = (Stats::of(&init), Stats::of(&fin));
        writeln!(w, "{method},median,{},{},{b}", si.median, sf.median)?;
        writeln!(w, "{method},min,{},{},{b}", si.min, sf.min)?;
        writeln!(w, "{method},max,{},{},{b}", si.max, sf.max)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_even_and_odd() {
        let s = Stats::of(&[3.0, 1.0, 2.0]);
        assert_eq!((s.median, s.min, s.max), (2.0, 1.0, 3.0));
        assert_eq!(Stats::of(&[4.0, 1.0, 2.0, 3.0]).median, 2.5);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [ErrorKind::Config, ErrorKind::Data, ErrorKind::Numeric, ErrorKind::Objective].map(exit_code);
        assert_eq!(codes, [1, 2, 3, 4]);
    }
}
