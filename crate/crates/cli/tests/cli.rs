use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn curvopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvopt"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn curvopt")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
[data]
synthetic = { n = 60, seed = 7 }

[ei]
n_candidates = 64
n_local_starts = 2
local_iters = 8

[run]
n_init = 5
n_iter = 3
output = "out"

[objective]
name = "distance_sine"
anchor_abc = [12.0, 6.0, 1.0]
"#;

fn small_with_domain(kind: &str) -> String {
    format!("{SMALL}\n[domain]\ntype = \"{kind}\"\n")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn fit_domain_writes_kde_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_with_domain("kde"));
    let o = curvopt(dir.path(), &["fit-domain", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("domain: kde"));
    assert!(dir.path().join("out/kde_model.json").is_file());
    assert!(dir.path().join("out/kde_alphas.csv").is_file());
}

#[test]
fn refit_reproduces_identical_model() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_with_domain("kde"));
    let fit = |out: &str| {
        let o = curvopt(dir.path(), &["fit-domain", "--config", &cfg, "--output", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(out).join("kde_model.json")).unwrap()
    };
    assert_eq!(fit("a"), fit("b"));
}

#[test]
fn abc_general_objective_runs_on_kde() {
    let dir = TempDir::new().unwrap();
    let body = small_with_domain("kde").replace(
        "name = \"distance_sine\"\nanchor_abc = [12.0, 6.0, 1.0]",
        "name = \"abc_general\"",
    );
    let cfg = write_config(dir.path(), &body);
    let o = curvopt(dir.path(), &["optimize", "--config", &cfg, "--maximize"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("maximizing"));
}

#[test]
fn fit_domain_writes_expert_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_with_domain("expert"));
    let o = curvopt(dir.path(), &["fit-domain", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("domain: expert"));
    assert!(dir.path().join("out/expert_domain.json").is_file());
}

#[test]
fn optimize_writes_trace_with_expected_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &small_with_domain("expert"));
    let o = curvopt(dir.path(), &["optimize", "--config", &cfg, "--seed", "3", "--maximize"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("out/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("iter,y,yhat,ei,plugin,cumbest,x_1"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 8);
    // cumulative best never decreases when maximizing
    let cumbest: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(cumbest.windows(2).all(|w| w[1] >= w[0]));
    // the initial design carries no surrogate columns
    assert!(rows[..5].iter().all(|r| r[0] == "0" && r[2].is_empty()));
    assert!(rows[5..].iter().all(|r| !r[3].is_empty()));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["maximize"], true);
    assert!(dir.path().join("out/curves.csv").is_file());
    assert!(dir.path().join("out/cumbest.csv").is_file());
}

#[test]
fn optimize_is_deterministic_for_a_seed() {
    let run = || {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), &small_with_domain("kde"));
        let o = curvopt(dir.path(), &["optimize", "--config", &cfg, "--seed", "11", "--maximize"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(dir.path().join("out/trace.csv")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn json_config_is_accepted() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.json");
    fs::write(
        &path,
        r#"{"data": {"synthetic": {"n": 40}}, "domain": {"type": "expert"}, "run": {"output": "o"}}"#,
    )
    .unwrap();
    let o = curvopt(dir.path(), &["fit-domain", "--config", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("o/expert_domain.json").is_file());
}

#[test]
fn bench_writes_summary_csv() {
    let dir = TempDir::new().unwrap();
    let body = format!("{SMALL}\n[bench]\nseeds = 2\nmethods = [\"expert\"]\nbrute_samples = 1000\n");
    let cfg = write_config(dir.path(), &body);
    let o = curvopt(dir.path(), &["bench", "--config", &cfg, "--maximize"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,seed,best_init,best_final,brute_ref");
    assert_eq!(lines.len(), 1 + 2 + 3);
    assert!(lines[3].starts_with("expert,median,"));
    assert!(!lines[1].ends_with(','), "brute reference present");
}

#[test]
fn exit_code_config_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[data]\nsynthetic = { n = 10 }\n[run]\nn_iters = 4\n");
    assert_eq!(curvopt(dir.path(), &["fit-domain", "--config", &cfg]).status.code(), Some(1));
    let cfg = write_config(dir.path(), &small_with_domain("nope"));
    assert_eq!(curvopt(dir.path(), &["fit-domain", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(curvopt(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(curvopt(dir.path(), &["fit-domain"]).status.code(), Some(1));
}

#[test]
fn exit_code_data_errors() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("h.csv"), "1,2,3\n1,2\n").unwrap();
    let cfg = write_config(dir.path(), "[data]\npath = \"h.csv\"\n");
    assert_eq!(curvopt(dir.path(), &["fit-domain", "--config", &cfg]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "[data]\npath = \"missing.csv\"\n");
    assert_eq!(curvopt(dir.path(), &["fit-domain", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn exit_code_objective_failure() {
    let dir = TempDir::new().unwrap();
    let body = small_with_domain("expert").replace(
        "name = \"distance_sine\"\nanchor_abc = [12.0, 6.0, 1.0]",
        "name = \"external\"\ncommand = \"sh\"\nargs = [\"-c\", \"cat > /dev/null; echo oops\"]",
    );
    let cfg = write_config(dir.path(), &body);
    let o = curvopt(dir.path(), &["optimize", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
