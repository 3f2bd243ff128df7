use std::path::Path;
use std::process::Command;

use brownot::io::{read_plan, read_rows, ReplicaRow};
use brownot::RunRecord;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_brownot"))
}

const TORUS: &str = r#"{
  "t_grid": [0.5, 1.0, 2.0],
  "replicas": 4,
  "grid_n": 4,
  "max_atoms": 80,
  "control_replicas": 1,
  "dt": {"dt": 0.004}
}"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"replicas": 2, "replica_count": 3}"#);
    let out = run("torus-rate", &cfg, &dir.path().join("run"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replica_count"));
}

#[test]
fn hypothesis_violations_name_the_condition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"d": 2}"#);
    let out = run("fixed-n", &cfg, &dir.path().join("run"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn run_writes_outputs_and_plots_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TORUS);
    let run_dir = dir.path().join("run");
    let out = run("torus-rate", &cfg, &run_dir, &["--seed", "11", "--jobs", "2"]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));

    let record = RunRecord::load(&run_dir.join("record.json")).unwrap();
    assert_eq!(record.config.master_seed, 11);
    assert_eq!(record.grid.len(), 3);
    assert!(!run_dir.join("partial.json").exists());
    let header = std::fs::read_to_string(run_dir.join("results.csv")).unwrap();
    assert!(header.starts_with("grid_value,replica,cost,mass,wall_ms\n"));
    let rows: Vec<ReplicaRow> = read_rows(&run_dir.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 12);

    let plots = dir.path().join("plots");
    let p = bin().args(["plot", "--record"]).arg(&run_dir).arg("--out").arg(&plots).output().unwrap();
    assert!(p.status.success());
    let first: Vec<Vec<u8>> = ["rate-fit", "plateau", "sd-decay"]
        .iter()
        .map(|k| std::fs::read(plots.join(format!("{k}.dat"))).unwrap())
        .collect();
    let p = bin()
        .args(["plot", "--kind", "plateau", "--record"])
        .arg(run_dir.join("record.json"))
        .arg("--out")
        .arg(&plots)
        .output()
        .unwrap();
    assert!(p.status.success());
    assert_eq!(std::fs::read(plots.join("plateau.dat")).unwrap(), first[1]);
    let bad = bin().args(["plot", "--kind", "histogram", "--record"]).arg(&run_dir).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn same_seed_same_numbers_regardless_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TORUS);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run("concentration", &cfg, &a, &["--jobs", "1"]);
    run("concentration", &cfg, &b, &["--jobs", "3"]);
    let ra = RunRecord::load(&a.join("record.json")).unwrap();
    let rb = RunRecord::load(&b.join("record.json")).unwrap();
    let strip = |mut r: RunRecord| {
        r.config.output = None;
        r.numeric_payload()
    };
    assert_eq!(strip(ra), strip(rb));
}

#[test]
fn interrupted_run_resumes_to_the_same_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TORUS);
    let full = dir.path().join("full");
    run("torus-rate", &cfg, &full, &[]);
    let reference = RunRecord::load(&full.join("record.json")).unwrap();

    // Recreate the state of a run killed after five replicas, mid-row.
    let cut = dir.path().join("cut");
    std::fs::create_dir_all(&cut).unwrap();
    let partial = serde_json::json!({"experiment": "torus-rate", "config": reference.config});
    std::fs::write(cut.join("partial.json"), serde_json::to_string(&partial).unwrap()).unwrap();
    let results = std::fs::read_to_string(full.join("results.csv")).unwrap();
    let mut kept: String = results.lines().take(6).map(|l| format!("{l}\n")).collect();
    kept.push_str("2.0,3,0.12");
    std::fs::write(cut.join("results.csv"), kept).unwrap();
    std::fs::copy(full.join("aux.csv"), cut.join("aux.csv")).unwrap();

    let out = run("torus-rate", &cfg, &cut, &[]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let resumed = RunRecord::load(&cut.join("record.json")).unwrap();
    let strip = |mut r: RunRecord| {
        r.config.output = None;
        r.numeric_payload()
    };
    assert_eq!(strip(resumed), strip(reference));
    let rows: Vec<ReplicaRow> = read_rows(&cut.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 12);
}

#[test]
fn resuming_with_another_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TORUS);
    let run_dir = dir.path().join("run");
    std::fs::create_dir_all(&run_dir).unwrap();
    let other = brownot::ExperimentConfig {
        p: 0.3,
        ..brownot::ExperimentConfig::from_json(TORUS).unwrap()
    };
    let partial = serde_json::json!({"experiment": "torus-rate", "config": other});
    std::fs::write(run_dir.join("partial.json"), serde_json::to_string(&partial).unwrap()).unwrap();
    let out = run("torus-rate", &cfg, &run_dir, &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn example_atoms_and_plans_are_saved() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"u_grid": [2.0], "replicas": 2, "grid_n": 4, "max_atoms": 60, "dt": {"dt": 0.004}, "save_examples": true}"#,
    );
    let run_dir = dir.path().join("run");
    let out = run("constant", &cfg, &run_dir, &[]);
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let atoms = std::fs::read_to_string(run_dir.join("atoms_g0.csv")).unwrap();
    assert!(atoms.starts_with("x1,x2,x3,mass\n"));
    let plan = read_plan(std::fs::File::open(run_dir.join("plan_g0.csv")).unwrap()).unwrap();
    let rows: Vec<ReplicaRow> = read_rows(&run_dir.join("results.csv")).unwrap();
    let first = rows.iter().find(|r| r.replica == 0).unwrap();
    let total: f64 = plan.iter().map(|r| r.cost_contrib).sum();
    assert!((total - first.cost).abs() <= 1e-9 * total.max(1.0), "{total} vs {}", first.cost);
}
