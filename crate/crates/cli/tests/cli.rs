use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn fedmls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedmls"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn wisconsin() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/breast-cancer-wisconsin.csv")
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let o = fedmls(&[
        "run",
        "--seeds",
        "0..2",
        "-K",
        "6",
        "--batch-fraction",
        "0.2",
        "-o",
        out_dir,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("fedmls_seed1.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        body[0],
        "algorithm,seed,round,cum_local_steps,f,subopt,consensus_gap,wall_ms"
    );
    assert_eq!(body.len(), 7);
    assert!(body[6].starts_with("fedmls,1,6,21,"));
    assert!(dir.path().join("fedmls_aggregate.csv").exists());
}

#[test]
fn config_file_supplies_flags_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "algorithm = \"scaffold\"\nrounds = 4\nseeds = [3]\neta0 = 1e-3\nout_dir = \"out\"\n",
    )
    .unwrap();
    let o = fedmls(&["run", "--config", cfg.to_str().unwrap(), "--rounds", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("out/scaffold_seed3.csv")).unwrap();
    assert!(text.contains("# eta0=0.001"));
    assert_eq!(
        text.lines()
            .filter(|l| l.starts_with("scaffold,3,"))
            .count(),
        5
    );
}

#[test]
fn compare_shares_f_star_and_succeeds() {
    let o = fedmls(&[
        "compare", "--seeds", "0", "-K", "4", "--eta0", "1e-3", "--f-star", "32.6229",
    ]);
    assert!(o.status.success());
    let s = stdout(&o);
    for alg in ["fedmls", "fedavg", "scaffold", "scaffnew"] {
        assert!(s.contains(alg), "{alg} missing from\n{s}");
    }
}

#[test]
fn sweep_marks_the_best_value() {
    let o = fedmls(&[
        "sweep",
        "--param",
        "eta0",
        "--seeds",
        "0",
        "-K",
        "5",
        "--grid",
        "1e-3,1e-2",
    ]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(s.lines().filter(|l| l.starts_with('*')).count(), 1);
    assert!(s.contains("best eta0 ="));
}

#[test]
fn partition_exports_every_wisconsin_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let o = fedmls(&[
        "partition",
        "--data",
        &wisconsin(),
        "-n",
        "10",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row_index,client_id");
    assert_eq!(lines.len(), 700);
    let again = fedmls(&["partition", "--data", &wisconsin(), "-n", "10"]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn reference_prints_f_star() {
    let o = fedmls(&["reference", "--separation", "100", "--per-cluster", "10"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let line = s.lines().find(|l| l.starts_with("f_star = ")).unwrap();
    let f: f64 = line["f_star = ".len()..].parse().unwrap();
    assert!(f.abs() < 1e-4, "{f}");
}

#[test]
fn bad_input_exits_with_two() {
    assert_eq!(fedmls(&["run", "--rounds", "0"]).status.code(), Some(2));
    assert_eq!(
        fedmls(&["run", "--data", "/nonexistent.csv"]).status.code(),
        Some(2)
    );
    assert_eq!(
        fedmls(&["sweep", "--param", "lambda0", "-a", "fedavg"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        fedmls(&["run", "--algorithm", "sgd"]).status.code(),
        Some(2)
    );
}

#[test]
fn failed_runs_exit_with_one() {
    // eta0 = f64::MAX makes every FedAvg run diverge
    let o = fedmls(&[
        "run",
        "-a",
        "fedavg",
        "--eta0",
        "1.7976931348623157e308",
        "--seeds",
        "0",
        "-K",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}
