use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn synthetic_config() -> PathBuf {
    workspace().join("configs/synthetic.conf")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supportnet"))
        .args(args)
        .env_remove("SUPPORTNET_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Synthetic config with `key = value` lines replaced or appended to the
/// given section.
fn variant(dir: &Path, edits: &[(&str, &str, &str)]) -> PathBuf {
    let mut text = read(&synthetic_config());
    for (section, key, value) in edits {
        let prefix = format!("{key} =");
        if let Some(line) = text.lines().find(|l| l.starts_with(&prefix)) {
            text = text.replace(line, &format!("{key} = {value}"));
        } else {
            text = text.replace(&format!("[{section}]"), &format!("[{section}]\n{key} = {value}"));
        }
    }
    let path = dir.join("variant.conf");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_every_artifact_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = cli(&["run", "--config", s(&synthetic_config()), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let metrics = read(&a.join("metrics.csv"));
    assert_eq!(metrics.lines().count(), 4, "header plus three increments");
    assert_eq!(metrics, read(&b.join("metrics.csv")));
    assert_eq!(
        read(&a.join("accuracy_matrix_supportnet.csv")),
        read(&b.join("accuracy_matrix_supportnet.csv"))
    );
    for t in 0..3 {
        assert!(a.join(format!("confusion_{t}.csv")).exists());
        assert!(a.join(format!("checkpoints/increment_{t}.ckpt")).exists());
        assert_eq!(
            std::fs::read(a.join(format!("checkpoints/increment_{t}.ckpt"))).unwrap(),
            std::fs::read(b.join(format!("checkpoints/increment_{t}.ckpt"))).unwrap()
        );
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(&a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["seed"], 1);
    let log = supportnet::ExperimentLog::from_json(&read(&a.join("experiment_log.json"))).unwrap();
    assert_eq!(log.increments.len(), 3);
}

#[test]
fn checkpoints_reload_to_the_logged_model() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    assert!(cli(&["run", "--config", s(&synthetic_config()), "--out", s(&out)]).status.success());
    let ck = supportnet::Checkpoint::load(out.join("checkpoints/increment_2.ckpt")).unwrap();
    assert_eq!(ck.increment, 2);
    assert_eq!(ck.params.num_classes(), 6);
    let state = ck.state.expect("supportnet snapshots a consolidation state");
    assert_eq!(state.coefficients.lambda_ewc, 100.0);
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = cli(&["run", "--config", s(&synthetic_config()), "--out", s(&out), "--seed", "9"]);
    assert!(o.status.success());
    assert!(read(&out.join("metrics.csv")).lines().nth(1).unwrap().starts_with("supportnet,9,"));
}

#[test]
fn config_errors_exit_2_with_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.conf");
    std::fs::write(&bad, "[method]\nbudget = lots\n").unwrap();
    let o = cli(&["run", "--config", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&o.stderr));

    let o = cli(&["run", "--config", s(&tmp.path().join("missing.conf")), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_mnist_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("mnist.conf");
    std::fs::write(&conf, "[data]\nsource = mnist\n").unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = cli(&["run", "--config", s(&conf), "--out", s(&tmp.path().join("o")), "--data-dir", s(&empty)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn diverging_training_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = variant(tmp.path(), &[("optimizer", "learning_rate", "1e300")]);
    let o = cli(&["run", "--config", s(&conf), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_argument_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let conf = synthetic_config();
    for args in [
        vec!["sweep-ewc", "--coeffs", ""],
        vec!["sweep-ewc", "--coeffs", "abc"],
        vec!["sweep-ewc", "--coeffs", "-1"],
        vec!["sweep-support", "--sizes", "60,30"],
        vec!["sweep-support", "--sizes", "0"],
    ] {
        let mut full = args.clone();
        full.extend(["--config", s(&conf), "--out", s(&out)]);
        assert_eq!(cli(&full).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn ewc_sweep_reports_five_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = cli(&[
        "sweep-ewc", "--config", s(&synthetic_config()), "--out", s(&out), "--coeffs", "1,100,1000", "--parallel", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&out.join("summary.csv"));
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda_ewc,accuracy,kappa,macro_f1,macro_precision,macro_recall"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(row.len(), 6);
        for v in &row[1..] {
            let v: f64 = v.parse().unwrap();
            assert!((-1.0..=1.0).contains(&v));
        }
    }
    assert_eq!(rows[0][0], "1.0");
    assert!(out.join("lambda_ewc_100.0/metrics.csv").exists());
}

#[test]
fn compare_emits_one_column_per_method() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = cli(&["compare", "--config", s(&synthetic_config()), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&out.join("summary.csv"));
    assert_eq!(
        summary.lines().next().unwrap(),
        "increment,classes_seen,supportnet,fine_tune,all_data,random_guess,random_rehearsal"
    );
    assert_eq!(summary.lines().count(), 4);
    for tag in ["supportnet", "fine_tune", "all_data", "random_guess", "random_rehearsal"] {
        assert!(out.join(format!("accuracy_matrix_{tag}.csv")).exists(), "{tag}");
    }
}

#[test]
fn support_sweep_rows_follow_budget_order() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = cli(&["sweep-support", "--config", s(&synthetic_config()), "--out", s(&out), "--sizes", "12,30,60"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&out.join("summary.csv"));
    let budgets: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(budgets, ["12", "30", "60"]);
    assert!(out.join("all_data/metrics.csv").exists());
}
