use std::process::{Command, Output};

use nmg::checkpoint::Checkpoint;
use nmg::report::TableReport;
use nmg::ModelKind;

fn nmg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmg")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn oracle_passes_on_small_grids() {
    let o = nmg(&["oracle", "--problem", "p5,aniso10", "--seeds", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.ends_with("ok")).count(), 6, "{text}");
}

#[test]
fn gradcheck_exit_code_follows_tolerance() {
    let ok = nmg(&["gradcheck", "--model", "s1mg_s", "--problem", "p5"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    let strict = nmg(&["gradcheck", "--model", "s1mg_s", "--problem", "p5", "--tol", "1e-30"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn train_then_evaluate_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("s3.json");
    let ck_s = ck.to_str().unwrap();
    let o = nmg(&["train", "--model", "s3mg_s", "--J", "3", "--steps", "6", "--out", ck_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("final loss"));
    let loaded = Checkpoint::load(&ck).unwrap();
    assert_eq!(loaded.loss_history.len(), 6);

    let csv = dir.path().join("eval.csv");
    let o = nmg(&["eval", "--checkpoint", ck_s, "--J", "3:4", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = TableReport::from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(report.depths(), vec![3, 4]);
    assert!(report.get(4, ModelKind::S3mgS).unwrap().value().unwrap() < 1.0);
    assert!(stdout(&o).starts_with("J,model,problem,rho1,seed,trained_J"));
}

#[test]
fn eval_of_baseline_is_deterministic() {
    let a = nmg(&["eval", "--model", "lmg", "--J", "3"]);
    let b = nmg(&["eval", "--model", "lmg", "--J", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let row = stdout(&a).lines().nth(1).unwrap().to_string();
    let rho: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((rho - 0.11).abs() < 0.02, "{row}");
}

#[test]
fn reproduce_writes_tables_and_training_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nmg(&[
        "reproduce",
        "--problem",
        "p5",
        "--models",
        "lmg,s1mg_s",
        "--J",
        "3:4",
        "--train-J",
        "3",
        "--steps",
        "4",
        "--out-dir",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["p5.csv", "p5.md", "p5_training.csv", "tables.md", "checkpoints/p5_s1mg_s.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report = TableReport::from_csv(&std::fs::read_to_string(dir.path().join("p5.csv")).unwrap()).unwrap();
    assert_eq!(report.models(), vec![ModelKind::Lmg, ModelKind::S1mgS]);
    let md = std::fs::read_to_string(dir.path().join("p5.md")).unwrap();
    assert!(md.contains("| J |"), "{md}");
    let training = std::fs::read_to_string(dir.path().join("p5_training.csv")).unwrap();
    assert!(training.starts_with("model,problem,steps,final_loss,seconds"), "{training}");
}

#[test]
fn errors_exit_with_code_two() {
    let o = nmg(&["eval", "--model", "resnet", "--J", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown model"));
    let o = nmg(&["eval", "--model", "lmg", "--J", "5:3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = nmg(&["train", "--model", "lmg", "--out", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_nmg"))
        .args(["eval", "--model", "lmg", "--J", "3"])
        .env("NMG_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!nmg(&["frobnicate"]).status.success());
}

#[test]
fn thread_count_does_not_change_results() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_nmg"))
            .args(["eval", "--model", "s3mg_s", "--J", "4:5"])
            .env("NMG_THREADS", threads)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run("1"), run("3"));
}
