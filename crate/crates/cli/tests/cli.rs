use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_outfit-dpo"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const QUICK: [&str; 4] = ["--set", "pretrain_steps=20", "--set", "bpr_epochs=2"];

fn quick(cmd: &str, run_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--run", p(run_dir)];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn panel_weights_prints_rounded_percentages() {
    let o = run(&["panel-weights", "9,10,7,11", "8,8,8,10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "criterion,total,weight,percent");
    let pct: Vec<&str> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(pct, ["24", "25", "21", "30"]);
    assert!(lines[1].starts_with("1,17,"));
}

#[test]
fn bad_panel_row_is_a_config_error() {
    let o = run(&["panel-weights", "1,x"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error[cli.config]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn unknown_flag_exits_with_usage_status() {
    assert_eq!(run(&["run", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--run", p(dir.path()), "--checkpoint", p(&dir.path().join("absent.ckpt"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[io."), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen-world", "--run", p(dir.path()), "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[cli.config]: "));
}

#[test]
fn zero_epochs_copies_the_base_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen-world", "pretrain", "train-experts"] {
        let o = quick(cmd, dir.path(), &[]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let o = quick("finetune", dir.path(), &["--epochs", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let base = std::fs::read(dir.path().join("checkpoints/base.ckpt")).unwrap();
    let fin = std::fs::read(dir.path().join("checkpoints/final.ckpt")).unwrap();
    assert_eq!(base, fin);
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["gen-world", "pretrain", "train-experts"] {
        assert!(quick(cmd, dir.path(), &[]).status.success());
    }
    let ck = dir.path().join("checkpoints/base.ckpt");
    let mut bytes = std::fs::read(&ck).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&ck, bytes).unwrap();
    let o = quick("eval", dir.path(), &["--checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[io.corrupt]: "), "{}", stderr(&o));
}

fn counts(o: &Output) -> String {
    let out = String::from_utf8_lossy(&o.stdout);
    out.split(" -> ").next().unwrap().to_string()
}

#[test]
fn export_then_ingest_keeps_the_catalogue() {
    let a = tempfile::tempdir().unwrap();
    let gen = quick("gen-world", a.path(), &[]);
    assert!(gen.status.success());
    assert!(run(&["export-world", "--run", p(a.path())]).status.success());
    let b = tempfile::tempdir().unwrap();
    let ingested = quick("gen-world", b.path(), &["--ingest", p(&a.path().join("export"))]);
    assert!(ingested.status.success(), "{}", stderr(&ingested));
    assert_eq!(counts(&gen), counts(&ingested));
}

#[test]
fn report_without_evaluations_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(quick("gen-world", dir.path(), &[]).status.success());
    let o = run(&["report", "--run", p(dir.path())]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).starts_with("error[cli.empty]: "), "{}", stderr(&o));
}
