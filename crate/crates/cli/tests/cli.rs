use std::path::Path;
use std::process::{Command, Output};

fn rio(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rio")).args(args).current_dir(dir).output().expect("run rio")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn init_config_round_trips_through_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = rio(&["--init-config", "cfg.json"], dir.path());
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("cfg.json")).unwrap();
    let cfg = rio_core::experiment::ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(cfg, rio_core::experiment::ExperimentConfig::default());
    let o = rio(&["gen-corpus", "--config", "cfg.json", "--train-size", "20", "--pool-size", "10", "--eval-size", "5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("gen-corpus: train 20 pool 10 eval 5"));
}

#[test]
fn bayes_check_prints_violation() {
    let dir = tempfile::tempdir().unwrap();
    let o = rio(&["bayes-check", "--acoustic-size", "4", "--text-len", "1"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("max violation 0.000e0"), "{}", stdout(&o));
}

#[test]
fn failures_are_category_coded() {
    let dir = tempfile::tempdir().unwrap();
    let missing = rio(&["pretrain"], dir.path());
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error[io]"));

    let sizes = ["--train-size", "20", "--pool-size", "10", "--eval-size", "5"];
    let mut args = vec!["gen-corpus"];
    args.extend(sizes);
    assert!(rio(&args, dir.path()).status.success());
    // Same corpus, different seed: the stage hash no longer matches.
    let mut args = vec!["pretrain", "--seed", "9"];
    args.extend(sizes);
    let mismatch = rio(&args, dir.path());
    assert_eq!(mismatch.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&mismatch.stderr).starts_with("error[config-mismatch]"));

    let zero = rio(&["iterate", "--model", "none.ckpt", "--rounds", "0"], dir.path());
    assert_eq!(zero.status.code(), Some(2));

    let bad_compare = rio(&["compare", "a.json", "b.json"], dir.path());
    assert_eq!(bad_compare.status.code(), Some(3));
}
