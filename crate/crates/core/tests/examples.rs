//! Runs the quick examples that `cargo test` builds next to the test binaries.

use std::path::PathBuf;
use std::process::Command;

fn example(name: &str) -> PathBuf {
    // target/<profile>/deps/<test> -> target/<profile>/examples/<name>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("examples").join(name)
}

fn run(name: &str) -> String {
    let path = example(name);
    assert!(path.exists(), "{} not built", path.display());
    let out = Command::new(&path).output().unwrap();
    assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn kalman_oracle_reports_round_off_errors() {
    let out = run("kalman_oracle");
    for line in out.lines() {
        let err: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(err < 1e-10, "{line}");
    }
    assert_eq!(out.lines().count(), 2);
}

#[test]
fn taper_and_operator_examples_run() {
    assert!(run("gaspari_cohn").contains("distance 0) weight 1.0000"));
    assert!(run("observation_operators").contains("nonlinear_indirect"));
}
