use std::path::Path;
use std::process::{Command, Output};

fn derfdd(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_derfdd")).arg("--out").arg(out).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_prints_effective_toml() {
    let dir = tempfile::tempdir().unwrap();
    let o = derfdd(dir.path(), &["--preset", "desk", "--seed", "9", "config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 9"));
    assert!(text.contains("preset = \"desk\""));
    assert!(text.contains("sample_period = 0.00005"));
}

#[test]
fn unknown_preset_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = derfdd(dir.path(), &["--preset", "huge", "config"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: invalid configuration: unknown preset `huge`"));
}

#[test]
fn missing_inputs_name_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    for (args, producer) in [
        (&["train", "lstm"][..], "derfdd gen-dataset"),
        (&["run-ftc"][..], "derfdd train lstm"),
        (&["eval"][..], "derfdd train knn"),
        (&["plot"][..], "derfdd run-ftc"),
    ] {
        let o = derfdd(dir.path(), args);
        assert!(!o.status.success(), "{args:?} should fail");
        let e = stderr(&o);
        assert!(e.starts_with("error: missing ") && e.contains(producer), "{args:?}: {e}");
    }
}

#[test]
fn simulate_writes_a_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let sched = dir.path().join("tiny.txt");
    std::fs::write(&sched, "duration 0.02\nag 0.005 0.01 0.1 0.1\n").unwrap();
    let o = derfdd(dir.path(), &["--preset", "desk", "simulate", "--schedule", sched.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = dir.path().join("simulate/tiny.csv");
    let text = std::fs::read_to_string(trace).unwrap();
    assert!(text.starts_with("# derfdd-trace 1 sample_period=0.00005"));
    assert_eq!(text.lines().count(), 2 + 400);
    assert!(text.contains(",AG\n"));
}
