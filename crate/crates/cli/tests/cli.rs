use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = "\
name = smoke
steps = 10
seeds = 7
arms = exgrpo, on_policy
strata = 1:6, 2:6
batch_size = 4
";

fn exgrpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exgrpo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_one_record_per_step_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.txt", SPEC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = exgrpo(&["train", "--spec", &spec, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in [
        "exgrpo_seed7.jsonl",
        "on_policy_seed7.jsonl",
        "exgrpo_seed7.csv",
        "summary.json",
    ] {
        let x = std::fs::read(a.join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let jsonl = std::fs::read_to_string(a.join("exgrpo_seed7.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 10);
    assert!(jsonl.lines().all(|l| l.contains("\"format_version\":1")));
    let csv = std::fs::read_to_string(a.join("exgrpo_seed7.csv")).unwrap();
    assert!(csv.starts_with("format_version,"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn seed_override_replaces_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.txt", SPEC);
    let out = dir.path().join("o");
    let o = exgrpo(&[
        "train",
        "--spec",
        &spec,
        "--out",
        out.to_str().unwrap(),
        "--seed-override",
        "99",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("exgrpo_seed99.jsonl").exists());
    assert!(!out.join("exgrpo_seed7.jsonl").exists());
}

#[test]
fn malformed_spec_reports_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "bad.txt", "steps = 10\nrho = lots\n");
    let o = exgrpo(&[
        "train",
        "--spec",
        &spec,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("rho"), "{err}");
}

#[test]
fn verify_fast_passes_and_mutation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let o = exgrpo(&["verify", "--tier", "fast", "--json", json.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(report["checks"].as_array().is_some_and(|c| !c.is_empty()));

    let o = exgrpo(&["verify", "--tier", "fast", "--force-unit-weight"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unbiased"), "{}", stderr(&o));
}

#[test]
fn inspect_buffer_reads_training_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.txt", SPEC);
    let out = dir.path().join("o");
    assert!(
        exgrpo(&["train", "--spec", &spec, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let o = exgrpo(&[
        "inspect-buffer",
        out.join("exgrpo_seed7.snapshot").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("invariants ok"));
}

#[test]
fn inspect_buffer_handles_empty_violating_and_corrupt_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(
        dir.path(),
        "empty.snapshot",
        "exgrpo-buffer 1\ngroup_size 4\nstep 0\ncapacity none\nretired\n",
    );
    let o = exgrpo(&["inspect-buffer", &empty]);
    assert!(o.status.success(), "{}", stderr(&o));

    let both = write(
        dir.path(),
        "both.snapshot",
        "exgrpo-buffer 1\ngroup_size 4\nstep 3\ncapacity none\nretired 5\nquestion 5 2/4 1\ntraj 0 1 - | 0 3 | -0.5 -0.5\n",
    );
    let o = exgrpo(&["inspect-buffer", &both]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("retired"));

    let corrupt = write(
        dir.path(),
        "corrupt.snapshot",
        "exgrpo-buffer 1\ngroup_size four\n",
    );
    let o = exgrpo(&["inspect-buffer", &corrupt]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("offset"), "{err}");
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.txt", SPEC);
    let blocker = write(dir.path(), "file", "x");
    let o = exgrpo(&["train", "--spec", &spec, "--out", &format!("{blocker}/sub")]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error:"));
}
