//! End-to-end CLI checks: synth -> index build -> ask -> eval -> datagen ->
//! train-toy -> trace, all through the compiled binary.

use std::path::Path;
use std::process::Command;

fn vx(args: &[&str]) -> (bool, String, String) {
    let output = Command::new(env!("CARGO_BIN_EXE_vx"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        output.status.success(),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

fn assert_ok(args: &[&str]) -> String {
    let (ok, stdout, stderr) = vx(args);
    assert!(ok, "vx {args:?} failed:\nstdout: {stdout}\nstderr: {stderr}");
    stdout
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let world_dir = dir.path().join("world");
    let world_dir_s = world_dir.to_str().unwrap();

    // synth: world + tasks + index.
    let out = assert_ok(&[
        "synth", "--seed", "7", "--duration", "600", "--events", "5", "--out-dir", world_dir_s,
    ]);
    assert!(out.contains("5 events, 50 tasks"), "unexpected synth output: {out}");
    assert!(world_dir.join("world.json").is_file());
    assert!(world_dir.join("tasks.jsonl").is_file());
    assert!(world_dir.join("video.json").is_file());
    assert!(world_dir.join("synthv7.vxix").is_file());

    // index build: rebuild from the video metadata; must byte-match synth's.
    let rebuilt = dir.path().join("rebuilt.vxix");
    assert_ok(&[
        "index", "build",
        "--video", world_dir.join("video.json").to_str().unwrap(),
        "--clip-len", "4.0",
        "--backend", "synth:7",
        "--out", rebuilt.to_str().unwrap(),
    ]);
    let a = std::fs::read(world_dir.join("synthv7.vxix")).unwrap();
    let b = std::fs::read(&rebuilt).unwrap();
    assert_eq!(a, b, "index build must reproduce the synth index byte for byte");

    // ask: run one episode against the world backend and dump the trace.
    let tasks_text = std::fs::read_to_string(world_dir.join("tasks.jsonl")).unwrap();
    let first_task_line = tasks_text.lines().next().unwrap();
    let task_path = dir.path().join("task0.json");
    std::fs::write(&task_path, first_task_line).unwrap();
    let trace_path = dir.path().join("trace.json");
    let world_backend = format!("world:{}", world_dir.join("world.json").display());
    let out = assert_ok(&[
        "ask",
        "--task", task_path.to_str().unwrap(),
        "--index", world_dir.join("synthv7.vxix").to_str().unwrap(),
        "--backend", &world_backend,
        "--trace", trace_path.to_str().unwrap(),
    ]);
    assert!(out.contains("[correct]"), "episode should answer correctly: {out}");

    // trace: pretty-print the stored trajectory.
    let out = assert_ok(&["trace", trace_path.to_str().unwrap()]);
    assert!(out.contains("--- block"));

    // eval in both modes.
    let report_path = dir.path().join("explorer.json");
    let out = assert_ok(&[
        "eval",
        "--tasks", world_dir.join("tasks.jsonl").to_str().unwrap(),
        "--index-dir", world_dir_s,
        "--backend", "synth:7",
        "--mode", "explorer",
        "--parallel", "4",
        "--report", report_path.to_str().unwrap(),
    ]);
    assert!(out.contains("accuracy 1.000"), "explorer accuracy: {out}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["mode"], "explorer");
    assert_eq!(report["n_tasks"], 50);
    assert_eq!(report["config_echo"]["tokens_per_frame"], 256);

    let vanilla_path = dir.path().join("vanilla.json");
    let out = assert_ok(&[
        "eval",
        "--tasks", world_dir.join("tasks.jsonl").to_str().unwrap(),
        "--index-dir", world_dir_s,
        "--backend", "synth:7",
        "--mode", "vanilla",
        "--parallel", "4",
        "--report", vanilla_path.to_str().unwrap(),
    ]);
    assert!(out.contains("vanilla:"), "vanilla run output: {out}");

    // datagen with a slip rate so preference pairs exist, then train-toy.
    let sft_path = dir.path().join("sft.jsonl");
    let pairs_path = dir.path().join("pairs.jsonl");
    let out = assert_ok(&[
        "datagen",
        "--tasks", world_dir.join("tasks.jsonl").to_str().unwrap(),
        "--index-dir", world_dir_s,
        "--backend", "synth:7",
        "--n-first", "2",
        "--budget", "60",
        "--eps", "0.05",
        "--seed", "17",
        "--slip", "0.3",
        "--out-sft", sft_path.to_str().unwrap(),
        "--out-pairs", pairs_path.to_str().unwrap(),
    ]);
    assert!(out.contains("preference pairs"), "datagen output: {out}");
    assert!(count_lines(&sft_path) > 0, "sft file should not be empty");
    assert!(count_lines(&pairs_path) > 0, "pairs file should not be empty");

    let csv_path = dir.path().join("train.csv");
    let out = assert_ok(&[
        "train-toy",
        "--pairs", pairs_path.to_str().unwrap(),
        "--beta", "0.1",
        "--lr", "0.1",
        "--steps", "50",
        "--report", csv_path.to_str().unwrap(),
    ]);
    assert!(out.contains("mean margin"), "train output: {out}");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("step,loss,mean_margin,mean_ref_drift"));
    assert_eq!(csv.lines().count(), 51, "header + one row per step");
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn bad_backend_spec_fails_cleanly() {
    let (ok, _, stderr) = vx(&["index", "build", "--video", "/nonexistent.json", "--backend", "bogus:1", "--out", "/tmp/x.vxix"]);
    assert!(!ok);
    assert!(!stderr.is_empty());
}
