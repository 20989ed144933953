use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sepl::checkpoint::Checkpoint;
use sepl::Config;

fn sepl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sepl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SEPL_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = sepl(args, cwd);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = sepl(args, cwd);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// Small dataset plus a short training run in a fresh directory.
fn trained() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["make-toy", "--videos", "40", "--out", "toy"], d);
    ok(&["train", "--manifest", "toy/manifest.jsonl", "--out", "run", "--stage1-steps", "3", "--stage2-steps", "10"], d);
    let ck = d.join("run/checkpoint.sepl");
    (dir, ck)
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    assert_eq!(code(&["--help"], d).0, 0);
    assert_eq!(code(&["train", "--help"], d).0, 0);
    assert_eq!(code(&["--version"], d).0, 0);
    for args in [
        &[][..],
        &["bogus"],
        &["train"],
        &["train", "--manifest", "m", "--fusion", "sum"],
        &["train", "--manifest", "m", "--adapter", "lora"],
        &["eval", "--checkpoint", "c", "--manifest", "m", "--split", "holdout"],
        &["make-toy", "--videos", "many"],
        &["train", "--manifest", "m", "--resume", "c", "--no-dis"],
        &["robust", "--checkpoint", "c", "--manifest", "m", "--severities", "6"],
    ] {
        assert_eq!(code(args, d).0, 1, "{args:?}");
    }
}

#[test]
fn runtime_failures_exit_2_with_a_diagnostic() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    let (c, err) = code(&["make-toy", "--videos", "7", "--out", "x"], d);
    assert_eq!(c, 2);
    assert!(err.starts_with("error:") && err.contains('7'), "{err}");
    let (c, err) = code(&["eval", "--checkpoint", "none.sepl", "--manifest", "none.jsonl"], d);
    assert_eq!(c, 2);
    assert!(err.contains("none.sepl"), "{err}");
    std::fs::write(d.join("bad.sepl"), b"not a checkpoint").unwrap();
    assert_eq!(code(&["eval", "--checkpoint", "bad.sepl", "--manifest", "none.jsonl"], d).0, 2);
}

#[test]
fn make_toy_is_byte_identical_across_reruns() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    ok(&["make-toy", "--videos", "12", "--seed", "5", "--out", "a"], d);
    ok(&["make-toy", "--videos", "12", "--seed", "5", "--out", "b"], d);
    ok(&["make-toy", "--videos", "12", "--seed", "6", "--out", "c"], d);
    assert_eq!(read(d.join("a/manifest.jsonl")), read(d.join("b/manifest.jsonl")));
    assert_eq!(read(d.join("a/images/v0003_f01.png")), read(d.join("b/images/v0003_f01.png")));
    assert_ne!(read(d.join("a/images/v0003_f01.png")), read(d.join("c/images/v0003_f01.png")));
    let lines = String::from_utf8(read(d.join("a/manifest.jsonl"))).unwrap().lines().count();
    assert_eq!(lines, 24);
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sepl"))
        .args(["make-toy", "--videos", "4", "--frames", "1"])
        .current_dir(d.path())
        .env("SEPL_OUTPUT_ROOT", "artifacts")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.path().join("artifacts/toy/manifest.jsonl").is_file());
    ok(&["make-toy", "--videos", "4", "--frames", "1"], d.path());
    assert!(d.path().join("runs/toy/manifest.jsonl").is_file());
}

#[test]
fn train_writes_artifacts_and_refuses_to_overwrite() {
    let (dir, ck) = trained();
    let d = dir.path();
    let run = d.join("run");
    let log = String::from_utf8(read(run.join("train_log.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 13);
    let cfg = Config::load(run.join("config.toml")).unwrap();
    assert_eq!((cfg.train.stage1_steps, cfg.train.stage2_steps), (3, 10));
    let meta = Checkpoint::load(&ck).unwrap().meta;
    assert!(meta.complete && !meta.skip_pretrain);
    assert_eq!(meta.config_hash, cfg.hash());

    let again = ["train", "--manifest", "toy/manifest.jsonl", "--out", "run", "--stage2-steps", "10"];
    let (c, err) = code(&again, d);
    assert_eq!(c, 2);
    assert!(err.contains("--force"), "{err}");
    let mut forced = again.to_vec();
    forced.push("--force");
    ok(&forced, d);
}

#[test]
fn ablation_flags_reach_the_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    ok(&["make-toy", "--videos", "12", "--out", "toy"], d);
    ok(
        &[
            "train", "--manifest", "toy/manifest.jsonl", "--out", "abl", "--stage2-steps", "3", "--skip-pretrain",
            "--no-dis", "--no-div", "--no-align", "--no-con", "--context-len", "4", "--fusion", "concat", "--adapter",
            "plugin",
        ],
        d,
    );
    let ck = Checkpoint::load(d.join("abl/checkpoint.sepl")).unwrap();
    assert!(ck.meta.skip_pretrain);
    let c = ck.config().unwrap();
    let l = &c.loss;
    assert_eq!([l.lambda1, l.lambda2, l.lambda3_specific, l.lambda3_irrelevant, l.lambda4], [0.0; 5]);
    assert_eq!(c.model.context_len, 4);
    assert_eq!(c.model.fusion, sepl::config::Fusion::Concat);
    assert_eq!(c.model.adapter, sepl::config::AdapterKind::Svd);
}

#[test]
fn cli_resume_matches_an_uninterrupted_run() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    ok(&["make-toy", "--videos", "20", "--out", "toy"], d);
    let base = ["train", "--manifest", "toy/manifest.jsonl", "--stage1-steps", "4", "--stage2-steps", "8"];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| ok(&args.iter().map(String::as_str).collect::<Vec<_>>(), d);
    run(with(&["--out", "whole"]));
    run(with(&["--out", "part", "--stop-after", "6"]));
    let meta = Checkpoint::load(d.join("part/checkpoint.sepl")).unwrap().meta;
    assert_eq!((meta.stage, meta.step, meta.complete), (2, 2, false));
    ok(&["train", "--manifest", "toy/manifest.jsonl", "--out", "part", "--resume", "part/checkpoint.sepl"], d);
    assert_eq!(read(d.join("part/checkpoint.sepl")), read(d.join("whole/checkpoint.sepl")));
    assert_eq!(read(d.join("part/train_log.jsonl")), read(d.join("whole/train_log.jsonl")));
}

#[test]
fn eval_report_is_deterministic() {
    let (dir, ck) = trained();
    let d = dir.path();
    let ck = ck.to_str().unwrap();
    ok(&["eval", "--checkpoint", ck, "--manifest", "toy/manifest.jsonl", "--out", "e1"], d);
    ok(&["eval", "--checkpoint", ck, "--manifest", "toy/manifest.jsonl", "--out", "e2"], d);
    for f in ["report.json", "report.csv", "scores.csv"] {
        assert_eq!(read(d.join("e1").join(f)), read(d.join("e2").join(f)), "{f}");
    }
    let v: serde_json::Value = serde_json::from_slice(&read(d.join("e1/report.json"))).unwrap();
    assert_eq!(v["dataset"], "toy");
    assert_eq!(v["split"], "test");
    for scope in ["frame", "video"] {
        for k in ["auc", "ap", "eer"] {
            assert!(v[scope][k].is_number(), "{scope}.{k}");
        }
    }
    let scores = String::from_utf8(read(d.join("e1/scores.csv"))).unwrap();
    assert_eq!(scores.lines().count() as u64, 1 + v["n_samples"].as_u64().unwrap());
}

#[test]
fn robust_emits_a_full_grid_and_plot() {
    let (dir, ck) = trained();
    let d = dir.path();
    let ck = ck.to_str().unwrap();
    ok(
        &[
            "robust", "--checkpoint", ck, "--manifest", "toy/manifest.jsonl", "--out", "rb", "--families",
            "gaussian_noise,block_wise",
        ],
        d,
    );
    let v: serde_json::Value = serde_json::from_slice(&read(d.join("rb/robust.json"))).unwrap();
    let grid = &v["robustness"];
    assert_eq!(grid["cells"].as_array().unwrap().len(), 2 * 5);
    assert_eq!(grid["average"].as_array().unwrap().len(), 5);
    let svg = String::from_utf8(read(d.join("rb/robust.svg"))).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("average"));
    let csv = String::from_utf8(read(d.join("rb/robust.csv"))).unwrap();
    assert!(csv.lines().filter(|l| l.contains("gaussian_noise")).count() >= 5);
}

#[test]
fn export_writes_point_files_with_one_row_per_sample() {
    let (dir, ck) = trained();
    let d = dir.path();
    let ck = ck.to_str().unwrap();
    let img = d.join("toy/images/v0001_f00.png");
    ok(
        &[
            "export", "--checkpoint", ck, "--manifest", "toy/manifest.jsonl", "--out", "ex", "--tsne-iters", "50",
            "--saliency", "2", "--image", img.to_str().unwrap(),
        ],
        d,
    );
    let m = sepl::data::load_manifest(d.join("toy/manifest.jsonl")).unwrap();
    let n = m.split(sepl::data::Split::Test).len();
    for w in ["backbone", "specific", "irrelevant"] {
        let (labels, x) = sepl::eval::read_points(d.join(format!("ex/{w}_points.csv"))).unwrap();
        assert_eq!(labels.len(), n);
        assert_eq!(x.nrows(), n);
        assert!(d.join(format!("ex/{w}_tsne.svg")).is_file());
    }
    let pngs = std::fs::read_dir(d.join("ex/saliency"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 3);
    assert!(d.join("ex/saliency/v0001_f00.csv").is_file());
}
