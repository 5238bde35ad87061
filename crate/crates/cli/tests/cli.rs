use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msgnet"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

/// The machine-readable error line a failed run ends with.
fn error_line(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(stderr.lines().last().expect("stderr line")).expect("JSON error line")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn analyze_reproduces_the_hand_counted_fixture() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["analyze", "--annotations", "fixtures/three_box.jsonl", "--out", s(dir.path())]);
    // Two cargo ships (100x30, 50x15) and one buoy (20x10) over two images.
    assert_eq!(
        read(dir.path().join("categories.csv")),
        "category,count,percent\ncargo_ship,2,66.6667\npassenger_ship,0,0.0000\nbuoy,1,33.3333\ncontainer_ship,0,0.0000\n"
    );
    // Areas 3000 (medium), 750 and 200 (small).
    assert_eq!(
        read(dir.path().join("scales.csv")),
        "bucket,count,percent\nsmall,2,66.6667\nmedium,1,33.3333\nlarge,0,0.0000\n"
    );
    assert_eq!(
        read(dir.path().join("objects_per_image.csv")),
        "objects,count,percent\n1,1,50.0000\n2,1,50.0000\n"
    );
    // Aspect ratios 2, 10/3, 10/3.
    let aspect = read(dir.path().join("aspect_ratio.csv"));
    assert!(aspect.contains("\"[2,3)\",1,33.3333\n\"[3,4)\",2,66.6667\n"));
    // Median aspect ratio 10/3 rounds to a horizontal limit of 3.
    let limits: serde_json::Value = serde_json::from_str(&read(dir.path().join("offset_limits.json"))).unwrap();
    assert_eq!(limits["r_x"], 3.0);
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "analyze");
    assert!(manifest["outputs"]["categories.csv"].is_string());
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn analyze_is_byte_identical_across_runs() {
    // Same output directory both times: it is part of the hashed config.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stats");
    let mut first = Vec::new();
    for pass in 0..2 {
        ok(&["analyze", "--annotations", "fixtures/tiny/annotations.jsonl", "--out", s(&out)]);
        let files: Vec<String> = ["categories.csv", "relative_scale.csv", "summary.json", "manifest.json"]
            .iter()
            .map(|f| read(out.join(f)))
            .collect();
        if pass == 0 {
            first = files;
            fs::remove_dir_all(&out).unwrap();
        } else {
            assert_eq!(first, files);
        }
    }
}

#[test]
fn unknown_subcommand_exits_with_usage() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn invalid_configuration_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train-detector", "--config", "fixtures/tiny.toml", "--set", "detector.widths=[4]", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_line(&o);
    assert_eq!(e["error"], "config");
    assert_eq!(e["field"], "detector.widths");

    let cfg = dir.path().join("noseed.toml");
    fs::write(&cfg, "[train]\nsteps = 1\n").unwrap();
    let o = run(&["train-detector", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["field"], "seed");

    let o = run(&["analyze", "--annotations", "fixtures/missing.jsonl", "--out", s(dir.path())]);
    assert_eq!(error_line(&o)["field"], "data.annotations");

    let o = run(&["degrade", "--annotations", "fixtures/three_box.jsonl", "--out", s(dir.path())]);
    assert_eq!(error_line(&o)["field"], "seed");
}

#[test]
fn eval_of_ground_truth_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.jsonl");
    let mut lines = String::new();
    for line in read(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/tiny/annotations.jsonl")).lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let dets: Vec<_> = rec["objects"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| serde_json::json!({"category": o["category"], "score": 0.9, "bbox_xywh": o["bbox_xywh"]}))
            .collect();
        lines += &serde_json::json!({"image": rec["image"], "detections": dets}).to_string();
        lines.push('\n');
    }
    fs::write(&preds, lines).unwrap();
    let out = dir.path().join("eval");
    ok(&["eval", "--annotations", "fixtures/tiny/annotations.jsonl", "--predictions", s(&preds), "--out", s(&out)]);
    let m: serde_json::Value = serde_json::from_str(&read(out.join("metrics.json"))).unwrap();
    assert_eq!(m["map_50_95"], 1.0);
    assert_eq!(m["map_50"], 1.0);
}

#[test]
fn full_workflow_on_bundled_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let cfg = ["--config", "fixtures/tiny.toml"];
    let with = |cmd: &str, extra: &[&str], out: &Path| {
        let mut a = vec![cmd];
        a.extend_from_slice(&cfg);
        a.extend_from_slice(extra);
        a.extend_from_slice(&["--out", s(out)]);
        ok(&a);
        assert!(out.join("manifest.json").exists(), "{cmd} wrote no manifest");
    };

    with("synth", &["--set", "synth.count=6"], &d("synth"));
    assert_eq!(read(d("synth").join("annotations.jsonl")).lines().count(), 6);

    with("degrade", &[], &d("degrade"));
    let pairs = read(d("degrade").join("pairs.jsonl"));
    assert_eq!(pairs.lines().count(), 12);
    assert!(pairs.contains("\"scene\":\"foggy\""));

    with("train-scene", &[], &d("scene"));
    let scene_ckpt = d("scene").join("scene.ckpt");
    with("train-enhancer", &["--scene-checkpoint", s(&scene_ckpt)], &d("enhancer"));
    let m: serde_json::Value = serde_json::from_str(&read(d("enhancer").join("metrics.json"))).unwrap();
    assert!(m["psnr_gain_db"].is_f64());

    let sgie_ckpt = d("enhancer").join("sgie.ckpt");
    with(
        "train-detector",
        &["--set", "detector.use_sgie=true", "--sgie-checkpoint", s(&sgie_ckpt)],
        &d("detector"),
    );
    assert_eq!(read(d("detector").join("loss_log.csv")).lines().count(), 4);

    let det_ckpt = d("detector").join("detector.ckpt");
    with("eval", &["--set", "detector.use_sgie=true", "--checkpoint", s(&det_ckpt)], &d("eval"));
    assert_eq!(read(d("eval").join("predictions.jsonl")).lines().count(), 12);

    // The checkpoint refuses a model built from a different configuration.
    let o = run(&["eval", "--config", "fixtures/tiny.toml", "--checkpoint", s(&det_ckpt), "--out", s(&d("bad"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"], "checkpoint");

    with("convert-darklabel", &["--csv", "fixtures/darklabel.csv"], &d("darklabel"));
    let converted = read(d("darklabel").join("annotations.jsonl"));
    assert_eq!(converted.lines().count(), 2);
    assert!(converted.contains("\"passenger_ship\""));
}

#[test]
fn training_and_ablation_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for run_dir in ["a", "b"] {
        let out = dir.path().join(run_dir);
        ok(&["train-detector", "--config", "fixtures/tiny.toml", "--out", s(&out.join("det"))]);
        ok(&["ablate", "--config", "fixtures/tiny.toml", "--set", "train.steps=2", "--out", s(&out.join("abl"))]);
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for f in ["det/loss_log.csv", "det/metrics.json", "abl/ablation.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    assert_eq!(fs::read(a.join("det/detector.ckpt")).unwrap(), fs::read(b.join("det/detector.ckpt")).unwrap());
    let csv = read(a.join("abl/ablation.csv"));
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.starts_with("sgie,pld,msdrf,map_50_95,delta\n0,0,0,"));
}
