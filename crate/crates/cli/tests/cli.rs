use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use s2m::io::{read_binary_mask, read_scoremap};
use s2m::prompts::read_prompts;
use s2m::ScoreRaster;
use serde_json::Value;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn s2m(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2m")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = s2m(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn fails(args: &[&str]) -> String {
    let out = s2m(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn score_reads_class_major_logits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.npy");
    ok(&["score", "--logits", p(&fixture("logits.npy")), "--method", "entropy", "--out", p(&out)]);
    let h = read_scoremap(&out).unwrap();
    assert_eq!(h.dims(), (32, 24));
    assert_eq!(h.get(10, 10), (3f64).log2() as f32);
    assert!(h.get(0, 0) < 0.1);

    let e = dir.path().join("e.npy");
    ok(&["score", "--logits", p(&fixture("logits.npy")), "--method", "energy", "--temperature", "2", "--out", p(&e)]);
    let e = read_scoremap(&e).unwrap();
    // uniform block: -T * log(3 * exp(1.5 / T))
    let want = -2.0 * (3.0f64.ln() + 0.75);
    assert!((f64::from(e.get(10, 10)) - want).abs() < 1e-5);

    let err = fails(&["score", "--logits", p(&fixture("logits.npy")), "--method", "entropy", "--temperature", "2", "--out", p(&out)]);
    assert!(err.contains("--temperature"), "{err}");
}

#[test]
fn prompts_then_segment_recover_the_block() {
    let dir = tempfile::tempdir().unwrap();
    let boxes = dir.path().join("boxes.json");
    // 719 background pixels below 0.2: q = 0.937 puts the cut at the top one
    let scores = fixture("scores/img_a.npy");
    ok(&["prompts", "--scores", p(&scores), "--quantile", "0.937", "--min-area", "4", "--out", p(&boxes)]);
    let set = read_prompts(&boxes).unwrap();
    assert_eq!((set.width, set.height), (32, 24));
    assert_eq!(set.boxes.len(), 1);
    let b = set.boxes[0];
    assert_eq!((b.x0, b.y0, b.x1, b.y1), (4, 5, 11, 12));

    let conf = dir.path().join("conf.npy");
    let mask = dir.path().join("mask.png");
    ok(&["segment", "--scores", p(&scores), "--boxes", p(&boxes), "--out", p(&conf), "--mask-out", p(&mask)]);
    let m = read_binary_mask(&mask).unwrap();
    let on: Vec<(usize, usize)> = (0..24)
        .flat_map(|y| (0..32).map(move |x| (x, y)))
        .filter(|&(x, y)| m.get(x, y))
        .collect();
    assert_eq!(on.len(), 49);
    assert!(on.iter().all(|&(x, y)| (4..11).contains(&x) && (5..12).contains(&y)));
    let c = read_scoremap(&conf).unwrap();
    assert_eq!(f64::from(c.get(5, 6)), f64::from(b.confidence as f32));
}

#[test]
fn segment_fuses_external_masks_by_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fused.npy");
    for key in ["a", "b"] {
        let masks = fixture(&format!("masks/{key}"));
        ok(&[
            "segment",
            "--external-masks",
            p(&masks),
            "--confidences",
            p(&masks.join("confidences.json")),
            "--out",
            p(&out),
        ]);
        let f = read_scoremap(&out).unwrap();
        let (x0, y0) = if key == "a" { (4, 5) } else { (18, 10) };
        assert_eq!(f.get(x0, y0), 0.4);
        assert_eq!(f.get(x0 + 5, y0 + 5), 0.9);
        assert_eq!(f.get(0, 0), 0.0);
    }
    let err = fails(&["segment", "--external-masks", p(&fixture("masks/a")), "--out", p(&out)]);
    assert!(err.contains("--confidences"), "{err}");
}

#[test]
fn eval_report_has_the_documented_keys() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let csv = dir.path().join("per_image.csv");
    let curves = dir.path().join("curves");
    ok(&[
        "eval",
        "--pred-dir",
        p(&fixture("scores")),
        "--gt-dir",
        p(&fixture("gt")),
        "--report",
        p(&report),
        "--csv",
        p(&csv),
        "--curves",
        p(&curves),
    ]);
    let r = json(&report);
    for key in ["best_iou", "best_threshold", "auiou", "mean_f1", "auprc", "fpr95", "n_images", "per_image"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["n_images"], 2);
    assert_eq!(r["sweep"]["steps"], 100);
    assert_eq!(r["sweep"]["range"], "dataset");
    assert_eq!(r["per_image"].as_array().unwrap().len(), 2);
    // blocks score above 0.8 and background below 0.2
    assert_eq!(r["best_iou"], 1.0);
    assert_eq!(r["auprc"], 1.0);
    assert_eq!(r["fpr95"], 0.0);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);
    assert!(curves.join("curves.csv").exists());
    assert!(curves.join("histogram.csv").exists());

    ok(&[
        "eval", "--pred-dir", p(&fixture("scores")), "--gt-dir", p(&fixture("gt")),
        "--agg", "mean", "--range", "unit", "--steps", "20", "--report", p(&report),
    ]);
    let r = json(&report);
    assert_eq!(r["sweep"]["steps"], 20);
    assert_eq!(r["sweep"]["range"], "unit");
}

#[test]
fn pipeline_runs_in_all_three_modes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let manifest = dir.path().join("manifest.json");
    let viz = dir.path().join("viz");
    let (scores, gt) = (fixture("scores"), fixture("gt"));
    let (config, boxes, masks) = (fixture("pipeline.toml"), fixture("boxes"), fixture("masks"));
    let base = [
        "pipeline",
        "--scores-dir",
        p(&scores),
        "--gt-dir",
        p(&gt),
        "--report",
        p(&report),
        "--manifest",
        p(&manifest),
    ];

    let mut args = base.to_vec();
    args.extend(["--config", p(&config), "--viz-dir", p(&viz)]);
    ok(&args);
    let first = fs::read(&report).unwrap();
    ok(&args);
    assert_eq!(first, fs::read(&report).unwrap());
    let r = json(&report);
    assert_eq!(r["n_images"], 2);
    assert_eq!(r["sweep"]["steps"], 50);
    assert!(r["threshold_free_iou"].as_f64().unwrap() > 0.9);
    let m = json(&manifest);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["images"].as_array().unwrap().len(), 2);
    assert!(viz.join("conf_a.png").exists() && viz.join("conf_b.png").exists());

    let mut args = base.to_vec();
    args.extend(["--boxes-dir", p(&boxes)]);
    ok(&args);
    assert_eq!(json(&report)["threshold_free_iou"], 1.0);

    let mut args = base.to_vec();
    args.extend(["--masks-dir", p(&masks)]);
    ok(&args);
    assert_eq!(json(&report)["threshold_free_iou"], 1.0);
}

#[test]
fn pipeline_rejects_unpaired_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    fs::create_dir_all(&gt).unwrap();
    fs::copy(fixture("gt/gt_a.png"), gt.join("gt_a.png")).unwrap();
    let report = dir.path().join("r.json");
    let err = fails(&[
        "pipeline",
        "--scores-dir",
        p(&fixture("scores")),
        "--gt-dir",
        p(&gt),
        "--report",
        p(&report),
        "--manifest",
        p(&dir.path().join("m.json")),
    ]);
    assert!(err.contains("unmatched stems: b"), "{err}");
    assert!(!report.exists());
}

#[test]
fn synth_writes_paired_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oe");
    let run = |out: &Path| {
        ok(&[
            "synth",
            "--inlier-dir",
            p(&fixture("synth/inliers")),
            "--object-dir",
            p(&fixture("synth/objects")),
            "--out",
            p(out),
            "--count",
            "3",
            "--seed",
            "9",
        ])
    };
    run(&out);
    for i in 0..3 {
        for name in [format!("img_{i:06}.png"), format!("gt_{i:06}.png"), format!("boxes_{i:06}.json")] {
            assert!(out.join(&name).exists(), "{name}");
        }
        let set = read_prompts(out.join(format!("boxes_{i:06}.json"))).unwrap();
        assert_eq!((set.width, set.height), (40, 30));
        assert_eq!(set.boxes.len(), 1);
    }
    let again = dir.path().join("again");
    run(&again);
    for i in 0..3 {
        let name = format!("img_{i:06}.png");
        assert_eq!(fs::read(out.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap());
    }
}
