use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn posekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posekit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn posekit")
}

fn ok(args: &[&str]) -> Output {
    let out = posekit(args);
    assert!(
        out.status.success(),
        "posekit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from manifest"))
        .to_string()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(frames: usize) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        ok(&["synth", "--frames", &frames.to_string(), "--out-dir", s(&root.join("synth"))]);
        Fixture { _tmp: tmp, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn augment(&self, out: &str, extra: &[&str]) -> PathBuf {
        let dir = self.path(out);
        let view = self.path("synth/view1");
        let mut args = vec![
            "augment",
            "--data-dir",
            s(&view),
            "--out-dir",
            s(&dir),
            "--split",
            "interleaved",
            "--nts",
            "24",
            "--input-size",
            "32",
            "--channel-div",
            "16",
        ];
        args.extend_from_slice(extra);
        ok(&args);
        dir
    }

    fn train(&self, data: &Path, out: &str, extra: &[&str]) -> (PathBuf, Output) {
        let dir = self.path(out);
        let mut args = vec!["train", "--data-dir", s(data), "--out-dir", s(&dir)];
        let base = [("--arch", "vgg-2-fc8"), ("--iters", "12"), ("--batch", "4"), ("--blr", "1e-7"), ("--fc-lrm", "1")];
        for (flag, value) in base {
            if !extra.contains(&flag) {
                args.extend([flag, value]);
            }
        }
        args.extend_from_slice(extra);
        let out = posekit(&args);
        (dir, out)
    }
}

#[test]
fn full_pipeline() {
    let fx = Fixture::new(6);
    let aug = fx.augment("aug", &[]);
    assert_eq!(manifest(&aug, "samples"), "24");
    assert_eq!(manifest(&aug, "generated"), "21");
    assert_eq!(manifest(&aug, "test_frames"), "3");
    assert_eq!(manifest(&aug, "da"), "t");
    assert!(aug.join("train/batch_00000.pkb").exists());
    assert_eq!(fs::read_to_string(aug.join("train/crops.csv")).unwrap().lines().count(), 25);

    let (model, out) = fx.train(&aug, "model", &["--finetune", "--snapshot-every", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(model.join("weights.pkw").exists());
    assert!(model.join("snapshots/snapshot_000006.pkw").exists());
    assert!(model.join("snapshots/snapshot_000012.pkw").exists());
    assert_eq!(manifest(&model, "effective_vgg_lrm"), "1");
    let history = fs::read_to_string(model.join("loss_history.csv")).unwrap();
    assert!(history.starts_with("iteration,train_loss,test_loss"));

    let ann = fx.path("ann");
    ok(&[
        "annotate",
        "--data-dir",
        s(&aug.join("test/annotations.csv")),
        "--model-dir",
        s(&model),
        "--out-dir",
        s(&ann),
    ]);
    let preds = fs::read_to_string(ann.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 4);
    let again = fx.path("ann2");
    ok(&[
        "annotate",
        "--data-dir",
        s(&aug.join("test/annotations.csv")),
        "--model-dir",
        s(&model),
        "--out-dir",
        s(&again),
    ]);
    assert_eq!(fs::read_to_string(again.join("predictions.csv")).unwrap(), preds);

    let ev = fx.path("eval");
    ok(&[
        "evaluate",
        "--data-dir",
        s(&aug.join("test/annotations.csv")),
        "--predictions",
        s(&ann.join("predictions.csv")),
        "--history",
        s(&model.join("loss_history.csv")),
        "--out-dir",
        s(&ev),
    ]);
    assert!(ev.join("mae.csv").exists());
    assert!(fs::read_to_string(ev.join("mae.svg")).unwrap().starts_with("<svg"));

    let rep = fx.path("report");
    ok(&[
        "report",
        "--mae",
        s(&ev.join("mae.csv")),
        "--history",
        s(&model.join("loss_history.csv")),
        "--reference",
        "baseline=40",
        "--out-dir",
        s(&rep),
    ]);
    for f in ["mae.csv", "mae.svg", "loss_history.csv", "loss.svg"] {
        assert!(rep.join(f).exists(), "{f}");
    }
}

#[test]
fn training_is_frozen_without_finetune_and_deterministic() {
    let fx = Fixture::new(4);
    let aug = fx.augment("aug", &["--da", "tr"]);
    let (a, out) = fx.train(&aug, "a", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (b, _) = fx.train(&aug, "b", &[]);
    assert_eq!(
        fs::read(a.join("weights.pkw")).unwrap(),
        fs::read(b.join("weights.pkw")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("loss_history.csv")).unwrap(),
        fs::read(b.join("loss_history.csv")).unwrap()
    );
    assert_eq!(manifest(&a, "effective_vgg_lrm"), "0");

    // Starting from the first run's weights: a frozen trunk comes back
    // bit-identical, a finetuned one does not.
    let pretrained = a.join("weights.pkw");
    let (frozen, out) = fx.train(&aug, "frozen", &["--pretrained", s(&pretrained)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (tuned, out) = fx.train(&aug, "tuned", &["--pretrained", s(&pretrained), "--finetune", "--vgg-lrm", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ws = |d: &Path| posekit::dataset::load_weight_archive::<f32>(&d.join("weights.pkw")).unwrap();
    let (wa, wf, wt) = (ws(&a), ws(&frozen), ws(&tuned));
    for conv in ["conv1_1", "conv1_2"] {
        assert_eq!(wa.entries[conv], wf.entries[conv]);
        assert_ne!(wa.entries[conv].weights, wt.entries[conv].weights);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = posekit(&["augment", "--data-dir", s(&missing), "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(posekit(&["train", "--arch", "vgg-5-fc8"]).status.code(), Some(2));
    assert_eq!(posekit(&["train", "--vgg-lrm", "1"]).status.code(), Some(2));
    assert_eq!(posekit(&["bogus"]).status.code(), Some(2));

    let fx = Fixture::new(4);
    let aug = fx.augment("aug", &[]);
    let (_, out) = fx.train(&aug, "div", &["--blr", "10", "--finetune"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));
}

#[test]
fn evaluate_ground_truth_and_metric_failure() {
    let fx = Fixture::new(4);
    let view = fx.path("synth/view1/annotations.csv");
    let ev = fx.path("eval");
    ok(&["evaluate", "--data-dir", s(&view), "--predictions", s(&view), "--out-dir", s(&ev)]);
    let mae = fs::read_to_string(ev.join("mae.csv")).unwrap();
    for line in mae.lines().skip(1) {
        assert_eq!(line.split(',').nth(1), Some("0"), "{line}");
    }
    let other = fx.path("synth/view2/annotations.csv");
    let out = posekit(&[
        "evaluate",
        "--data-dir",
        s(&view),
        "--predictions",
        s(&other),
        "--max-mae",
        "1",
        "--out-dir",
        s(&ev),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn triangulate_ground_truth_views() {
    let fx = Fixture::new(5);
    let tri = fx.path("tri");
    ok(&[
        "triangulate",
        "--view1",
        s(&fx.path("synth/view1/annotations.csv")),
        "--view2",
        s(&fx.path("synth/view2/annotations.csv")),
        "--cam1",
        s(&fx.path("synth/view1/camera.txt")),
        "--cam2",
        s(&fx.path("synth/view2/camera.txt")),
        "--gt",
        s(&fx.path("synth/poses_gt.csv")),
        "--out-dir",
        s(&tri),
    ]);
    assert_eq!(manifest(&tri, "poses"), "5");
    assert_eq!(manifest(&tri, "partial_poses"), "0");
    assert!(manifest(&tri, "max_residual_px").parse::<f64>().unwrap() < 1e-6);
    for key in ["head_abdomen_ratio", "wingspan_ratio"] {
        let r: f64 = manifest(&tri, key).parse().unwrap();
        assert!((r - 1.0).abs() < 1e-6, "{key} {r}");
    }
}

#[test]
fn default_flags_match_no_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let hist = tmp.path().join("h.csv");
    fs::write(&hist, "iteration,train_loss,test_loss\n200,5,\n500,4,6\n").unwrap();
    let out = tmp.path().join("r");
    ok(&["report", "--history", s(&hist), "--out-dir", s(&out)]);
    let bare = fs::read(out.join("manifest.txt")).unwrap();
    let svg = fs::read(out.join("loss.svg")).unwrap();
    ok(&[
        "report",
        "--history",
        s(&hist),
        "--out-dir",
        s(&out),
        "--nts",
        "200000",
        "--da",
        "t",
        "--arch",
        "vgg-7-fc8",
        "--blr",
        "1e-12",
        "--vgg-lrm",
        "0",
        "--fc-lrm",
        "100",
        "--iters",
        "10000",
        "--batch",
        "32",
        "--finetune",
        "false",
        "--split",
        "first-half",
        "--seed",
        "0",
    ]);
    assert_eq!(fs::read(out.join("manifest.txt")).unwrap(), bare);
    assert_eq!(fs::read(out.join("loss.svg")).unwrap(), svg);
    let text = String::from_utf8(bare).unwrap();
    for kv in ["nts=200000", "da=t", "arch=vgg-7-fc8", "blr=1e-12", "fc-lrm=100", "iters=10000", "batch=32"] {
        assert!(text.lines().any(|l| l == kv), "{kv}");
    }

    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "iters=77\nbatch=8\n").unwrap();
    ok(&["report", "--history", s(&hist), "--out-dir", s(&out), "--config", s(&cfg), "--batch", "9"]);
    let text = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(text.contains("iters=77\n") && text.contains("batch=9\n"));
}

#[test]
fn annotate_empty_frame_list() {
    let fx = Fixture::new(4);
    let aug = fx.augment("aug", &["--da", "none"]);
    assert_eq!(manifest(&aug, "generated"), "0");
    let (model, out) = fx.train(&aug, "m", &["--iters", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let empty = fx.path("empty.csv");
    fs::write(&empty, format!("{}\n", posekit::dataset::annotations::ANNOTATION_HEADER)).unwrap();
    let ann = fx.path("ann");
    ok(&["annotate", "--data-dir", s(&empty), "--model-dir", s(&model), "--out-dir", s(&ann)]);
    assert_eq!(
        fs::read_to_string(ann.join("predictions.csv")).unwrap(),
        format!("{}\n", posekit::eval::PREDICTION_HEADER)
    );
}
