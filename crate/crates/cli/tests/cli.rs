use std::fs;
use std::path::{Path, PathBuf};

use ducdlc::guided::{box_mean, guided_filter, step_edge_pair, GuidedFilterConfig};
use ducdlc::ops::bilinear_resize_forward;
use ducdlc::{Shape4, SplitMix64, Tensor4};
use ducdlc_cli::io::{read_image, read_labels, write_image, Manifest, MANIFEST};
use ducdlc_cli::run;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ducdlc").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, count: usize, size: usize, classes: usize, seed: u64) {
    let o = cli(&[
        "gen", "--out", s(dir), "--count", &count.to_string(), "--size", &size.to_string(),
        "--classes", &classes.to_string(), "--seed", &seed.to_string(),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
}

const SMOKE_CONFIG: &str = "\
# tiny model for quick runs
epochs = 5
batch_size = 4
crop_size = 32
scale_min = 0.75
scale_max = 1.25
base_lr = 0.01
val_fraction = 0.25
backbone.stem_channels = 4
backbone.widths = 4,8,8,8
backbone.blocks = 1
duc.guidance_channels = 4
duc.out_channels = 4
dlc.reduce_channels = 4
dlc.branch_channels = 4
dlc.fuse_channels = 4
dlc.rates = 1,2,3
";

fn smoke_train(root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    gen(&data, 8, 32, 3, 5);
    let cfg = root.join("smoke.cfg");
    fs::write(&cfg, SMOKE_CONFIG).unwrap();
    let out = root.join("run");
    let o = cli(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    (data, out)
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_with_zero_count_writes_a_bare_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), 0, 16, 4, 1);
    let text = fs::read_to_string(tmp.path().join(MANIFEST)).unwrap();
    assert_eq!(text, "classes=4\n");
}

#[test]
fn gen_is_deterministic_and_labels_stay_below_k() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, 6, 24, 4, 9);
    gen(&b, 6, 24, 4, 9);
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    let m = Manifest::parse(&fs::read_to_string(a.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(m.pairs.len(), 6);
    for (img, lbl) in &m.pairs {
        let raw = image::open(a.join(lbl)).unwrap();
        assert_eq!(raw.color(), image::ColorType::L8);
        assert!(raw.to_luma8().pixels().all(|p| p[0] < 4));
        assert_eq!(image::open(a.join(img)).unwrap().color(), image::ColorType::Rgb8);
    }
}

#[test]
fn gen_argument_and_directory_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    for bad in [["--classes", "1"], ["--classes", "300"], ["--size", "0"]] {
        let mut args = vec!["gen", "--out", s(&out), "--count", "2", "--size", "8", "--classes", "3", "--seed", "0"];
        let at = args.iter().position(|a| *a == bad[0]).unwrap();
        args[at + 1] = bad[1];
        assert_eq!(cli(&args).code, 2, "{bad:?}");
    }
    assert_eq!(cli(&["gen", "--out", s(&out), "--count", "2"]).code, 2);
    let file = tmp.path().join("file");
    fs::write(&file, "x").unwrap();
    let under_file = file.join("sub");
    let o = cli(&["gen", "--out", s(&under_file), "--count", "1", "--size", "8", "--classes", "3", "--seed", "0"]);
    assert_eq!(o.code, 3, "{}", o.stderr);
}

#[test]
fn train_missing_data_dir_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, SMOKE_CONFIG).unwrap();
    let missing = tmp.path().join("no-such-data");
    let o = cli(&["train", "--data", s(&missing), "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("no-such-data"), "{}", o.stderr);
}

#[test]
fn train_rejects_unknown_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 2, 16, 3, 1);
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, "epochs = 1\nlearning_rate = 0.1\n").unwrap();
    let o = cli(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("learning_rate"), "{}", o.stderr);
}

#[test]
fn train_divergence_exits_with_numerical_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 4, 32, 3, 1);
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, format!("{SMOKE_CONFIG}base_lr = 1e12\n").replace("base_lr = 0.01\n", "")).unwrap();
    let o = cli(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.code, 4, "{}", o.stderr);
}

#[test]
fn train_corrupt_label_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, 2, 16, 3, 1);
    image::GrayImage::from_pixel(16, 16, image::Luma([7])).save(data.join("labels/0001.png")).unwrap();
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, SMOKE_CONFIG).unwrap();
    let o = cli(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(o.stderr.contains("0001.png"), "{}", o.stderr);
}

#[test]
fn smoke_train_is_fast_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let (data, first) = smoke_train(tmp.path());
    assert!(start.elapsed().as_secs() < 300);
    let log = fs::read_to_string(first.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["mean_loss"].as_f64().unwrap().is_finite());
        assert!(v["val_miou"].as_f64().is_some());
    }
    let second = tmp.path().join("again");
    let cfg = tmp.path().join("smoke.cfg");
    let o = cli(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&second)]);
    assert_eq!(o.code, 0);
    assert_eq!(tree_bytes(&first), tree_bytes(&second));
}

#[test]
fn eval_output_schema_and_default_scales() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run_dir) = smoke_train(tmp.path());
    let ckpt = run_dir.join("final.ckpt");
    let plain = cli(&["eval", "--data", s(&data), "--ckpt", s(&ckpt)]);
    let one = cli(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--scales", "1.0"]);
    assert_eq!(plain.code, 0, "{}", plain.stderr);
    assert_eq!(plain.stdout, one.stdout);

    let ms = cli(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--scales", "0.75,1.0,1.25"]);
    for o in [&plain, &ms] {
        let v: serde_json::Value = serde_json::from_str(o.stdout.trim()).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["final_score", "mean_iou", "mean_pixel_accuracy", "per_class_iou", "pixel_accuracy"]);
        for k in ["final_score", "mean_iou", "mean_pixel_accuracy", "pixel_accuracy"] {
            assert!((0.0..=1.0).contains(&obj[k].as_f64().unwrap()), "{k}");
        }
        let per_class = obj["per_class_iou"].as_array().unwrap();
        assert_eq!(per_class.len(), 3);
        assert!(per_class.iter().all(|v| v.is_null() || (0.0..=1.0).contains(&v.as_f64().unwrap())));
    }
    assert_eq!(cli(&["eval", "--data", s(&data), "--ckpt", s(&ckpt), "--scales", "0"]).code, 2);
    assert_eq!(cli(&["eval", "--data", s(&data), "--ckpt", s(&tmp.path().join("none.ckpt"))]).code, 2);
    let garbage = tmp.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(cli(&["eval", "--data", s(&data), "--ckpt", s(&garbage)]).code, 3);
}

#[test]
fn eval_against_own_predictions_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run_dir) = smoke_train(tmp.path());
    let ckpt = run_dir.join("best.ckpt");
    let relabeled = tmp.path().join("relabeled");
    fs::create_dir_all(relabeled.join("images")).unwrap();
    fs::create_dir_all(relabeled.join("labels")).unwrap();
    let m = Manifest::parse(&fs::read_to_string(data.join(MANIFEST)).unwrap()).unwrap();
    for (img, lbl) in &m.pairs {
        fs::copy(data.join(img), relabeled.join(img)).unwrap();
        let color = tmp.path().join("color.png");
        let o = cli(&["infer", "--image", s(&data.join(img)), "--ckpt", s(&ckpt), "--out", s(&color)]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        fs::copy(tmp.path().join("color_index.png"), relabeled.join(lbl)).unwrap();
    }
    fs::write(relabeled.join(MANIFEST), m.render()).unwrap();
    let o = cli(&["eval", "--data", s(&relabeled), "--ckpt", s(&ckpt)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v: serde_json::Value = serde_json::from_str(o.stdout.trim()).unwrap();
    for k in ["final_score", "mean_iou", "mean_pixel_accuracy", "pixel_accuracy"] {
        assert_eq!(v[k].as_f64().unwrap(), 1.0, "{k}");
    }
}

#[test]
fn infer_outputs_match_input_size_and_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, run_dir) = smoke_train(tmp.path());
    let ckpt = run_dir.join("final.ckpt");
    let odd = tmp.path().join("odd.png");
    let mut rng = SplitMix64::new(4);
    write_image(&odd, &Tensor4::from_fn(Shape4::new(1, 3, 37, 21), |_, _, _, _| rng.next_f64())).unwrap();
    let mut runs = Vec::new();
    for name in ["a.png", "b.png"] {
        let out = tmp.path().join(name);
        let o = cli(&["infer", "--image", s(&odd), "--ckpt", s(&ckpt), "--out", s(&out)]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        let color = image::open(&out).unwrap();
        assert_eq!((color.width(), color.height()), (21, 37));
        assert_eq!(color.color(), image::ColorType::Rgb8);
        let index = out.with_file_name(name.replace(".png", "_index.png"));
        let labels = read_labels(&index, 3).unwrap();
        assert_eq!(labels.dims(), (1, 37, 21));
        runs.push((fs::read(&out).unwrap(), fs::read(&index).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
}

fn write_t(dir: &Path, name: &str, t: &Tensor4) -> PathBuf {
    let p = dir.join(name);
    write_image(&p, t).unwrap();
    p
}

fn guided_cli(target: &Path, guide: &Path, r: usize, eps: f64, out: &Path, reference: Option<&Path>) -> Outcome {
    let (r, eps) = (r.to_string(), eps.to_string());
    let mut args = vec!["guided-upsample", "--target", s(target), "--guide", s(guide), "--radius", &r, "--eps", &eps, "--out", s(out)];
    if let Some(p) = reference {
        args.extend(["--reference", s(p)]);
    }
    cli(&args)
}

#[test]
fn guided_upsample_at_scale_one_is_the_guided_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(8);
    let shape = Shape4::new(1, 1, 24, 24);
    let guide = write_t(tmp.path(), "g.png", &Tensor4::from_fn(shape, |_, _, _, _| rng.next_f64()));
    let target = write_t(tmp.path(), "t.png", &Tensor4::from_fn(Shape4::new(1, 3, 24, 24), |_, _, _, _| rng.next_f64()));
    let out = tmp.path().join("o.png");
    assert_eq!(guided_cli(&target, &guide, 2, 0.01, &out, None).code, 0);
    let expected = guided_filter(&read_image(&guide).unwrap(), &read_image(&target).unwrap(), &GuidedFilterConfig::new(2, 0.01).unwrap()).unwrap();
    let got = read_image(&out).unwrap();
    let worst = got.max_abs_diff(&expected.map(|v| v.clamp(0.0, 1.0))).unwrap();
    assert!(worst <= 0.5 / 255.0 + 1e-12, "{worst}");
}

#[test]
fn guided_upsample_with_constant_guide_is_smoothed_bilinear() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(9);
    let lo = Tensor4::from_fn(Shape4::new(1, 1, 8, 8), |_, _, _, _| rng.next_f64());
    let target = write_t(tmp.path(), "t.png", &lo);
    let guide = write_t(tmp.path(), "g.png", &Tensor4::full(Shape4::new(1, 1, 32, 32), 0.5));
    let out = tmp.path().join("o.png");
    assert_eq!(guided_cli(&target, &guide, 1, 1e-3, &out, None).code, 0);
    let lo = read_image(&target).unwrap();
    let smoothed = box_mean(&box_mean(&lo, 1).unwrap(), 1).unwrap();
    let expected = bilinear_resize_forward(&smoothed, 32, 32).unwrap();
    let got = read_image(&out).unwrap();
    let worst = got.max_abs_diff(&expected).unwrap();
    assert!(worst <= 0.5 / 255.0 + 1e-9, "{worst}");
}

#[test]
fn guided_upsample_beats_bilinear_on_a_step_edge() {
    let tmp = tempfile::tempdir().unwrap();
    let pair = step_edge_pair(64, 4, &mut SplitMix64::new(21)).unwrap();
    let target = write_t(tmp.path(), "t.png", &pair.target_lo);
    let guide = write_t(tmp.path(), "g.png", &pair.guide);
    let reference = write_t(tmp.path(), "r.png", &pair.reference);
    let out = tmp.path().join("o.png");
    let o = guided_cli(&target, &guide, 2, 1e-4, &out, Some(&reference));
    assert_eq!(o.code, 0, "{}", o.stderr);
    let v: serde_json::Value = serde_json::from_str(o.stdout.trim()).unwrap();
    assert!(v["psnr_guided"].as_f64().unwrap() > v["psnr_bilinear"].as_f64().unwrap(), "{v}");
    assert_eq!(image::open(&out).unwrap().width(), 64);
}

#[test]
fn guided_upsample_argument_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let t = write_t(tmp.path(), "t.png", &Tensor4::full(Shape4::new(1, 1, 6, 6), 0.2));
    let g = write_t(tmp.path(), "g.png", &Tensor4::full(Shape4::new(1, 1, 16, 16), 0.2));
    let out = tmp.path().join("o.png");
    assert_eq!(guided_cli(&t, &g, 1, 1e-3, &out, None).code, 2);
    assert_eq!(guided_cli(&t, &g, 1, -1.0, &out, None).code, 2);
    assert_eq!(guided_cli(&tmp.path().join("missing.png"), &g, 1, 1e-3, &out, None).code, 2);
}

#[test]
fn rf_examples() {
    let o = cli(&["rf", "--layers", "3:24"]);
    assert_eq!(o.stdout, "3:24\t49\nstacked\t49\n");
    let o = cli(&["rf", "--layers", "3:3,3:6,3:12,3:18"]);
    assert_eq!(o.stdout.lines().last(), Some("stacked\t79"));
    assert_eq!(o.stdout.lines().count(), 5);
    let o = cli(&["rf", "--layers", "1:7"]);
    assert_eq!(o.stdout, "1:7\t1\nstacked\t1\n");
    for bad in ["", "3", "0:2", "3:-1"] {
        assert_eq!(cli(&["rf", "--layers", bad]).code, 2, "{bad:?}");
    }
}

#[test]
fn help_succeeds_and_unknown_commands_fail() {
    let o = cli(&["--help"]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("guided-upsample"));
    assert_eq!(cli(&["frobnicate"]).code, 2);
}

#[test]
fn binary_propagates_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ducdlc");
    let ok = std::process::Command::new(bin).args(["rf", "--layers", "3:24"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&ok.stdout), "3:24\t49\nstacked\t49\n");
    let bad = std::process::Command::new(bin).args(["train", "--data", "/nonexistent/x"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
