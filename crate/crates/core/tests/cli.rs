use std::fs;
use std::path::{Path, PathBuf};

use gpunet::cli::{run_with, EXIT_CHECK_FAILED, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE};
use gpunet::data::{load_dataset, load_image};
use gpunet::metrics::Averaging;
use gpunet::train::evaluate;
use gpunet::zoo::{load_checkpoint, LayerGraph};
use gpunet::Tensor4;
use tempfile::TempDir;

const WIDTHS: &str = "8,16,32,64,128";

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn gpunet(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("gpunet").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

// Trains a small GPU-Net on synthetic data and returns its checkpoint path.
fn trained(dir: &TempDir) -> PathBuf {
    let ckpt = dir.path().join("toy.gpun");
    let r = gpunet(&[
        "train",
        "--model",
        "gpu-net",
        "--synthetic",
        "16",
        "--size",
        "32",
        "--epochs",
        "1",
        "--widths",
        WIDTHS,
        "--out",
        p(&ckpt),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    ckpt
}

#[test]
fn count_reports_costs() {
    let r = gpunet(&[
        "count", "--model", "unet", "--height", "192", "--width", "256",
    ]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("params 34.53 M"), "{}", r.out);

    let r = gpunet(&[
        "count", "--model", "gpu-net", "--height", "96", "--width", "96", "--format", "json",
    ]);
    assert_eq!(r.code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    let ratio = v["baseline"]["flops_ratio"].as_f64().unwrap();
    assert!((ratio - 0.357).abs() < 0.01, "{ratio}");
    assert_eq!(v["baseline"]["name"], "unet");

    let r = gpunet(&[
        "count",
        "--model",
        "ghost-unet",
        "--widths",
        "4,8,12,16,24",
        "--in-channels",
        "1",
    ]);
    assert_eq!(r.code, EXIT_OK);
}

#[test]
fn usage_errors_exit_two() {
    let r = gpunet(&["count", "--model", "resnet"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(!r.err.is_empty());
    assert_eq!(
        gpunet(&["count", "--model", "unet", "--widths", "8,4,2,1,0"]).code,
        EXIT_USAGE
    );
    assert_eq!(gpunet(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(gpunet(&["gradcheck", "--dtype", "16"]).code, EXIT_USAGE);
    assert_eq!(gpunet(&["--help"]).code, EXIT_OK);
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(
        gpunet(&["train", "--model", "unet", "--data-dir", p(&missing)]).code,
        EXIT_USAGE
    );
    assert_eq!(
        gpunet(&[
            "predict",
            "--ckpt",
            p(&missing),
            "--image",
            "x.pgm",
            "--out",
            "y.pgm"
        ])
        .code,
        EXIT_USAGE
    );
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let r = gpunet(&["gradcheck", "--scope", "primitives", "--dtype", "64"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.out);
    assert!(r.out.lines().count() >= 10);

    let r = gpunet(&["gradcheck", "--scope", "blocks", "--dtype", "32"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.out);
    for name in ["ghost", "gp", "bneck"] {
        assert!(r.out.contains(name), "{name} missing from\n{}", r.out);
    }

    let r = gpunet(&[
        "gradcheck",
        "--scope",
        "primitives",
        "--dtype",
        "64",
        "--corrupt",
    ]);
    assert_eq!(r.code, EXIT_CHECK_FAILED, "{}", r.out);
}

#[test]
fn synthetic_training_is_loadable_and_repeatable() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let r = gpunet(&[
            "train",
            "--model",
            "gpu-net",
            "--synthetic",
            "64",
            "--size",
            "32",
            "--epochs",
            "5",
            "--widths",
            WIDTHS,
            "--seed",
            "3",
            "--out",
            p(&ckpt),
        ]);
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        assert_eq!(r.out.lines().filter(|l| l.starts_with('{')).count(), 5);
        ckpt
    };
    let a = run("a.gpun");
    let b = run("b.gpun");
    let history = |c: &Path| fs::read(format!("{}.history.jsonl", c.display())).unwrap();
    assert_eq!(history(&a), history(&b));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let model: LayerGraph<f32> = load_checkpoint(&a).unwrap();
    assert_eq!(model.config().widths, vec![8, 16, 32, 64, 128]);
    assert_eq!(model.config().in_channels, 1);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    let ckpt = dir.path().join("c.gpun");
    let hist = dir.path().join("h.jsonl");
    fs::write(
        &cfg,
        format!("model = \"ghost-unet\"\nsynthetic = 8\nsize = 32\nepochs = 3\nwidths = [4, 8, 12, 16, 24]\nout = \"{}\"\n", p(&ckpt)),
    )
    .unwrap();
    let r = gpunet(&[
        "train",
        "--config",
        p(&cfg),
        "--epochs",
        "1",
        "--history",
        p(&hist),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.starts_with("ghost-unet"));
    assert_eq!(fs::read_to_string(&hist).unwrap().lines().count(), 1);
    assert!(ckpt.exists());

    fs::write(&cfg, "epochs = 2\nlearning-rate = 0.1\n").unwrap();
    assert_eq!(
        gpunet(&["train", "--config", p(&cfg), "--synthetic", "4"]).code,
        EXIT_USAGE
    );
}

#[test]
fn divergence_exits_three() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("d.gpun");
    let r = gpunet(&[
        "train",
        "--model",
        "unet",
        "--synthetic",
        "8",
        "--size",
        "32",
        "--epochs",
        "3",
        "--widths",
        "4,8,12,16,24",
        "--optimizer",
        "sgd",
        "--lr",
        "1e30",
        "--out",
        p(&ckpt),
    ]);
    assert_eq!(r.code, EXIT_DIVERGED, "{}\n{}", r.out, r.err);
    assert!(fs::metadata(format!("{}.history.jsonl", ckpt.display())).is_ok());
}

#[test]
fn eval_predict_and_features() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(&dir);
    let data = dir.path().join("data");
    let r = gpunet(&[
        "synth",
        "--count",
        "6",
        "--size",
        "32",
        "--seed",
        "9",
        "--out-dir",
        p(&data),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);

    let r = gpunet(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data-dir",
        p(&data),
        "--split",
        "all",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let cli: serde_json::Value = serde_json::from_str(r.out.trim()).unwrap();
    let mut model: LayerGraph<f32> = load_checkpoint(&ckpt).unwrap();
    let lib = evaluate(
        &mut model,
        &load_dataset(&data).unwrap(),
        Averaging::Pooled,
        4,
    )
    .unwrap();
    let lib: serde_json::Value = serde_json::from_str(&lib.to_json()).unwrap();
    assert_eq!(cli, lib);
    for key in ["ac", "f1", "js"] {
        assert!(cli[key].is_f64());
    }

    let image = data.join("images").join("synth00000.pgm");
    let mask = dir.path().join("mask.pgm");
    let r = gpunet(&[
        "predict",
        "--ckpt",
        p(&ckpt),
        "--image",
        p(&image),
        "--out",
        p(&mask),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let bytes = fs::read(&mask).unwrap();
    assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
    assert!(bytes[bytes.len() - 32 * 32..]
        .iter()
        .all(|&b| b == 0 || b == 255));

    let odd = dir.path().join("odd.pgm");
    gpunet::data::save_image(&Tensor4::<f32>::full([1, 1, 20, 20], 0.5), &odd).unwrap();
    let r = gpunet(&[
        "predict",
        "--ckpt",
        p(&ckpt),
        "--image",
        p(&odd),
        "--out",
        p(&mask),
    ]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("multiples of 16"), "{}", r.err);

    let feats = |name: &str| {
        let out = dir.path().join(name);
        let r = gpunet(&[
            "features",
            "--ckpt",
            p(&ckpt),
            "--image",
            p(&image),
            "--level",
            "first",
            "--out-dir",
            p(&out),
        ]);
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        let mut files: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
    };
    let first = feats("f1");
    let second = feats("f2");
    assert_eq!(first.len(), 9);
    assert_eq!(
        first
            .iter()
            .filter(|f| f.file_name().unwrap() == "sheet.pgm")
            .count(),
        1
    );
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(
            fs::read(a).unwrap(),
            fs::read(b).unwrap(),
            "{}",
            a.display()
        );
    }
    let map = load_image::<f32>(&first[0]).unwrap();
    assert_eq!(map.shape(), [1, 1, 32, 32]);
}
