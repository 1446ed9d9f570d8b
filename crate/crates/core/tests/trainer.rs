use gpunet::blocks::BlockKind;
use gpunet::data::{stack_batch, synth_shapes, Sample};
use gpunet::engine::{bce_loss, Conv2d, ConvSpec, Layer, Mode};
use gpunet::metrics::{Averaging, Mask};
use gpunet::train::{
    evaluate, mean_loss, train, train_step, Optimizer, OptimizerKind, TrainConfig,
};
use gpunet::zoo::{build_model, load_checkpoint, write_checkpoint, LayerGraph, ModelConfig};
use gpunet::{Error, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOY: [usize; 5] = [4, 8, 12, 16, 24];

fn toy(kind: BlockKind, seed: u64) -> LayerGraph<f32> {
    build_model(
        &ModelConfig::new(kind).with_widths(&TOY).with_in_channels(1),
        seed,
    )
    .unwrap()
}

fn scalar_layer(value: f32, grad: f32) -> Conv2d<f32> {
    let mut c = Conv2d::new(ConvSpec::new(1, 1, 1, 0).with_bias(false)).unwrap();
    c.weight.value.fill(value);
    c.weight.grad.fill(grad);
    c
}

fn params(g: &LayerGraph<f32>) -> Vec<f32> {
    let mut out = Vec::new();
    g.visit_params("", &mut |_, p| out.extend_from_slice(p.value.data()));
    out
}

fn buffers(g: &LayerGraph<f32>) -> Vec<f32> {
    let mut out = Vec::new();
    g.visit_buffers("", &mut |_, t| out.extend_from_slice(t.data()));
    out
}

#[test]
fn optimizer_examples() {
    for kind in [OptimizerKind::Sgd, OptimizerKind::default()] {
        let mut layer = scalar_layer(0.7, 0.0);
        Optimizer::new(kind, 0.1).step(&mut layer).unwrap();
        assert_eq!(layer.weight.value.data(), &[0.7], "{kind:?}");
    }

    let mut layer = scalar_layer(0.0, 1.0);
    Optimizer::new(OptimizerKind::Sgd, 0.1)
        .step(&mut layer)
        .unwrap();
    assert_eq!(layer.weight.value.data(), &[-0.1]);

    // First moment update is lr * g / (|g| + eps).
    for g in [1e-3f32, 1.0, 1e3] {
        let mut layer = scalar_layer(0.0, g);
        Optimizer::new(OptimizerKind::default(), 1e-3)
            .step(&mut layer)
            .unwrap();
        let step = layer.weight.value.data()[0] as f64;
        let want = -1e-3 * g as f64 / (g as f64 + 1e-8);
        assert!((step - want).abs() < 1e-9, "g={g}: {step}");
    }

    let mut layer = scalar_layer(0.0, f32::NAN);
    assert!(matches!(
        Optimizer::new(OptimizerKind::default(), 0.1).step(&mut layer),
        Err(Error::NonFiniteGradient(_))
    ));
}

#[test]
fn small_step_lowers_batch_loss() {
    let data = synth_shapes(4, 32, 32, 1).unwrap();
    let batch: Vec<&Sample> = data.iter().collect();
    let (x, t) = stack_batch::<f64>(&batch).unwrap();
    for kind in [OptimizerKind::Sgd, OptimizerKind::default()] {
        let mut model: LayerGraph<f64> = build_model(
            &ModelConfig::new(BlockKind::Gp)
                .with_widths(&TOY)
                .with_in_channels(1),
            2,
        )
        .unwrap();
        let mut opt = Optimizer::new(kind, 1e-5);
        let before = train_step(&mut model, &mut opt, &batch).unwrap();
        let after = bce_loss(&model.forward(&x, Mode::Train).unwrap(), &t).unwrap();
        assert!(after < before, "{kind:?}: {before} -> {after}");
    }
}

#[test]
fn single_sample_is_memorized() {
    let sample = synth_shapes(1, 32, 32, 3).unwrap();
    let mut model = toy(BlockKind::Ordinary, 4);
    let mut opt = Optimizer::new(OptimizerKind::default(), 0.01);
    let batch: Vec<&Sample> = sample.iter().collect();
    let mut steps = 0;
    let mut loss = f64::INFINITY;
    while steps < 300 && loss >= 0.05 {
        loss = train_step(&mut model, &mut opt, &batch).unwrap();
        steps += 1;
    }
    assert!(loss < 0.05, "loss {loss} after {steps} steps");
    let rec = evaluate(&mut model, &sample, Averaging::Pooled, 1).unwrap();
    assert!(rec.js > 0.95, "js {}", rec.js);
    assert_eq!(
        rec,
        evaluate(&mut model, &sample, Averaging::Pooled, 1).unwrap()
    );
}

#[test]
fn untrained_model_is_near_chance_on_balanced_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<Sample> = (0..8)
        .map(|i| {
            let image = Tensor4::from_fn([1, 1, 32, 32], |_| rng.gen_range(0.0..1.0));
            let bits = (0..32 * 32)
                .map(|p| u8::from((p % 32 < 16) ^ (i % 2 == 1)))
                .collect();
            Sample::new(
                image,
                Mask::new([1, 1, 32, 32], bits).unwrap(),
                format!("b{i}"),
            )
            .unwrap()
        })
        .collect();
    for kind in BlockKind::ALL {
        let rec = evaluate(&mut toy(kind, 6), &samples, Averaging::Pooled, 4).unwrap();
        assert!((rec.ac - 0.5).abs() <= 0.2, "{kind:?}: {}", rec.ac);
    }
}

#[test]
fn zero_learning_rate_freezes_weights() {
    let data = synth_shapes(6, 32, 32, 7).unwrap();
    let mut model = toy(BlockKind::Ghost, 8);
    let start = params(&model);
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 0.0,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &data, &data[..2], &cfg, |_| {}).unwrap();
    assert_eq!(params(&model), start);
    let l0 = out.history[0].train_loss;
    for rec in &out.history {
        assert!(
            (rec.train_loss - l0).abs() < 1e-9 * l0,
            "{} vs {l0}",
            rec.train_loss
        );
    }
}

#[test]
fn batchnorm_statistics_move_only_in_train_mode() {
    let mut model = toy(BlockKind::Gp, 9);
    let x = synth_shapes(2, 32, 32, 10).unwrap();
    let (x, _) = stack_batch::<f32>(&x.iter().collect::<Vec<_>>()).unwrap();
    let start = buffers(&model);
    model.forward(&x, Mode::Eval).unwrap();
    assert_eq!(buffers(&model), start);
    model.forward(&x, Mode::Train).unwrap();
    assert_ne!(buffers(&model), start);
}

#[test]
fn seeded_runs_are_bitwise_reproducible() {
    let data = synth_shapes(8, 32, 32, 11).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 3,
        seed: 12,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = toy(BlockKind::Gp, 13);
        let out = train(&mut m, &data[..6], &data[6..], &cfg, |_| {}).unwrap();
        (write_checkpoint(&m), out)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let other = TrainConfig {
        seed: 99,
        ..cfg.clone()
    };
    let mut m = toy(BlockKind::Gp, 13);
    train(&mut m, &data[..6], &data[6..], &other, |_| {}).unwrap();
    assert_ne!(write_checkpoint(&m), a);
}

#[test]
fn best_checkpoint_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.gpun");
    let data = synth_shapes(6, 32, 32, 14).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        learning_rate: 0.01,
        batch_size: 2,
        eval_every: 2,
        checkpoint: Some(path.clone()),
        ..TrainConfig::default()
    };
    let mut model = toy(BlockKind::Ordinary, 15);
    let mut seen = Vec::new();
    let out = train(&mut model, &data[..4], &data[4..], &cfg, |r| {
        seen.push(r.epoch)
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    let evaluated: Vec<usize> = out
        .history
        .iter()
        .filter(|r| r.val.is_some())
        .map(|r| r.epoch)
        .collect();
    assert_eq!(evaluated, vec![2, 4]);
    let best = out.best_epoch.unwrap();
    let best_js = out.history[best - 1].val.unwrap().js;
    assert_eq!(out.best_js, Some(best_js));
    let mut loaded: LayerGraph<f32> = load_checkpoint(&path).unwrap();
    let js = evaluate(&mut loaded, &data[4..], Averaging::Pooled, 2)
        .unwrap()
        .js;
    assert_eq!(js, best_js);
    let line: serde_json::Value = serde_json::from_str(&out.history[1].to_json()).unwrap();
    assert!(line["val"]["js"].is_f64() && line["train_loss"].is_f64());
    assert!(mean_loss(&mut loaded, &data, 4).unwrap().is_finite());
}

#[test]
fn goal_stops_training_early() {
    let data = synth_shapes(4, 32, 32, 16).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        stop_at_js: Some(0.0),
        ..TrainConfig::default()
    };
    let out = train(
        &mut toy(BlockKind::Gp, 17),
        &data[..2],
        &data[2..],
        &cfg,
        |_| {},
    )
    .unwrap();
    assert_eq!(out.history.len(), 1);
}

#[test]
fn invalid_runs_are_rejected() {
    let data = synth_shapes(2, 32, 32, 18).unwrap();
    let mut m = toy(BlockKind::Ghost, 19);
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(
            train(&mut m, &data, &data, &cfg, |_| {}),
            Err(Error::Config(_))
        ));
    }
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut m, &[], &data, &cfg, |_| {}),
        Err(Error::Empty(_))
    ));
    assert!(evaluate(&mut m, &[], Averaging::Pooled, 2).is_err());
    let defaults = TrainConfig::default();
    assert_eq!((defaults.epochs, defaults.learning_rate), (100, 0.001));
}
