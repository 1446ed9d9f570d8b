//! Train a compact GPU-Net on generated shapes and report validation scores.
//!
//! `cargo run --release --example train_synthetic -- ghost-unet` picks another model.

use gpunet::blocks::BlockKind;
use gpunet::data::synth_shapes;
use gpunet::metrics::Averaging;
use gpunet::train::{evaluate, train, TrainConfig};
use gpunet::zoo::{build_model, ModelConfig};

fn main() -> gpunet::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "gpu-net".into());
    let kind = BlockKind::ALL
        .into_iter()
        .find(|k| k.model_name() == name)
        .expect("unet, ghost-unet or gpu-net");
    let train_set = synth_shapes(128, 64, 64, 1)?;
    let val_set = synth_shapes(32, 64, 64, 2)?;

    let cfg = TrainConfig {
        epochs: 6,
        seed: 3,
        stop_at_js: Some(0.9),
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig::new(kind)
        .with_widths(&[8, 16, 32, 64, 128])
        .with_in_channels(1);
    let mut model = build_model::<f32>(&model_cfg, cfg.seed)?;
    println!("{name}: {} parameters", model.param_count());
    let out = train(&mut model, &train_set, &val_set, &cfg, |r| {
        println!("{}", r.to_json())
    })?;
    println!("best epoch {:?}, val js {:?}", out.best_epoch, out.best_js);

    let per_image = evaluate(&mut model, &val_set, Averaging::PerImage, 8)?;
    println!(
        "per-image averages: ac {:.4} f1 {:.4} js {:.4}",
        per_image.ac, per_image.f1, per_image.js
    );
    Ok(())
}
