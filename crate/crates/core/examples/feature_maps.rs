//! Dump first-level feature maps of an untrained model as a PGM contact sheet.

use std::path::PathBuf;

use gpunet::blocks::BlockKind;
use gpunet::data::{contact_sheet, normalize_map, save_image, synth_shapes};
use gpunet::engine::Mode;
use gpunet::zoo::{build_model, FeatureLevel, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "feature_maps".into()),
    );
    std::fs::create_dir_all(&out)?;
    let sample = synth_shapes(1, 64, 64, 4)?.remove(0);
    save_image(&sample.image, &out.join("input.pgm"))?;
    for kind in BlockKind::ALL {
        let cfg = ModelConfig::new(kind)
            .with_widths(&[8, 16, 32, 64, 128])
            .with_in_channels(1);
        let mut model = build_model::<f32>(&cfg, 5)?;
        let maps = model.collect_feature_maps(&sample.image, FeatureLevel::First, Mode::Eval)?;
        let maps = maps
            .iter()
            .map(normalize_map)
            .collect::<gpunet::Result<Vec<_>>>()?;
        let path = out.join(format!("{}.pgm", kind.model_name()));
        save_image(&contact_sheet(&maps)?, &path)?;
        println!("{} maps -> {}", maps.len(), path.display());
    }
    Ok(())
}
