//! Parameter and FLOP totals for the three segmentation models at a few input sizes.
//!
//! `cargo run --example cost_table -- --per-layer` adds the per-node breakdown.

use gpunet::blocks::BlockKind;
use gpunet::cost::model_cost;
use gpunet::zoo::{LayerGraph, ModelConfig};

fn main() -> gpunet::Result<()> {
    let per_layer = std::env::args().any(|a| a == "--per-layer");
    for (h, w) in [(192, 256), (256, 256), (96, 96)] {
        let unet = model_cost(
            &LayerGraph::<f32>::uninit(&ModelConfig::new(BlockKind::Ordinary))?,
            h,
            w,
        )?;
        println!("{h}x{w}");
        for kind in BlockKind::ALL {
            let graph = LayerGraph::<f32>::uninit(&ModelConfig::new(kind))?;
            let report = model_cost(&graph, h, w)?.with_baseline(&unet);
            if per_layer {
                println!("{report}\n");
                continue;
            }
            let b = report.baseline.as_ref().expect("baseline set");
            println!(
                "  {:<11} {:>8.2} M params {:>8.2} G flops   x{:.3} params, x{:.3} flops",
                report.model,
                report.params_m(),
                report.flops_g(),
                b.params_ratio,
                b.flops_ratio
            );
        }
    }
    Ok(())
}
