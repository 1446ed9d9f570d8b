use gpunet::blocks::BlockKind;
use gpunet::cost::model_cost;
use gpunet::engine::{Layer, Mode};
use gpunet::error::CheckpointError;
use gpunet::zoo::{
    build_model, read_checkpoint, write_checkpoint, FeatureLevel, LayerGraph, ModelConfig,
};
use gpunet::{Error, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOY: [usize; 5] = [4, 8, 12, 16, 24];
const SMALL: [usize; 5] = [8, 16, 32, 64, 128];

fn image(shape: [usize; 4], seed: u64) -> Tensor4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn toy(kind: BlockKind, seed: u64) -> LayerGraph<f32> {
    build_model(
        &ModelConfig::new(kind).with_widths(&TOY).with_in_channels(1),
        seed,
    )
    .unwrap()
}

#[test]
fn outputs_are_probabilities_at_input_size() {
    for kind in BlockKind::ALL {
        let mut g = toy(kind, 1);
        for (h, w) in [(16, 16), (32, 48)] {
            let y = g.forward(&image([2, 1, h, w], 2), Mode::Train).unwrap();
            assert_eq!(y.shape(), [2, 1, h, w]);
            assert!(y.data().iter().all(|p| *p > 0.0 && *p < 1.0), "{kind:?}");
            let y = g.forward(&image([1, 1, h, w], 3), Mode::Eval).unwrap();
            assert_eq!(y.shape(), [1, 1, h, w]);
        }
    }
}

#[test]
fn inputs_must_be_divisible_by_sixteen() {
    let mut g = toy(BlockKind::Gp, 4);
    assert!(matches!(
        g.forward(&image([1, 1, 20, 16], 5), Mode::Eval),
        Err(Error::Shape { .. })
    ));
    assert!(g.forward(&image([1, 3, 16, 16], 5), Mode::Eval).is_err());
}

#[test]
fn bad_configs_are_rejected() {
    for widths in [&[4, 8, 16, 32][..], &[4, 8, 8, 16, 32], &[0, 8, 12, 16, 24]] {
        assert!(build_model::<f32>(
            &ModelConfig::new(BlockKind::Ordinary).with_widths(widths),
            0
        )
        .is_err());
    }
    assert!(build_model::<f32>(
        &ModelConfig::new(BlockKind::Ghost)
            .with_widths(&TOY)
            .with_in_channels(0),
        0
    )
    .is_err());
}

#[test]
fn parameter_counts_match_cost_model_exactly() {
    for widths in [TOY, SMALL] {
        let mut counts = Vec::new();
        for kind in BlockKind::ALL {
            let g =
                LayerGraph::<f32>::uninit(&ModelConfig::new(kind).with_widths(&widths)).unwrap();
            let mut weights = 0usize;
            g.visit_params("", &mut |_, p| weights += p.value.len());
            let report = model_cost(&g, 64, 64).unwrap();
            assert_eq!(report.params, weights as u64, "{kind:?} {widths:?}");
            counts.push(weights);
        }
        assert!(counts[2] < counts[1] && counts[1] < counts[0], "{counts:?}");
    }
}

#[test]
fn feature_maps_are_per_channel_and_repeatable() {
    let mut g = toy(BlockKind::Gp, 6);
    let x = image([1, 1, 32, 32], 7);
    let first = g
        .collect_feature_maps(&x, FeatureLevel::First, Mode::Eval)
        .unwrap();
    assert_eq!(first.len(), TOY[0]);
    assert!(first.iter().all(|m| m.shape() == [1, 1, 32, 32]));
    let last = g
        .collect_feature_maps(&x, FeatureLevel::Last, Mode::Eval)
        .unwrap();
    assert_eq!(last.len(), TOY[0]);
    let again = g
        .collect_feature_maps(&x, FeatureLevel::First, Mode::Eval)
        .unwrap();
    assert_eq!(first, again);
}

#[test]
fn same_seed_same_weights() {
    let a = write_checkpoint(&toy(BlockKind::Ghost, 9));
    let b = write_checkpoint(&toy(BlockKind::Ghost, 9));
    let c = write_checkpoint(&toy(BlockKind::Ghost, 10));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    for kind in BlockKind::ALL {
        let mut g = toy(kind, 11);
        // Move the BN running statistics away from their initial values.
        g.forward(&image([2, 1, 16, 16], 12), Mode::Train).unwrap();
        let bytes = write_checkpoint(&g);
        let mut back: LayerGraph<f32> = read_checkpoint(&bytes).unwrap();
        assert_eq!(write_checkpoint(&back), bytes);
        assert_eq!(back.config(), g.config());
        let x = image([1, 1, 32, 16], 13);
        let (ya, yb) = (
            g.forward(&x, Mode::Eval).unwrap(),
            back.forward(&x, Mode::Eval).unwrap(),
        );
        let bits = |t: &Tensor4<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ya), bits(&yb), "{kind:?}");
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = write_checkpoint(&toy(BlockKind::Ordinary, 14));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        read_checkpoint::<f32>(&magic),
        Err(Error::Checkpoint(CheckpointError::BadMagic(_)))
    ));
    assert!(read_checkpoint::<f32>(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(read_checkpoint::<f32>(&extra).is_err());
    assert!(matches!(
        read_checkpoint::<f64>(&bytes),
        Err(Error::Checkpoint(CheckpointError::DtypeMismatch { .. }))
    ));
    assert!(read_checkpoint::<f32>(&[]).is_err());
}

#[test]
fn cast_preserves_values() {
    let g = toy(BlockKind::Gp, 15);
    let wide: LayerGraph<f64> = g.cast().unwrap();
    let back: LayerGraph<f32> = wide.cast().unwrap();
    assert_eq!(write_checkpoint(&back), write_checkpoint(&g));
}
