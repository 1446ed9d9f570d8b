use gpunet::engine::gemm::gemm;
use gpunet::engine::{
    bce_loss, conv2d_forward, maxpool2d, maxpool2d_backward, relu, sigmoid,
    transposed_conv2d_forward, BatchNorm2d, ConvSpec, Layer, Mode, Param,
};
use gpunet::tensor::{concat_channels, split_channels};
use gpunet::Tensor4;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn random_param(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Param<f64> {
    let mut p = Param::kernel(shape);
    p.value = random(shape, rng);
    p
}

// Direct loop over (c, kh, kw) per output element, padded taps contribute 0 * w.
fn naive_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, spec: &ConvSpec) -> Tensor4<f64> {
    let [nb, c, h, wd] = x.shape();
    let (oh, ow) = spec.output_size(h, wd).unwrap();
    let n = spec.out_channels;
    let cg = c / spec.groups;
    let ng = n / spec.groups;
    let k = spec.kernel;
    let mut y = Tensor4::zeros([nb, n, oh, ow]);
    for b in 0..nb {
        for o in 0..n {
            let grp = o / ng;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ci in 0..cg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * spec.stride + ky * spec.dilation) as isize
                                    - spec.padding as isize;
                                let ix = (ox * spec.stride + kx * spec.dilation) as isize
                                    - spec.padding as isize;
                                let inside =
                                    iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd;
                                let xv = if inside {
                                    x.get([b, grp * cg + ci, iy as usize, ix as usize])
                                } else {
                                    0.0
                                };
                                acc += xv * w.get([o, ci, ky, kx]);
                            }
                        }
                    }
                    y.set([b, o, oy, ox], acc);
                }
            }
        }
    }
    y
}

#[test]
fn gemm_matches_naive_loop_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (m, n, k) in [(1, 1, 1), (3, 5, 7), (4, 8, 16), (9, 17, 33), (13, 2, 40)] {
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut c = vec![f64::NAN; m * n];
        gemm(m, n, k, &a, k, &b, n, &mut c, n);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                assert_eq!(
                    c[i * n + j].to_bits(),
                    acc.to_bits(),
                    "({i},{j}) of {m}x{n}x{k}"
                );
            }
        }
    }
}

#[test]
fn conv_matches_loop_oracle_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let specs = [
        ConvSpec::new(3, 4, 3, 1).with_bias(false),
        ConvSpec::new(2, 5, 1, 0).with_bias(false),
        ConvSpec::new(3, 2, 5, 2).with_bias(false),
        ConvSpec::new(2, 3, 3, 0).with_bias(false).with_stride(2),
    ];
    for spec in specs {
        let x = random([2, spec.in_channels, 7, 6], &mut rng);
        let w = random_param(spec.weight_shape(), &mut rng);
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        let want = naive_conv(&x, &w.value, &spec);
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{spec:?}");
        }
    }
}

#[test]
fn grouped_and_dilated_conv_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for spec in [
        ConvSpec::depthwise(4, 3, 1),
        ConvSpec::depthwise(3, 3, 2),
        ConvSpec::new(4, 6, 3, 2)
            .with_bias(false)
            .with_groups(2)
            .with_dilation(2),
    ] {
        let x = random([1, spec.in_channels, 9, 8], &mut rng);
        let w = random_param(spec.weight_shape(), &mut rng);
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        let want = naive_conv(&x, &w.value, &spec);
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{spec:?}: {a} vs {b}");
        }
    }
}

#[test]
fn depthwise_output_depends_only_on_its_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = ConvSpec::depthwise(4, 3, 1);
    let w = random_param(spec.weight_shape(), &mut rng);
    let x = random([1, 4, 6, 6], &mut rng);
    let base = conv2d_forward(&x, &w, None, &spec).unwrap();
    let mut x2 = x.clone();
    x2.plane_mut(0, 2).iter_mut().for_each(|v| *v += 3.0);
    let moved = conv2d_forward(&x2, &w, None, &spec).unwrap();
    for c in 0..4 {
        let same = base.plane(0, c) == moved.plane(0, c);
        assert_eq!(same, c != 2, "channel {c}");
    }
}

#[test]
fn size_preserving_padding_grid() {
    for k in [1usize, 3, 5] {
        for dil in [1usize, 6, 12, 18] {
            let pad = dil * (k - 1) / 2;
            let spec = ConvSpec::depthwise(2, k, dil);
            assert_eq!(spec.padding, pad);
            assert_eq!(
                spec.output_size(40, 24).unwrap(),
                (40, 24),
                "k={k} dil={dil}"
            );
        }
    }
    assert_eq!(
        ConvSpec::new(1, 1, 3, 1)
            .with_stride(2)
            .output_size(8, 7)
            .unwrap(),
        (4, 4)
    );
    assert!(ConvSpec::new(1, 1, 5, 0).output_size(3, 3).is_err());
}

#[test]
fn dilated_depthwise_interior_is_sum_of_spaced_taps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = ConvSpec::depthwise(1, 3, 6);
    let w = random_param(spec.weight_shape(), &mut rng);
    let x = random([1, 1, 20, 20], &mut rng);
    let y = conv2d_forward(&x, &w, None, &spec).unwrap();
    for (py, px) in [(6, 6), (10, 9), (13, 13)] {
        let mut want = 0.0;
        for ky in 0..3 {
            for kx in 0..3 {
                want +=
                    w.value.get([0, 0, ky, kx]) * x.get([0, 0, py + 6 * ky - 6, px + 6 * kx - 6]);
            }
        }
        assert!((y.get([0, 0, py, px]) - want).abs() < 1e-12);
    }
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (c, n) = (3, 2);
    // Transposed conv maps n -> c channels; its adjoint is the conv c -> n with the same weights.
    let spec_t = ConvSpec::new(n, c, 3, 1).with_bias(false).with_stride(2);
    let spec = ConvSpec::new(c, n, 3, 1).with_bias(false).with_stride(2);
    let w = random_param([n, c, 3, 3], &mut rng);
    let u = random([1, n, 4, 5], &mut rng);
    let up = transposed_conv2d_forward(&u, &w, None, &spec_t, 1).unwrap();
    assert_eq!(up.shape(), [1, c, 8, 10]);
    let v = random([1, c, 8, 10], &mut rng);
    let down = conv2d_forward(&v, &w, None, &spec).unwrap();
    assert_eq!(down.shape(), u.shape());
    let lhs: f64 = up.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = u.data().iter().zip(down.data()).map(|(a, b)| a * b).sum();
    assert!(
        (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0),
        "{lhs} vs {rhs}"
    );
}

#[test]
fn maxpool_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random([2, 3, 6, 8], &mut rng);
    let (y, idx) = maxpool2d(&x).unwrap();
    assert_eq!(y.shape(), [2, 3, 3, 4]);
    for b in 0..2 {
        for c in 0..3 {
            for oy in 0..3 {
                for ox in 0..4 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| x.get([b, c, 2 * oy + dy, 2 * ox + dx]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(y.get([b, c, oy, ox]), m);
                }
            }
        }
    }
    let g = maxpool2d_backward(&Tensor4::full(y.shape(), 1.0), &idx).unwrap();
    assert_eq!(g.sum(), y.len() as f64);
    assert!(maxpool2d(&random([1, 1, 5, 4], &mut rng)).is_err());
}

#[test]
fn maxpool_ties_route_to_first_element() {
    let x = Tensor4::full([1, 1, 2, 2], 1.0f64);
    let (y, idx) = maxpool2d(&x).unwrap();
    assert_eq!(y.data(), &[1.0]);
    let g = maxpool2d_backward(&Tensor4::full([1, 1, 1, 1], 2.0), &idx).unwrap();
    assert_eq!(g.data(), &[2.0, 0.0, 0.0, 0.0]);
}

#[test]
fn batchnorm_train_mode_normalizes() {
    let mut bn = BatchNorm2d::<f64>::new(2);
    let x = Tensor4::full([3, 2, 4, 4], 7.5);
    let y = bn.forward(&x, Mode::Train).unwrap();
    assert!(y.data().iter().all(|v| v.abs() < 1e-6));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bn = BatchNorm2d::<f64>::new(2);
    bn.beta.value.fill(5.0);
    let x = random([4, 2, 5, 5], &mut rng).map(|v| 3.0 * v + 2.0);
    let y = bn.forward(&x, Mode::Train).unwrap();
    for c in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|b| y.plane(b, c).to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((mean - 5.0).abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn activations_and_loss_values() {
    let x = Tensor4::from_vec([1, 1, 1, 4], vec![-2.0f64, -0.0, 0.0, 3.0]).unwrap();
    assert_eq!(relu(&x).data(), &[0.0, 0.0, 0.0, 3.0]);
    let s = sigmoid(&Tensor4::from_vec([1, 1, 1, 3], vec![0.0f64, 50.0, -50.0]).unwrap());
    assert_eq!(s.data()[0], 0.5);
    assert!(s.data()[1] <= 1.0 && s.data()[2] >= 0.0);
    let p = Tensor4::full([1, 1, 2, 2], 0.5f64);
    let t = Tensor4::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!((bce_loss(&p, &t).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let bad = Tensor4::full([1, 1, 2, 2], 0.5f64);
    assert!(bce_loss(&p, &bad).is_err());
}

#[test]
fn concat_then_split_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random([2, 3, 4, 4], &mut rng);
    let b = random([2, 2, 4, 4], &mut rng);
    let cat = concat_channels(&a, &b).unwrap();
    assert_eq!(cat.shape(), [2, 5, 4, 4]);
    let (a2, b2) = split_channels(&cat, 3).unwrap();
    assert_eq!(a2, a);
    assert_eq!(b2, b);
    assert!(concat_channels(&a, &random([2, 2, 4, 5], &mut rng)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_oracle_holds_for_random_geometry(
        c in 1usize..4, n in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, h in 5usize..10, w in 5usize..10, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ConvSpec::new(c, n, k, k / 2).with_bias(false).with_stride(stride);
        let x = random([1, c, h, w], &mut rng);
        let wt = random_param(spec.weight_shape(), &mut rng);
        let y = conv2d_forward(&x, &wt, None, &spec).unwrap();
        let want = naive_conv(&x, &wt.value, &spec);
        prop_assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn forward_outputs_stay_finite(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([2, 2, 6, 6], &mut rng).map(|v| v * scale);
        let spec = ConvSpec::new(2, 3, 3, 1);
        let mut w = random_param(spec.weight_shape(), &mut rng);
        w.value = w.value.map(|v| v * scale);
        let b = Param::vector(3, 0.5);
        let y = conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
        prop_assert!(y.is_finite());
        prop_assert!(sigmoid(&y).data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mut bn = BatchNorm2d::<f64>::new(3);
        prop_assert!(bn.forward(&y, Mode::Train).unwrap().is_finite());
    }
}
