//! Finite-difference gradient suites over primitives, blocks and a whole model.
//!
//! 32-bit gradients are compared with central differences of an exact 64-bit
//! copy of the same layer, so the check measures the 32-bit backward pass
//! rather than the rounding noise of 32-bit differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockKind, BneckSpec, Bottleneck, DoubleConv, GhostModule, GhostSpec};
use crate::engine::gradcheck::{
    bce_objective, check_function, check_layer, check_layer_against, linear_objective, GradReport,
    LayerCheck, Probes,
};
use crate::engine::{
    bce_loss, bce_loss_backward, BatchNorm2d, Conv2d, ConvSpec, Layer, MaxPool2d, Mode, Param,
    Relu, Sigmoid, TransposedConv2d,
};
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, split_channels, DType, Scalar, Tensor4};
use crate::zoo::{build_model, ModelConfig, UpConv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Primitives,
    Blocks,
    Model,
}

impl Scope {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "primitives" => Some(Scope::Primitives),
            "blocks" => Some(Scope::Blocks),
            "model" => Some(Scope::Model),
            _ => None,
        }
    }
}

/// Relative-error tolerance for a suite at a precision.
pub fn tolerance(scope: Scope, dtype: DType) -> f64 {
    match (scope, dtype) {
        (Scope::Model, DType::F32) => 1e-2,
        (Scope::Model, DType::F64) => 1e-4,
        (_, DType::F32) => 1e-3,
        (_, DType::F64) => 1e-6,
    }
}

/// Widths of the small model used by the end-to-end check.
pub const TINY_WIDTHS: [usize; 5] = [8, 16, 32, 64, 128];

/// Wraps a layer and scales its input gradient, for negative-control runs.
#[derive(Debug, Clone)]
pub struct Tampered<L> {
    pub inner: L,
    pub factor: f64,
}

impl<T: Scalar, L: Layer<T>> Layer<T> for Tampered<L> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.inner.forward(x, mode)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let f = T::lit(self.factor);
        Ok(self.inner.backward(grad_y)?.map(|g| g * f))
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.inner.visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.inner.visit_params_mut(prefix, f)
    }
}

fn uniform<T: Scalar>(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor4<T> {
    Tensor4::from_fn(shape, |_| T::lit(rng.gen_range(lo..hi)))
}

/// Random values whose magnitude stays at least `gap` away from zero.
fn away_from_zero<T: Scalar>(shape: [usize; 4], gap: f64, rng: &mut ChaCha8Rng) -> Tensor4<T> {
    Tensor4::from_fn(shape, |_| {
        let v = rng.gen_range(gap..1.0);
        T::lit(if rng.gen_bool(0.5) { v } else { -v })
    })
}

/// Distinct values spaced `step` apart in shuffled order, so no max-pool window is near a tie.
fn distinct<T: Scalar>(shape: [usize; 4], step: f64, rng: &mut ChaCha8Rng) -> Tensor4<T> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * step).collect();
    vals.shuffle(rng);
    Tensor4::from_vec(shape, vals.into_iter().map(T::lit).collect()).expect("sized")
}

/// Shift every parameter by U(-0.3, 0.3) so biases and BN affines are non-trivial.
pub fn jitter_params<T: Scalar, L: Layer<T> + ?Sized>(layer: &mut L, rng: &mut ChaCha8Rng) {
    layer.visit_params_mut("", &mut |_, p| {
        for v in p.value.data_mut() {
            *v += T::lit(rng.gen_range(-0.3..0.3));
        }
    });
}

/// Kink-guard threshold as a fraction of the gradient scale: a kink that slips
/// past it shifts the central difference by at most 3.5 times this amount.
pub fn kink_guard(scope: Scope, dtype: DType) -> f64 {
    tolerance(scope, dtype) / 4.0
}

/// Overwrite `dst`'s parameters and buffers with `src`'s, converted to `U`.
/// Both layers must visit the same tensors in the same order.
pub fn copy_state<T: Scalar, U: Scalar, A: Layer<T> + ?Sized, B: Layer<U> + ?Sized>(
    src: &A,
    dst: &mut B,
) {
    let mut params = Vec::new();
    src.visit_params("", &mut |_, p| params.push(p.value.cast::<U>()));
    let mut buffers = Vec::new();
    src.visit_buffers("", &mut |_, b| buffers.push(b.cast::<U>()));
    let mut params = params.into_iter();
    dst.visit_params_mut("", &mut |_, p| {
        p.value = params.next().expect("same parameter layout")
    });
    let mut buffers = buffers.into_iter();
    dst.visit_buffers_mut("", &mut |_, b| {
        *b = buffers.next().expect("same buffer layout")
    });
}

/// One layer under test with its input.
pub struct Case<S: Scalar> {
    pub op: String,
    pub layer: Box<dyn Layer<S>>,
    pub x: Tensor4<S>,
    pub mode: Mode,
}

impl<S: Scalar> Case<S> {
    fn new(op: &str, layer: impl Layer<S> + 'static, x: Tensor4<S>, mode: Mode) -> Self {
        Self {
            op: op.to_string(),
            layer: Box::new(layer),
            x,
            mode,
        }
    }
}

/// Check `case` against central differences. Below 64-bit, the differences are
/// taken on `reference`, a 64-bit copy of the same case, after its state and
/// input are overwritten with the exact values of `case`.
fn run_case<T: Scalar>(
    mut case: Case<T>,
    reference: Option<Case<f64>>,
    scope: Scope,
    seed: u64,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter_params(case.layer.as_mut(), &mut rng);
    let y = case.layer.forward(&case.x, case.mode)?;
    let r = uniform::<T>(y.shape(), -1.0, 1.0, &mut rng);
    let objective = linear_objective(r.clone());
    let opts = LayerCheck {
        mode: case.mode,
        kink_guard: Some(kink_guard(scope, T::DTYPE)),
        ..LayerCheck::default()
    };
    match reference {
        None => check_layer(&case.op, case.layer.as_mut(), &case.x, &objective, opts),
        Some(mut reference) => {
            copy_state(case.layer.as_ref(), reference.layer.as_mut());
            let reference_objective = linear_objective(r.cast::<f64>());
            check_layer_against(
                &case.op,
                case.layer.as_mut(),
                &case.x,
                &objective,
                reference.layer.as_mut(),
                &reference_objective,
                opts,
            )
        }
    }
}

fn run_cases<T: Scalar>(
    scope: Scope,
    seed: u64,
    cases: Vec<Case<T>>,
    reference: impl FnOnce() -> Result<Vec<Case<f64>>>,
) -> Result<Vec<GradReport>> {
    let references: Vec<Option<Case<f64>>> = if T::DTYPE == DType::F64 {
        cases.iter().map(|_| None).collect()
    } else {
        reference()?.into_iter().map(Some).collect()
    };
    cases
        .into_iter()
        .zip(references)
        .enumerate()
        .map(|(i, (c, r))| run_case(c, r, scope, seed.wrapping_add(i as u64)))
        .collect()
}

fn conv<S: Scalar>(spec: ConvSpec, rng: &mut ChaCha8Rng) -> Result<Conv2d<S>> {
    let mut c = Conv2d::new(spec)?;
    c.init(rng);
    Ok(c)
}

fn primitive_cases<S: Scalar>(seed: u64, tamper: bool) -> Result<Vec<Case<S>>> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let c = conv::<S>(ConvSpec::new(2, 3, 3, 1), r)?;
    let x = uniform([1, 2, 5, 5], -1.0, 1.0, r);
    out.push(if tamper {
        Case::new(
            "conv2d 3x3",
            Tampered {
                inner: c,
                factor: 1.25,
            },
            x,
            Mode::Train,
        )
    } else {
        Case::new("conv2d 3x3", c, x, Mode::Train)
    });

    let c = conv::<S>(ConvSpec::new(3, 4, 3, 2).with_stride(2).with_dilation(2), r)?;
    out.push(Case::new(
        "conv2d strided dilated",
        c,
        uniform([2, 3, 9, 9], -1.0, 1.0, r),
        Mode::Train,
    ));

    let c = conv::<S>(ConvSpec::depthwise(4, 3, 2), r)?;
    out.push(Case::new(
        "depthwise conv2d",
        c,
        uniform([1, 4, 7, 7], -1.0, 1.0, r),
        Mode::Train,
    ));

    let mut t = TransposedConv2d::<S>::upsample2x(4, 3)?;
    t.init(r);
    out.push(Case::new(
        "transposed conv2d",
        t,
        uniform([1, 4, 4, 4], -1.0, 1.0, r),
        Mode::Train,
    ));

    let bn = BatchNorm2d::<S>::new(3);
    out.push(Case::new(
        "batchnorm2d train",
        bn,
        uniform([2, 3, 4, 4], -1.0, 2.0, r),
        Mode::Train,
    ));

    let mut bn = BatchNorm2d::<S>::new(3);
    bn.running.mean = uniform([3, 1, 1, 1], -0.5, 0.5, r);
    bn.running.var = uniform([3, 1, 1, 1], 0.5, 2.0, r);
    out.push(Case::new(
        "batchnorm2d eval",
        bn,
        uniform([2, 3, 4, 4], -1.0, 1.0, r),
        Mode::Eval,
    ));

    out.push(Case::new(
        "relu",
        Relu::<S>::new(),
        away_from_zero([2, 2, 4, 4], 0.05, r),
        Mode::Train,
    ));
    out.push(Case::new(
        "sigmoid",
        Sigmoid::<S>::new(),
        uniform([1, 2, 4, 4], -4.0, 4.0, r),
        Mode::Train,
    ));
    out.push(Case::new(
        "maxpool2d",
        MaxPool2d::new(),
        distinct::<S>([1, 2, 6, 6], 0.05, r),
        Mode::Train,
    ));
    Ok(out)
}

/// Every primitive with a backward pass. With `tamper`, the first convolution's
/// input gradient is scaled by 1.25 and the suite is expected to fail.
pub fn primitive_suite<T: Scalar>(seed: u64, tamper: bool) -> Result<Vec<GradReport>> {
    let mut out = run_cases(
        Scope::Primitives,
        seed,
        primitive_cases::<T>(seed, tamper)?,
        || primitive_cases::<f64>(seed, false),
    )?;

    let r = &mut ChaCha8Rng::seed_from_u64(seed ^ 0xb_ce);
    let shape = [2, 1, 3, 3];
    let target = Tensor4::<T>::from_fn(
        shape,
        |_| if r.gen_bool(0.5) { T::one() } else { T::zero() },
    );
    let pred = uniform::<T>(shape, 0.2, 0.8, r);
    let analytic = vec![bce_loss_backward(&pred, &target)?.into_vec()];
    let mut inputs = vec![("pred".to_string(), pred.into_vec())];
    out.push(check_function("bce loss", &mut inputs, &analytic, |inp| {
        let p = Tensor4::from_vec(shape, inp[0].1.clone())?;
        Ok(bce_loss(&p, &target)?.as_f64())
    })?);

    let (a, b) = (
        uniform::<T>([1, 2, 3, 3], -1.0, 1.0, r),
        uniform::<T>([1, 3, 3, 3], -1.0, 1.0, r),
    );
    let proj = linear_objective(uniform::<T>([1, 5, 3, 3], -1.0, 1.0, r));
    let (_, gy) = proj(&concat_channels(&a, &b)?)?;
    let (ga, gb) = split_channels(&gy, 2)?;
    let mut inputs = vec![
        ("a".to_string(), a.into_vec()),
        ("b".to_string(), b.into_vec()),
    ];
    out.push(check_function(
        "concat",
        &mut inputs,
        &[ga.into_vec(), gb.into_vec()],
        |inp| {
            let a = Tensor4::from_vec([1, 2, 3, 3], inp[0].1.clone())?;
            let b = Tensor4::from_vec([1, 3, 3, 3], inp[1].1.clone())?;
            Ok(proj(&concat_channels(&a, &b)?)?.0)
        },
    )?);
    Ok(out)
}

fn block_cases<S: Scalar>(seed: u64) -> Result<Vec<Case<S>>> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut g = GhostModule::<S>::new(GhostSpec::ghost(4, 6).with_primary_kernel(3))?;
    g.init(r);
    out.push(Case::new(
        "ghost module",
        g,
        uniform([1, 4, 6, 6], -1.0, 1.0, r),
        Mode::Train,
    ));

    let mut g = GhostModule::<S>::new(GhostSpec::gp(3, 12))?;
    g.init(r);
    out.push(Case::new(
        "gp module",
        g,
        uniform([1, 3, 16, 16], -1.0, 1.0, r),
        Mode::Train,
    ));

    for (name, kind, (cin, cout)) in [
        ("ghost bneck", BlockKind::Ghost, (4, 8)),
        ("gp bneck", BlockKind::Gp, (4, 8)),
        ("gp bneck identity", BlockKind::Gp, (6, 6)),
    ] {
        let spec = match kind {
            BlockKind::Ghost => BneckSpec::ghost(cin, cout),
            _ => BneckSpec::gp(cin, cout),
        };
        let mut b = Bottleneck::<S>::new(spec)?;
        b.init(r);
        out.push(Case::new(
            name,
            b,
            uniform([1, cin, 8, 8], -1.0, 1.0, r),
            Mode::Train,
        ));
    }

    let mut d = DoubleConv::<S>::new(3, 4)?;
    d.init(r);
    out.push(Case::new(
        "double conv",
        d,
        uniform([1, 3, 6, 6], -1.0, 1.0, r),
        Mode::Train,
    ));

    let mut u = UpConv::<S>::new(6, 3)?;
    u.tconv.init(r);
    out.push(Case::new(
        "upsampler",
        u,
        uniform([1, 6, 4, 4], -1.0, 1.0, r),
        Mode::Train,
    ));
    Ok(out)
}

/// Ghost and GP modules, both bottlenecks (projection and identity shortcut),
/// the ordinary double convolution and the decoder upsampler.
pub fn block_suite<T: Scalar>(seed: u64) -> Result<Vec<GradReport>> {
    run_cases(Scope::Blocks, seed, block_cases::<T>(seed)?, || {
        block_cases::<f64>(seed)
    })
}

/// BCE of each small network against a random mask, probing 100 sampled weights.
pub fn model_suite<T: Scalar>(seed: u64) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    for kind in BlockKind::ALL {
        let cfg = ModelConfig::new(kind)
            .with_widths(&TINY_WIDTHS)
            .with_in_channels(1);
        let mut model = build_model::<T>(&cfg, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = uniform::<T>([2, 1, 32, 32], 0.0, 1.0, &mut rng);
        let target = Tensor4::<T>::from_fn([2, 1, 32, 32], |_| {
            if rng.gen_bool(0.4) {
                T::one()
            } else {
                T::zero()
            }
        });
        let op = format!("{} end-to-end", kind.model_name());
        let objective = bce_objective(target.clone());
        let opts = LayerCheck {
            mode: Mode::Train,
            check_input: false,
            param_probes: Probes::Sample { count: 100, seed },
            kink_guard: Some(kink_guard(Scope::Model, T::DTYPE)),
        };
        out.push(if T::DTYPE == DType::F64 {
            check_layer(&op, &mut model, &x, &objective, opts)?
        } else {
            let mut reference = model.cast::<f64>()?;
            let reference_objective = bce_objective(target.cast::<f64>());
            check_layer_against(
                &op,
                &mut model,
                &x,
                &objective,
                &mut reference,
                &reference_objective,
                opts,
            )?
        });
    }
    Ok(out)
}

pub fn run_scope<T: Scalar>(scope: Scope, seed: u64, tamper: bool) -> Result<Vec<GradReport>> {
    match scope {
        Scope::Primitives => primitive_suite::<T>(seed, tamper),
        Scope::Blocks if !tamper => block_suite::<T>(seed),
        Scope::Model if !tamper => model_suite::<T>(seed),
        _ => Err(Error::Config(
            "tampering applies to the primitives scope only".into(),
        )),
    }
}
