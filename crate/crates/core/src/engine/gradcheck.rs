//! Central finite-difference checks of analytic gradients.
//!
//! The error reported for an input is `max_i |analytic_i - numeric_i| / scale`,
//! where `scale` is the largest gradient magnitude (analytic or numeric) seen
//! across every input of the checked operation. Elementwise relative error is
//! meaningless where the true gradient vanishes (dead ReLU units, a bias feeding
//! batch norm), so errors are measured against the operation's gradient scale.
//!
//! Piecewise-linear layers (ReLU, max pooling) make the central difference
//! wrong whenever a kink falls inside `[x - h, x + h]`, which is common at the
//! 32-bit step size. With a kink guard, each probe also evaluates `x ± h/2` and
//! is set aside when either the two central differences disagree or the
//! one-sided slope gaps fail to halve with the step; both hold for smooth
//! functions up to O(h^2). The guard looks only at numeric values, so a wrong
//! analytic gradient cannot hide behind it.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bce_loss, bce_loss_backward, Layer, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub scale: f64,
    pub checked: usize,
    /// Probes set aside by the kink guard (not counted in the errors).
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub op: String,
    pub inputs: Vec<InputReport>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.inputs
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    /// Every error below `rel_tol`, with at most a tenth of the probes set aside.
    pub fn passed(&self, rel_tol: f64) -> bool {
        self.inputs
            .iter()
            .all(|r| r.max_rel_err < rel_tol && r.skipped * 10 <= r.checked + r.skipped)
    }

    pub fn skipped(&self) -> usize {
        self.inputs.iter().map(|r| r.skipped).sum()
    }
}

/// Step `cbrt(eps) * max(1, |x|)` for the element type's machine epsilon.
pub fn fd_step<T: Scalar>(x: T) -> T {
    T::epsilon().cbrt() * T::one().max(x.abs())
}

/// Central difference of `eval` around `x0`, divided by the representable step.
pub fn central_difference<T: Scalar>(x0: T, mut eval: impl FnMut(T) -> Result<f64>) -> Result<f64> {
    let h = fd_step(x0);
    let (xp, xm) = (x0 + h, x0 - h);
    let fp = eval(xp)?;
    let fm = eval(xm)?;
    Ok((fp - fm) / (xp - xm).as_f64())
}

/// Central difference plus a non-smoothness score. `f0` is `eval(x0)`.
///
/// The score is the larger of `|D(h) - D(h/2)|` and the gap between the
/// one-sided slope differences at `h` and twice that at `h/2`.
fn guarded_difference<T: Scalar>(
    x0: T,
    f0: f64,
    mut eval: impl FnMut(T) -> Result<f64>,
) -> Result<(f64, f64)> {
    let h = fd_step(x0);
    let half = h / T::lit(2.0);
    let (xp, xm, xp2, xm2) = (x0 + h, x0 - h, x0 + half, x0 - half);
    let (fp, fm, fp2, fm2) = (eval(xp)?, eval(xm)?, eval(xp2)?, eval(xm2)?);
    let d = |a: T, b: T| (a - b).as_f64();
    let wide = (fp - fm) / d(xp, xm);
    let narrow = (fp2 - fm2) / d(xp2, xm2);
    let gap_wide = (fp - f0) / d(xp, x0) - (f0 - fm) / d(x0, xm);
    let gap_narrow = (fp2 - f0) / d(xp2, x0) - (f0 - fm2) / d(x0, xm2);
    let score = (wide - narrow)
        .abs()
        .max((gap_wide - 2.0 * gap_narrow).abs());
    Ok((wide, if score.is_nan() { f64::INFINITY } else { score }))
}

struct Probe {
    analytic: f64,
    numeric: f64,
    kink: f64,
}

#[derive(Default)]
struct Accumulator {
    probes: Vec<Probe>,
}

impl Accumulator {
    fn push(&mut self, analytic: f64, numeric: f64) {
        self.push_scored(analytic, numeric, 0.0);
    }

    fn push_scored(&mut self, analytic: f64, numeric: f64, kink: f64) {
        self.probes.push(Probe {
            analytic,
            numeric,
            kink,
        });
    }

    fn scale(&self) -> f64 {
        self.probes
            .iter()
            .map(|p| p.analytic.abs().max(p.numeric.abs()))
            .fold(0.0, f64::max)
    }

    fn finish(self, name: String, scale: f64, kink_tol: Option<f64>) -> InputReport {
        let limit = kink_tol.map_or(f64::INFINITY, |t| t * scale);

        let (kept, skipped): (Vec<_>, Vec<_>) = self.probes.iter().partition(|p| p.kink <= limit);
        let max_abs_err = kept
            .iter()
            .map(|p| {
                let d = (p.analytic - p.numeric).abs();
                if d.is_nan() {
                    f64::INFINITY
                } else {
                    d
                }
            })
            .fold(0.0, f64::max);
        let max_rel_err = if scale > 0.0 {
            max_abs_err / scale
        } else if max_abs_err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        InputReport {
            name,
            max_rel_err,
            max_abs_err,
            scale,
            checked: kept.len(),
            skipped: skipped.len(),
        }
    }
}

fn finish_all(entries: Vec<(String, Accumulator)>, kink_tol: Option<f64>) -> Vec<InputReport> {
    let scale = entries.iter().map(|(_, a)| a.scale()).fold(0.0, f64::max);
    entries
        .into_iter()
        .map(|(name, acc)| acc.finish(name, scale, kink_tol))
        .collect()
}

/// Check a scalar function of several flat inputs against supplied analytic gradients.
pub fn check_function<T: Scalar>(
    op: &str,
    inputs: &mut [(String, Vec<T>)],
    analytic: &[Vec<T>],
    mut f: impl FnMut(&[(String, Vec<T>)]) -> Result<f64>,
) -> Result<GradReport> {
    let mut entries = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut acc = Accumulator::default();
        for i in 0..inputs[k].1.len() {
            let x0 = inputs[k].1[i];
            let numeric = central_difference(x0, |v| {
                inputs[k].1[i] = v;
                f(inputs)
            })?;
            inputs[k].1[i] = x0;
            acc.push(analytic[k][i].as_f64(), numeric);
        }
        entries.push((inputs[k].0.clone(), acc));
    }
    Ok(GradReport {
        op: op.to_string(),
        inputs: finish_all(entries, None),
    })
}

/// Scalar objective on a layer output: returns the loss and `dL/dy`.
pub type Objective<'a, T> = dyn Fn(&Tensor4<T>) -> Result<(f64, Tensor4<T>)> + 'a;

/// `L = sum_i r_i y_i` for fixed weights `r` shaped like the output.
pub fn linear_objective<T: Scalar>(
    r: Tensor4<T>,
) -> impl Fn(&Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    move |y: &Tensor4<T>| {
        if y.shape() != r.shape() {
            return Err(Error::shape(
                "linear objective",
                format!("{:?} vs {:?}", y.shape(), r.shape()),
            ));
        }
        let loss = y
            .data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum();
        Ok((loss, r.clone()))
    }
}

/// [`linear_objective`] with `r` drawn from U(-1, 1).
pub fn projection_objective<T: Scalar>(
    shape: [usize; 4],
    seed: u64,
) -> impl Fn(&Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    linear_objective(Tensor4::<T>::from_fn(shape, |_| {
        T::lit(rng.gen_range(-1.0..1.0))
    }))
}

/// Binary cross-entropy against a fixed target mask.
pub fn bce_objective<T: Scalar>(
    target: Tensor4<T>,
) -> impl Fn(&Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    move |y: &Tensor4<T>| {
        let loss = bce_loss(y, &target)?.as_f64();
        Ok((loss, bce_loss_backward(y, &target)?))
    }
}

/// Which entries of each input to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probes {
    All,
    /// A seeded uniform sample of this many entries across all parameters.
    Sample {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct LayerCheck {
    pub mode: Mode,
    pub check_input: bool,
    pub param_probes: Probes,
    /// Set aside probes whose non-smoothness score exceeds this fraction of the gradient scale.
    pub kink_guard: Option<f64>,
}

impl Default for LayerCheck {
    fn default() -> Self {
        Self {
            mode: Mode::Train,
            check_input: true,
            param_probes: Probes::All,
            kink_guard: None,
        }
    }
}

fn probe<T: Scalar>(
    x0: T,
    f0: f64,
    guarded: bool,
    eval: impl FnMut(T) -> Result<f64>,
) -> Result<(f64, f64)> {
    if guarded {
        guarded_difference(x0, f0, eval)
    } else {
        Ok((central_difference(x0, eval)?, 0.0))
    }
}

fn eval_layer<T: Scalar, L: Layer<T> + ?Sized>(
    layer: &mut L,
    x: &Tensor4<T>,
    mode: Mode,
    objective: &Objective<'_, T>,
) -> Result<f64> {
    let y = layer.forward(x, mode)?;
    Ok(objective(&y)?.0)
}

fn set_param_entry<T: Scalar, L: Layer<T> + ?Sized>(
    layer: &mut L,
    which: usize,
    elem: usize,
    v: T,
) {
    let mut k = 0;
    layer.visit_params_mut("", &mut |_, p| {
        if k == which {
            p.value.data_mut()[elem] = v;
        }
        k += 1;
    });
}

struct Analytic {
    grad_x: Vec<f64>,
    names: Vec<String>,
    grads: Vec<Vec<f64>>,
}

fn analytic_grads<T: Scalar, L: Layer<T> + ?Sized>(
    layer: &mut L,
    x: &Tensor4<T>,
    objective: &Objective<'_, T>,
    mode: Mode,
) -> Result<Analytic> {
    layer.zero_grad();
    let y = layer.forward(x, mode)?;
    let (_, grad_y) = objective(&y)?;
    let grad_x = layer.backward(&grad_y)?;
    let mut names = Vec::new();
    let mut grads = Vec::new();
    layer.visit_params("", &mut |name, p| {
        names.push(name.to_string());
        grads.push(p.grad.data().iter().map(|g| g.as_f64()).collect());
    });
    layer.zero_grad();
    Ok(Analytic {
        grad_x: grad_x.data().iter().map(|g| g.as_f64()).collect(),
        names,
        grads,
    })
}

fn probe_sites(lens: &[usize], probes: Probes) -> Vec<(usize, usize)> {
    match probes {
        Probes::All => lens
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| (0..n).map(move |i| (k, i)))
            .collect(),
        Probes::Sample { count, seed } => {
            let total: usize = lens.iter().sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picks = sample(&mut rng, total, count.min(total)).into_vec();
            picks.sort_unstable();
            let mut out = Vec::with_capacity(picks.len());
            let (mut k, mut base) = (0, 0);
            for flat in picks {
                while flat >= base + lens[k] {
                    base += lens[k];
                    k += 1;
                }
                out.push((k, flat - base));
            }
            out
        }
    }
}

/// `(numeric, kink)` for every input entry (if requested) and every parameter site.
type Numeric = (Vec<(f64, f64)>, Vec<(f64, f64)>);

fn numeric_grads<U: Scalar, R: Layer<U> + ?Sized>(
    layer: &mut R,
    x: &Tensor4<U>,
    objective: &Objective<'_, U>,
    opts: &LayerCheck,
    sites: &[(usize, usize)],
) -> Result<Numeric> {
    let guarded = opts.kink_guard.is_some();
    let f0 = if guarded {
        eval_layer(layer, x, opts.mode, objective)?
    } else {
        0.0
    };
    let mut values = Vec::new();
    layer.visit_params("", &mut |_, p| values.push(p.value.data().to_vec()));

    let mut input = Vec::new();
    if opts.check_input {
        let mut xp = x.clone();
        for i in 0..x.len() {
            let x0 = x.data()[i];
            input.push(probe(x0, f0, guarded, |v| {
                xp.data_mut()[i] = v;
                eval_layer(layer, &xp, opts.mode, objective)
            })?);
            xp.data_mut()[i] = x0;
        }
    }
    let mut params = Vec::with_capacity(sites.len());
    for &(k, i) in sites {
        let x0 = values[k][i];
        params.push(probe(x0, f0, guarded, |v| {
            set_param_entry(layer, k, i, v);
            eval_layer(layer, x, opts.mode, objective)
        })?);
        set_param_entry(layer, k, i, x0);
    }

    // Leave the layer as it was: no stale forward cache, no accumulated grads.
    layer.forward(x, opts.mode)?;
    layer.zero_grad();
    Ok((input, params))
}

fn assemble(
    op: &str,
    analytic: Analytic,
    numeric: Numeric,
    sites: &[(usize, usize)],
    opts: &LayerCheck,
) -> GradReport {
    let (input, params) = numeric;
    let mut entries = Vec::new();
    if opts.check_input {
        let mut acc = Accumulator::default();
        for (&a, &(n, kink)) in analytic.grad_x.iter().zip(&input) {
            acc.push_scored(a, n, kink);
        }
        entries.push(("input".to_string(), acc));
    }
    let mut per_param: Vec<Accumulator> = analytic
        .names
        .iter()
        .map(|_| Accumulator::default())
        .collect();
    for (&(k, i), &(n, kink)) in sites.iter().zip(&params) {
        per_param[k].push_scored(analytic.grads[k][i], n, kink);
    }
    match opts.param_probes {
        Probes::All => entries.extend(analytic.names.into_iter().zip(per_param)),
        Probes::Sample { .. } => {
            // A sampled subset is reported as one pooled input.
            let mut pooled = Accumulator::default();
            for acc in per_param {
                pooled.probes.extend(acc.probes);
            }
            entries.push(("sampled parameters".to_string(), pooled));
        }
    }
    GradReport {
        op: op.to_string(),
        inputs: finish_all(entries, opts.kink_guard),
    }
}

/// Check a layer's input and parameter gradients against central differences of `objective`.
pub fn check_layer<T: Scalar, L: Layer<T> + ?Sized>(
    op: &str,
    layer: &mut L,
    x: &Tensor4<T>,
    objective: &Objective<'_, T>,
    opts: LayerCheck,
) -> Result<GradReport> {
    let analytic = analytic_grads(layer, x, objective, opts.mode)?;
    let sites = probe_sites(
        &analytic.grads.iter().map(Vec::len).collect::<Vec<_>>(),
        opts.param_probes,
    );
    let numeric = numeric_grads(layer, x, objective, &opts, &sites)?;
    Ok(assemble(op, analytic, numeric, &sites, &opts))
}

/// Like [`check_layer`], but the central differences are taken on `reference`,
/// a copy of `layer` in another precision with identically named parameters.
///
/// Checking 32-bit gradients against 64-bit differences keeps rounding noise
/// and kink crossings out of the numeric side on deep networks.
pub fn check_layer_against<T, U, L, R>(
    op: &str,
    layer: &mut L,
    x: &Tensor4<T>,
    objective: &Objective<'_, T>,
    reference: &mut R,
    reference_objective: &Objective<'_, U>,
    opts: LayerCheck,
) -> Result<GradReport>
where
    T: Scalar,
    U: Scalar,
    L: Layer<T> + ?Sized,
    R: Layer<U> + ?Sized,
{
    let analytic = analytic_grads(layer, x, objective, opts.mode)?;
    let mut ref_params = Vec::new();
    reference.visit_params("", &mut |name, p| {
        ref_params.push((name.to_string(), p.len()))
    });
    let lens: Vec<usize> = analytic.grads.iter().map(Vec::len).collect();
    let same = ref_params.len() == lens.len()
        && ref_params
            .iter()
            .zip(analytic.names.iter().zip(&lens))
            .all(|((rn, rl), (n, l))| rn == n && rl == l);
    if !same {
        return Err(Error::Config(format!(
            "reference for {op} has different parameters"
        )));
    }
    let sites = probe_sites(&lens, opts.param_probes);
    let numeric = numeric_grads(
        reference,
        &x.cast::<U>(),
        reference_objective,
        &opts,
        &sites,
    )?;
    Ok(assemble(op, analytic, numeric, &sites, &opts))
}
