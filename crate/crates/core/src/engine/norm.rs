use super::{join, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running per-channel mean and (unbiased) variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor4<T>,
    pub var: Tensor4<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor4::zeros([channels, 1, 1, 1]),
            var: Tensor4::full([channels, 1, 1, 1], T::one()),
        }
    }
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    x_hat: Tensor4<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel normalization over `(batch, height, width)`.
pub fn batchnorm2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    gamma: &Param<T>,
    beta: &Param<T>,
    running: &mut RunningStats<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    let [n, c, h, w] = x.shape();
    if gamma.len() != c || beta.len() != c || running.mean.len() != c {
        return Err(Error::shape(
            "batchnorm2d",
            format!("input has {c} channels, parameters have {}", gamma.len()),
        ));
    }
    let count = n * h * w;
    if mode == Mode::Train && count < 2 {
        return Err(Error::shape(
            "batchnorm2d",
            "train mode needs at least 2 values per channel",
        ));
    }
    let hw = h * w;
    let mut inv_std = Vec::with_capacity(c);
    let mut mean = Vec::with_capacity(c);
    for ch in 0..c {
        let (mu, var) = match mode {
            Mode::Train => {
                let mut s = 0.0f64;
                for b in 0..n {
                    s += x.plane(b, ch).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mu = s / count as f64;
                let mut ss = 0.0f64;
                for b in 0..n {
                    ss += x
                        .plane(b, ch)
                        .iter()
                        .map(|v| (v.as_f64() - mu).powi(2))
                        .sum::<f64>();
                }
                let var = ss / count as f64;
                let unbiased = ss / (count - 1) as f64;
                let rm = &mut running.mean.data_mut()[ch];
                *rm = T::lit((1.0 - BN_MOMENTUM) * rm.as_f64() + BN_MOMENTUM * mu);
                let rv = &mut running.var.data_mut()[ch];
                *rv = T::lit((1.0 - BN_MOMENTUM) * rv.as_f64() + BN_MOMENTUM * unbiased);
                (mu, var)
            }
            Mode::Eval => (
                running.mean.data()[ch].as_f64(),
                running.var.data()[ch].as_f64(),
            ),
        };
        mean.push(T::lit(mu));
        inv_std.push(T::lit(1.0 / (var + BN_EPS).sqrt()));
    }

    let mut x_hat = Tensor4::zeros(x.shape());
    let mut y = Tensor4::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let (mu, is) = (mean[ch], inv_std[ch]);
            let (g, bt) = (gamma.value.data()[ch], beta.value.data()[ch]);
            let src = x.plane(b, ch);
            let xh = x_hat.plane_mut(b, ch);
            for (d, &s) in xh.iter_mut().zip(src) {
                *d = (s - mu) * is;
            }
            let start = (b * c + ch) * hw;
            let xh = &x_hat.data()[start..start + hw];
            for (d, &v) in y.plane_mut(b, ch).iter_mut().zip(xh) {
                *d = g * v + bt;
            }
        }
    }
    let y = y.ensure_finite("batchnorm2d_forward")?;
    Ok((
        y,
        BnCache {
            x_hat,
            inv_std,
            mode,
        },
    ))
}

pub fn batchnorm2d_backward<T: Scalar>(
    grad_y: &Tensor4<T>,
    cache: &BnCache<T>,
    gamma: &mut Param<T>,
    beta: &mut Param<T>,
) -> Result<Tensor4<T>> {
    if grad_y.shape() != cache.x_hat.shape() {
        return Err(Error::shape(
            "batchnorm2d_backward",
            "grad_y does not match forward output",
        ));
    }
    let [n, c, h, w] = grad_y.shape();
    let count = (n * h * w) as f64;
    let mut gx = Tensor4::zeros(grad_y.shape());
    for ch in 0..c {
        let g = gamma.value.data()[ch];
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xh = 0.0f64;
        for b in 0..n {
            for (&dy, &xh) in grad_y.plane(b, ch).iter().zip(cache.x_hat.plane(b, ch)) {
                sum_dy += dy.as_f64();
                sum_dy_xh += (dy * xh).as_f64();
            }
        }
        gamma.grad.data_mut()[ch] += T::lit(sum_dy_xh);
        beta.grad.data_mut()[ch] += T::lit(sum_dy);
        let is = cache.inv_std[ch];
        match cache.mode {
            Mode::Eval => {
                for b in 0..n {
                    for (d, &dy) in gx.plane_mut(b, ch).iter_mut().zip(grad_y.plane(b, ch)) {
                        *d = dy * g * is;
                    }
                }
            }
            Mode::Train => {
                // dx = g * inv_std / N * (N dy - sum(dy) - x_hat * sum(dy * x_hat))
                let mean_dy = T::lit(sum_dy / count);
                let mean_dy_xh = T::lit(sum_dy_xh / count);
                let scale = g * is;
                for b in 0..n {
                    let gy = grad_y.plane(b, ch);
                    let xh = cache.x_hat.plane(b, ch);
                    for ((d, &dy), &xv) in gx.plane_mut(b, ch).iter_mut().zip(gy).zip(xh) {
                        *d = scale * (dy - mean_dy - xv * mean_dy_xh);
                    }
                }
            }
        }
    }
    gx.ensure_finite("batchnorm2d_backward")
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running: RunningStats<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    /// `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::vector(channels, T::one()),
            beta: Param::vector(channels, T::zero()),
            running: RunningStats::new(channels),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let (y, cache) = batchnorm2d_forward(x, &self.gamma, &self.beta, &mut self.running, mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("BatchNorm2d::backward", "no cached forward state"))?;
        batchnorm2d_backward(grad_y, &cache, &mut self.gamma, &mut self.beta)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>)) {
        f(&join(prefix, "running_mean"), &self.running.mean);
        f(&join(prefix, "running_var"), &self.running.var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running.mean);
        f(&join(prefix, "running_var"), &mut self.running.var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut bn = BatchNorm2d::<f32>::new(2);
        let x = Tensor4::from_fn([2, 2, 3, 3], |[_, c, _, _]| if c == 0 { 7.0 } else { -3.0 });
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn beta_shifts_channel_mean() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.beta.value.fill(5.0);
        let x = Tensor4::from_fn([2, 1, 4, 4], |[b, _, y, x]| {
            (b * 16 + y * 4 + x) as f64 * 0.3 - 1.0
        });
        let y = bn.forward(&x, Mode::Train).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 5.0).abs() < 1e-12);
    }

    #[test]
    fn running_stats_move_only_in_train_mode() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor4::from_fn([1, 1, 2, 2], |[_, _, y, x]| (y * 2 + x) as f64);
        bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(bn.running, RunningStats::new(1));
        bn.forward(&x, Mode::Train).unwrap();
        // mean 1.5, unbiased var 5/3
        assert!((bn.running.mean.data()[0] - 0.15).abs() < 1e-12);
        assert!((bn.running.var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_single_value_in_train_mode() {
        let mut bn = BatchNorm2d::<f32>::new(1);
        assert!(bn
            .forward(&Tensor4::zeros([1, 1, 1, 1]), Mode::Train)
            .is_err());
        assert!(bn
            .forward(&Tensor4::zeros([1, 1, 1, 1]), Mode::Eval)
            .is_ok());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut bn = BatchNorm2d::<f32>::new(3);
        assert!(bn
            .forward(&Tensor4::zeros([1, 2, 2, 2]), Mode::Train)
            .is_err());
    }
}
