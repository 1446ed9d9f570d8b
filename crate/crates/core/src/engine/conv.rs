use rand::Rng;

use super::gemm::{gemm, transpose};
use super::im2col::{col2im_add, im2col, Geometry};
use super::{join, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Hyperparameters of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, dilation 1, one group, bias on.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding,
            dilation: 1,
            groups: 1,
            bias: true,
        }
    }

    /// Per-channel convolution: `groups = channels`, size-preserving padding.
    pub fn depthwise(channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups: channels,
            bias: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.stride,
            self.dilation,
            self.groups,
        ];
        if positive.contains(&0) {
            return Err(Error::Config(format!(
                "conv spec has a zero field: {self:?}"
            )));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    /// Weight shape `(n, c / groups, k, k)`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel * self.kernel
    }

    /// Output spatial size for an `h x w` input, or an error if it would be < 1.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = Geometry::out_len(h, self.kernel, self.stride, self.padding, self.dilation);
        let ow = Geometry::out_len(w, self.kernel, self.stride, self.padding, self.dilation);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(
                "conv2d",
                format!("non-positive output size for {h}x{w} input with {self:?}"),
            )),
        }
    }

    pub(crate) fn geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        let (out_h, out_w) = self.output_size(h, w)?;
        Ok(Geometry {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            dilation: self.dilation,
            in_h: h,
            in_w: w,
            out_h,
            out_w,
        })
    }
}

fn check_weights<T: Scalar>(
    op: &'static str,
    x: &Tensor4<T>,
    weight: &Param<T>,
    bias: Option<&Param<T>>,
    spec: &ConvSpec,
) -> Result<()> {
    spec.validate()?;
    if x.channels() != spec.in_channels {
        return Err(Error::shape(
            op,
            format!(
                "input has {} channels, spec expects {}",
                x.channels(),
                spec.in_channels
            ),
        ));
    }
    if weight.value.shape() != spec.weight_shape() {
        return Err(Error::shape(
            op,
            format!(
                "weight {:?}, spec expects {:?}",
                weight.value.shape(),
                spec.weight_shape()
            ),
        ));
    }
    match (spec.bias, bias) {
        (true, Some(b)) if b.len() == spec.out_channels => Ok(()),
        (false, None) => Ok(()),
        _ => Err(Error::shape(op, "bias presence/length disagrees with spec")),
    }
}

/// `y = x * w (+ b)`.
///
/// Each output element is accumulated from zero over `(input channel, kernel row,
/// kernel column)` in that order; the bias is added after the sum.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Param<T>,
    bias: Option<&Param<T>>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    check_weights("conv2d_forward", x, weight, bias, spec)?;
    let [nb, c, h, w] = x.shape();
    let g = spec.geometry(h, w)?;
    let groups = spec.groups;
    let (cg, ng) = (c / groups, spec.out_channels / groups);
    let kk = cg * spec.kernel * spec.kernel;
    let p = g.out_h * g.out_w;
    let pointwise = g.is_pointwise();

    let mut y = Tensor4::zeros([nb, spec.out_channels, g.out_h, g.out_w]);
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    let wdata = weight.value.data();
    for b in 0..nb {
        let xs = x.sample(b);
        let ys = y.sample_mut(b);
        for grp in 0..groups {
            let xg = &xs[grp * cg * h * w..(grp + 1) * cg * h * w];
            let cols: &[T] = if pointwise {
                xg
            } else {
                im2col(xg, cg, &g, &mut col);
                &col
            };
            let wg = &wdata[grp * ng * kk..(grp + 1) * ng * kk];
            gemm(
                ng,
                p,
                kk,
                wg,
                kk,
                cols,
                p,
                &mut ys[grp * ng * p..(grp + 1) * ng * p],
                p,
            );
        }
        if let Some(bias) = bias {
            for (o, &bv) in bias.value.data().iter().enumerate() {
                ys[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    y.ensure_finite("conv2d_forward")
}

/// Returns `dL/dx` and accumulates `dL/dw` (and `dL/db`) into the parameter grads.
pub fn conv2d_backward<T: Scalar>(
    grad_y: &Tensor4<T>,
    saved_x: &Tensor4<T>,
    weight: &mut Param<T>,
    mut bias: Option<&mut Param<T>>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    check_weights("conv2d_backward", saved_x, weight, bias.as_deref(), spec)?;
    let [nb, c, h, w] = saved_x.shape();
    let g = spec.geometry(h, w)?;
    if grad_y.shape() != [nb, spec.out_channels, g.out_h, g.out_w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_y {:?}, forward output was {:?}",
                grad_y.shape(),
                [nb, spec.out_channels, g.out_h, g.out_w]
            ),
        ));
    }
    let groups = spec.groups;
    let (cg, ng) = (c / groups, spec.out_channels / groups);
    let kk = cg * spec.kernel * spec.kernel;
    let p = g.out_h * g.out_w;
    let pointwise = g.is_pointwise();

    // Per-group transposed weights, (kk x ng).
    let mut w_t = vec![T::zero(); groups * kk * ng];
    for grp in 0..groups {
        transpose(
            &weight.value.data()[grp * ng * kk..(grp + 1) * ng * kk],
            ng,
            kk,
            &mut w_t[grp * kk * ng..(grp + 1) * kk * ng],
        );
    }

    let mut grad_x = Tensor4::zeros(saved_x.shape());
    let mut col = vec![T::zero(); kk * p];
    let mut col_t = vec![T::zero(); p * kk];
    let mut gw = vec![T::zero(); ng * kk];
    let mut gcol = vec![T::zero(); kk * p];
    for b in 0..nb {
        let xs = saved_x.sample(b);
        let gys = grad_y.sample(b);
        let gxs = grad_x.sample_mut(b);
        for grp in 0..groups {
            let xg = &xs[grp * cg * h * w..(grp + 1) * cg * h * w];
            let gyg = &gys[grp * ng * p..(grp + 1) * ng * p];
            if pointwise {
                col.copy_from_slice(xg);
            } else {
                im2col(xg, cg, &g, &mut col);
            }
            transpose(&col, kk, p, &mut col_t);
            gemm(ng, kk, p, gyg, p, &col_t, kk, &mut gw, kk);
            let wgrad = &mut weight.grad.data_mut()[grp * ng * kk..(grp + 1) * ng * kk];
            wgrad.iter_mut().zip(&gw).for_each(|(a, &d)| *a += d);

            gemm(
                kk,
                p,
                ng,
                &w_t[grp * kk * ng..(grp + 1) * kk * ng],
                ng,
                gyg,
                p,
                &mut gcol,
                p,
            );
            let gxg = &mut gxs[grp * cg * h * w..(grp + 1) * cg * h * w];
            if pointwise {
                gxg.iter_mut().zip(&gcol).for_each(|(a, &d)| *a += d);
            } else {
                col2im_add(&gcol, cg, &g, gxg);
            }
        }
        if let Some(bias) = bias.as_deref_mut() {
            for (o, gb) in bias.grad.data_mut().iter_mut().enumerate() {
                *gb += gys[o * p..(o + 1) * p].iter().copied().sum::<T>();
            }
        }
    }
    grad_x.ensure_finite("conv2d_backward")
}

/// Convolution layer owning its weights.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    saved_x: Option<Tensor4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized layer; see [`Conv2d::init`].
    pub fn new(spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            weight: Param::kernel(spec.weight_shape()),
            bias: spec
                .bias
                .then(|| Param::vector(spec.out_channels, T::zero())),
            saved_x: None,
        })
    }

    /// Kaiming-uniform weights, zero bias.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.weight.kaiming_uniform(self.spec.fan_in(), rng);
        if let Some(b) = &mut self.bias {
            b.value.fill(T::zero());
        }
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let y = conv2d_forward(x, &self.weight, self.bias.as_ref(), &self.spec)?;
        self.saved_x = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self
            .saved_x
            .take()
            .ok_or_else(|| Error::shape("Conv2d::backward", "no cached forward input"))?;
        conv2d_backward(grad_y, &x, &mut self.weight, self.bias.as_mut(), &self.spec)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
