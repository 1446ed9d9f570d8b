use rand::Rng;

use super::gemm::{gemm, transpose};
use super::im2col::{col2im_add, im2col, Geometry};
use super::{join, ConvSpec, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Weight shape `(c_in, c_out, k, k)` of a transposed convolution.
pub(crate) fn weight_shape(spec: &ConvSpec) -> [usize; 4] {
    [
        spec.in_channels,
        spec.out_channels,
        spec.kernel,
        spec.kernel,
    ]
}

/// Output extent `(len - 1) * s - 2p + d(k - 1) + output_padding + 1`.
pub(crate) fn output_size(
    spec: &ConvSpec,
    output_padding: usize,
    h: usize,
    w: usize,
) -> Result<(usize, usize)> {
    let f = |len: usize| -> Option<usize> {
        let full = (len.checked_sub(1)?) * spec.stride
            + spec.dilation * (spec.kernel - 1)
            + output_padding
            + 1;
        full.checked_sub(2 * spec.padding).filter(|&v| v > 0)
    };
    match (f(h), f(w)) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::shape(
            "transposed_conv2d",
            format!("non-positive output for {h}x{w}"),
        )),
    }
}

fn geometry(spec: &ConvSpec, output_padding: usize, h: usize, w: usize) -> Result<Geometry> {
    spec.validate()?;
    if spec.groups != 1 {
        return Err(Error::Config(
            "grouped transposed convolution is not supported".into(),
        ));
    }
    if output_padding >= spec.stride.max(spec.dilation) {
        return Err(Error::Config(format!(
            "output_padding {output_padding} must be smaller than stride or dilation"
        )));
    }
    let (oh, ow) = output_size(spec, output_padding, h, w)?;
    // The transposed convolution is the adjoint of an ordinary convolution from the
    // (oh, ow) grid down to (h, w).
    let g = Geometry {
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        dilation: spec.dilation,
        in_h: oh,
        in_w: ow,
        out_h: h,
        out_w: w,
    };
    debug_assert_eq!(
        Geometry::out_len(oh, g.kernel, g.stride, g.padding, g.dilation),
        Some(h)
    );
    Ok(g)
}

fn check<T: Scalar>(
    op: &'static str,
    x: &Tensor4<T>,
    weight: &Param<T>,
    bias: Option<&Param<T>>,
    spec: &ConvSpec,
) -> Result<()> {
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
    if weight.value.shape() != weight_shape(spec) {
        return Err(Error::shape(
            op,
            format!(
                "weight {:?}, expected {:?}",
                weight.value.shape(),
                weight_shape(spec)
            ),
        ));
    }
    match (spec.bias, bias) {
        (true, Some(b)) if b.len() == spec.out_channels => Ok(()),
        (false, None) => Ok(()),
        _ => Err(Error::shape(op, "bias presence/length disagrees with spec")),
    }
}

pub fn transposed_conv2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Param<T>,
    bias: Option<&Param<T>>,
    spec: &ConvSpec,
    output_padding: usize,
) -> Result<Tensor4<T>> {
    let [nb, c, h, w] = x.shape();
    let g = geometry(spec, output_padding, h, w)?;
    check("transposed_conv2d_forward", x, weight, bias, spec)?;
    let n = spec.out_channels;
    let kout = n * spec.kernel * spec.kernel;
    let pin = h * w;
    let pout = g.in_h * g.in_w;

    let mut w_t = vec![T::zero(); kout * c];
    transpose(weight.value.data(), c, kout, &mut w_t);
    let mut cols = vec![T::zero(); kout * pin];
    let mut y = Tensor4::zeros([nb, n, g.in_h, g.in_w]);
    for b in 0..nb {
        gemm(kout, pin, c, &w_t, c, x.sample(b), pin, &mut cols, pin);
        let ys = y.sample_mut(b);
        col2im_add(&cols, n, &g, ys);
        if let Some(bias) = bias {
            for (o, &bv) in bias.value.data().iter().enumerate() {
                ys[o * pout..(o + 1) * pout]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    y.ensure_finite("transposed_conv2d_forward")
}

pub fn transposed_conv2d_backward<T: Scalar>(
    grad_y: &Tensor4<T>,
    saved_x: &Tensor4<T>,
    weight: &mut Param<T>,
    mut bias: Option<&mut Param<T>>,
    spec: &ConvSpec,
    output_padding: usize,
) -> Result<Tensor4<T>> {
    let [nb, c, h, w] = saved_x.shape();
    let g = geometry(spec, output_padding, h, w)?;
    check(
        "transposed_conv2d_backward",
        saved_x,
        weight,
        bias.as_deref(),
        spec,
    )?;
    let n = spec.out_channels;
    if grad_y.shape() != [nb, n, g.in_h, g.in_w] {
        return Err(Error::shape(
            "transposed_conv2d_backward",
            format!(
                "grad_y {:?}, forward output was {:?}",
                grad_y.shape(),
                [nb, n, g.in_h, g.in_w]
            ),
        ));
    }
    let kout = n * spec.kernel * spec.kernel;
    let pin = h * w;
    let pout = g.in_h * g.in_w;

    let mut grad_x = Tensor4::zeros(saved_x.shape());
    let mut cols = vec![T::zero(); kout * pin];
    let mut cols_t = vec![T::zero(); pin * kout];
    let mut gw = vec![T::zero(); c * kout];
    for b in 0..nb {
        let gys = grad_y.sample(b);
        im2col(gys, n, &g, &mut cols);
        gemm(
            c,
            pin,
            kout,
            weight.value.data(),
            kout,
            &cols,
            pin,
            grad_x.sample_mut(b),
            pin,
        );
        transpose(&cols, kout, pin, &mut cols_t);
        gemm(
            c,
            kout,
            pin,
            saved_x.sample(b),
            pin,
            &cols_t,
            kout,
            &mut gw,
            kout,
        );
        weight
            .grad
            .data_mut()
            .iter_mut()
            .zip(&gw)
            .for_each(|(a, &d)| *a += d);
        if let Some(bias) = bias.as_deref_mut() {
            for (o, gb) in bias.grad.data_mut().iter_mut().enumerate() {
                *gb += gys[o * pout..(o + 1) * pout].iter().copied().sum::<T>();
            }
        }
    }
    grad_x.ensure_finite("transposed_conv2d_backward")
}

/// Learnable upsampling convolution.
#[derive(Debug, Clone)]
pub struct TransposedConv2d<T> {
    spec: ConvSpec,
    output_padding: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    saved_x: Option<Tensor4<T>>,
}

impl<T: Scalar> TransposedConv2d<T> {
    pub fn new(spec: ConvSpec, output_padding: usize) -> Result<Self> {
        geometry(&spec, output_padding, 1, 1)?;
        Ok(Self {
            spec,
            output_padding,
            weight: Param::kernel(weight_shape(&spec)),
            bias: spec
                .bias
                .then(|| Param::vector(spec.out_channels, T::zero())),
            saved_x: None,
        })
    }

    /// The doubling upsampler: 3x3 kernel, stride 2, padding 1, output padding 1.
    pub fn upsample2x(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(
            ConvSpec::new(in_channels, out_channels, 3, 1).with_stride(2),
            1,
        )
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn output_padding(&self) -> usize {
        self.output_padding
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        output_size(&self.spec, self.output_padding, h, w)
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        // Each output pixel of a stride-2 transposed conv sees about c_in * k * k / s^2 taps;
        // use the plain c_in * k * k fan-in like the forward conv.
        let fan_in = self.spec.in_channels * self.spec.kernel * self.spec.kernel;
        self.weight.kaiming_uniform(fan_in, rng);
        if let Some(b) = &mut self.bias {
            b.value.fill(T::zero());
        }
    }
}

impl<T: Scalar> Layer<T> for TransposedConv2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let y = transposed_conv2d_forward(
            x,
            &self.weight,
            self.bias.as_ref(),
            &self.spec,
            self.output_padding,
        )?;
        self.saved_x = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self
            .saved_x
            .take()
            .ok_or_else(|| Error::shape("TransposedConv2d::backward", "no cached forward input"))?;
        transposed_conv2d_backward(
            grad_y,
            &x,
            &mut self.weight,
            self.bias.as_mut(),
            &self.spec,
            self.output_padding,
        )
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
