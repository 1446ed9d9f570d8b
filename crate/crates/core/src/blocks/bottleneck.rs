//! Residual block of two stacked ghost/GP modules.

use rand::Rng;

use super::ghost::{GhostModule, GhostSpec};
use crate::engine::{join, BatchNorm2d, Conv2d, ConvSpec, Layer, Mode, Param, Relu};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shortcut {
    Identity,
    /// Depth-wise 3x3 + BN, then point-wise 1x1 + BN.
    Projection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BneckSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub first: GhostSpec,
    pub second: GhostSpec,
    pub shortcut: Shortcut,
}

impl BneckSpec {
    pub fn from_modules(first: GhostSpec, second: GhostSpec) -> Result<Self> {
        let (in_channels, out_channels) = (first.in_channels, second.out_channels);
        if first.out_channels != second.in_channels {
            return Err(Error::Config(format!(
                "stacked modules disagree: first emits {}, second takes {}",
                first.out_channels, second.in_channels
            )));
        }
        let shortcut = if in_channels == out_channels {
            Shortcut::Identity
        } else {
            Shortcut::Projection
        };
        Ok(Self {
            in_channels,
            out_channels,
            first,
            second,
            shortcut,
        })
    }

    pub fn ghost(in_channels: usize, out_channels: usize) -> Self {
        Self::from_modules(
            GhostSpec::ghost(in_channels, out_channels),
            GhostSpec::ghost(out_channels, out_channels),
        )
        .expect("matching widths")
    }

    pub fn gp(in_channels: usize, out_channels: usize) -> Self {
        Self::from_modules(
            GhostSpec::gp(in_channels, out_channels),
            GhostSpec::gp(out_channels, out_channels),
        )
        .expect("matching widths")
    }

    pub fn projection_specs(&self) -> (ConvSpec, ConvSpec) {
        (
            ConvSpec::depthwise(self.in_channels, 3, 1),
            ConvSpec::new(self.in_channels, self.out_channels, 1, 0).with_bias(false),
        )
    }
}

#[derive(Debug, Clone)]
struct Projection<T> {
    dw: Conv2d<T>,
    bn_dw: BatchNorm2d<T>,
    pw: Conv2d<T>,
    bn_pw: BatchNorm2d<T>,
}

impl<T: Scalar> Projection<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let a = self.dw.forward(x, mode)?;
        let a = self.bn_dw.forward(&a, mode)?;
        let a = self.pw.forward(&a, mode)?;
        self.bn_pw.forward(&a, mode)
    }

    fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.bn_pw.backward(g)?;
        let g = self.pw.backward(&g)?;
        let g = self.bn_dw.backward(&g)?;
        self.dw.backward(&g)
    }
}

/// `out = shortcut(x) + BN(M2(ReLU(BN(M1(x)))))`, no activation after the sum.
#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    spec: BneckSpec,
    pub first: GhostModule<T>,
    pub bn1: BatchNorm2d<T>,
    relu: Relu<T>,
    pub second: GhostModule<T>,
    pub bn2: BatchNorm2d<T>,
    projection: Option<Projection<T>>,
}

impl<T: Scalar> Bottleneck<T> {
    pub fn new(spec: BneckSpec) -> Result<Self> {
        let projection = match spec.shortcut {
            Shortcut::Identity => {
                if spec.in_channels != spec.out_channels {
                    return Err(Error::Config(
                        "identity shortcut needs equal in/out channels".into(),
                    ));
                }
                None
            }
            Shortcut::Projection => {
                let (dw, pw) = spec.projection_specs();
                Some(Projection {
                    dw: Conv2d::new(dw)?,
                    bn_dw: BatchNorm2d::new(spec.in_channels),
                    pw: Conv2d::new(pw)?,
                    bn_pw: BatchNorm2d::new(spec.out_channels),
                })
            }
        };
        Ok(Self {
            first: GhostModule::new(spec.first.clone())?,
            bn1: BatchNorm2d::new(spec.first.out_channels),
            relu: Relu::new(),
            second: GhostModule::new(spec.second.clone())?,
            bn2: BatchNorm2d::new(spec.out_channels),
            projection,
            spec,
        })
    }

    pub fn spec(&self) -> &BneckSpec {
        &self.spec
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.first.init(rng);
        self.second.init(rng);
        if let Some(p) = &mut self.projection {
            p.dw.init(rng);
            p.pw.init(rng);
        }
    }
}

impl<T: Scalar> Layer<T> for Bottleneck<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        if x.channels() != self.spec.in_channels {
            return Err(Error::shape(
                "gp_bottleneck",
                format!(
                    "input has {} channels, block expects {}",
                    x.channels(),
                    self.spec.in_channels
                ),
            ));
        }
        let a = self.first.forward(x, mode)?;
        let a = self.bn1.forward(&a, mode)?;
        let a = self.relu.forward(&a, mode)?;
        let a = self.second.forward(&a, mode)?;
        let mut out = self.bn2.forward(&a, mode)?;
        match &mut self.projection {
            None => out.add_assign(x)?,
            Some(p) => out.add_assign(&p.forward(x, mode)?)?,
        }
        out.ensure_finite("gp_bottleneck")
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.bn2.backward(grad_y)?;
        let g = self.second.backward(&g)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let mut gx = self.first.backward(&g)?;
        match &mut self.projection {
            None => gx.add_assign(grad_y)?,
            Some(p) => gx.add_assign(&p.backward(grad_y)?)?,
        }
        Ok(gx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.first.visit_params(&join(prefix, "gm1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.second.visit_params(&join(prefix, "gm2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        if let Some(p) = &self.projection {
            p.dw.visit_params(&join(prefix, "shortcut.dw"), f);
            p.bn_dw.visit_params(&join(prefix, "shortcut.bn_dw"), f);
            p.pw.visit_params(&join(prefix, "shortcut.pw"), f);
            p.bn_pw.visit_params(&join(prefix, "shortcut.bn_pw"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.first.visit_params_mut(&join(prefix, "gm1"), f);
        self.bn1.visit_params_mut(&join(prefix, "bn1"), f);
        self.second.visit_params_mut(&join(prefix, "gm2"), f);
        self.bn2.visit_params_mut(&join(prefix, "bn2"), f);
        if let Some(p) = &mut self.projection {
            p.dw.visit_params_mut(&join(prefix, "shortcut.dw"), f);
            p.bn_dw.visit_params_mut(&join(prefix, "shortcut.bn_dw"), f);
            p.pw.visit_params_mut(&join(prefix, "shortcut.pw"), f);
            p.bn_pw.visit_params_mut(&join(prefix, "shortcut.bn_pw"), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>)) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
        if let Some(p) = &self.projection {
            p.bn_dw.visit_buffers(&join(prefix, "shortcut.bn_dw"), f);
            p.bn_pw.visit_buffers(&join(prefix, "shortcut.bn_pw"), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        self.bn1.visit_buffers_mut(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers_mut(&join(prefix, "bn2"), f);
        if let Some(p) = &mut self.projection {
            p.bn_dw
                .visit_buffers_mut(&join(prefix, "shortcut.bn_dw"), f);
            p.bn_pw
                .visit_buffers_mut(&join(prefix, "shortcut.bn_pw"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortcut_kind_follows_widths() {
        assert_eq!(BneckSpec::gp(16, 16).shortcut, Shortcut::Identity);
        assert_eq!(BneckSpec::gp(16, 32).shortcut, Shortcut::Projection);
        assert_eq!(BneckSpec::ghost(3, 8).shortcut, Shortcut::Projection);
    }

    #[test]
    fn zero_module_weights_give_identity_at_eval() {
        let mut b = Bottleneck::<f32>::new(BneckSpec::gp(4, 4)).unwrap();
        let x = Tensor4::from_fn([1, 4, 6, 6], |[_, c, y, x]| {
            (c * 36 + y * 6 + x) as f32 * 0.1 - 3.0
        });
        let y = b.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn projection_changes_width() {
        let mut b = Bottleneck::<f32>::new(BneckSpec::ghost(16, 32)).unwrap();
        b.init(&mut rand::rngs::mock::StepRng::new(1, 1 << 40));
        let y = b
            .forward(&Tensor4::zeros([1, 16, 4, 4]), Mode::Train)
            .unwrap();
        assert_eq!(y.shape(), [1, 32, 4, 4]);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut b = Bottleneck::<f32>::new(BneckSpec::ghost(4, 8)).unwrap();
        assert!(b
            .forward(&Tensor4::zeros([1, 5, 4, 4]), Mode::Train)
            .is_err());
    }
}
