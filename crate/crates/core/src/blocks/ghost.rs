//! Ghost module and its atrous-pyramid generalization (GP-module).
//!
//! A primary convolution produces `m = ceil(n / s)` intrinsic maps. Each intrinsic
//! map `y'_i` is expanded into `s` output slots: the `s - 1` cheap depth-wise
//! operations of the bank applied to `y'_i`, followed by `y'_i` itself. Output
//! channels are grouped by intrinsic map, `[g_1(y'_1) .. g_{s-1}(y'_1), y'_1, g_1(y'_2) ..]`,
//! and truncated to `n`.
//!
//! The ghost module uses one shared cheap kernel shape for every slot. The GP-module
//! gives each slot its own dilation rate (plus a 1x1 slot), so the ghosts of one
//! intrinsic map see different receptive fields at the same parameter cost.

use rand::Rng;

use crate::engine::{join, Conv2d, ConvSpec, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// One depth-wise cheap operation: `kernel x kernel` taps spaced `dilation` apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheapOp {
    pub kernel: usize,
    pub dilation: usize,
}

impl CheapOp {
    pub const fn new(kernel: usize, dilation: usize) -> Self {
        Self { kernel, dilation }
    }

    /// Size-preserving padding `dilation * (kernel - 1) / 2`.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }
}

/// Cheap-op bank of the ghost module: a single 3x3 slot.
pub const GHOST_BANK: [CheapOp; 1] = [CheapOp::new(3, 1)];

/// Cheap-op bank of the GP-module: 3x3 at dilations 1, 6, 12, 18, then a 1x1 slot.
pub const GP_BANK: [CheapOp; 5] = [
    CheapOp::new(3, 1),
    CheapOp::new(3, 6),
    CheapOp::new(3, 12),
    CheapOp::new(3, 18),
    CheapOp::new(1, 1),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GhostSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Slots per intrinsic map, `s`.
    pub ratio: usize,
    pub primary_kernel: usize,
    pub bank: Vec<CheapOp>,
    pub stride: usize,
}

impl GhostSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        primary_kernel: usize,
        bank: Vec<CheapOp>,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            ratio: bank.len() + 1,
            primary_kernel,
            bank,
            stride: 1,
        }
    }

    /// Ghost module as used in the Ghost U-Net bottlenecks: 1x1 primary, `s = 2`, 3x3 cheap op.
    pub fn ghost(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1, GHOST_BANK.to_vec())
    }

    /// GP-module as used in the GPU-Net bottlenecks: 1x1 primary, `s = 6`, atrous bank.
    pub fn gp(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1, GP_BANK.to_vec())
    }

    pub fn with_primary_kernel(mut self, k: usize) -> Self {
        self.primary_kernel = k;
        self
    }

    /// Number of intrinsic maps `m = ceil(n / s)`.
    pub fn intrinsic(&self) -> usize {
        self.out_channels.div_ceil(self.ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.ratio == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "ghost spec has a zero field: {self:?}"
            )));
        }
        if self.bank.len() + 1 != self.ratio {
            return Err(Error::Config(format!(
                "cheap-op bank has {} entries, ratio {} needs {}",
                self.bank.len(),
                self.ratio,
                self.ratio - 1
            )));
        }
        if self.primary_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "primary kernel {} must be odd to preserve spatial size",
                self.primary_kernel
            )));
        }
        for op in &self.bank {
            if op.kernel == 0 || op.dilation == 0 || (op.dilation * (op.kernel - 1)) % 2 != 0 {
                return Err(Error::Config(format!(
                    "cheap op {op:?} cannot preserve spatial size (dilation * (kernel - 1) must be even)"
                )));
            }
        }
        Ok(())
    }

    pub fn primary_spec(&self) -> ConvSpec {
        ConvSpec::new(
            self.in_channels,
            self.intrinsic(),
            self.primary_kernel,
            self.primary_kernel / 2,
        )
        .with_stride(self.stride)
        .with_bias(false)
    }

    pub fn cheap_spec(&self, slot: usize) -> ConvSpec {
        let op = self.bank[slot];
        ConvSpec::depthwise(self.intrinsic(), op.kernel, op.dilation)
    }
}

#[derive(Debug, Clone)]
pub struct GhostModule<T> {
    spec: GhostSpec,
    pub primary: Conv2d<T>,
    pub cheap: Vec<Conv2d<T>>,
}

impl<T: Scalar> GhostModule<T> {
    pub fn new(spec: GhostSpec) -> Result<Self> {
        spec.validate()?;
        let primary = Conv2d::new(spec.primary_spec())?;
        let cheap = (0..spec.bank.len())
            .map(|j| Conv2d::new(spec.cheap_spec(j)))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            primary,
            cheap,
        })
    }

    pub fn spec(&self) -> &GhostSpec {
        &self.spec
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.primary.init(rng);
        for op in &mut self.cheap {
            op.init(rng);
        }
    }

    /// Intrinsic maps and the assembled output, for callers that need both.
    pub fn forward_parts(
        &mut self,
        x: &Tensor4<T>,
        mode: Mode,
    ) -> Result<(Tensor4<T>, Tensor4<T>)> {
        if x.channels() != self.spec.in_channels {
            return Err(Error::shape(
                "ghost_module",
                format!(
                    "input has {} channels, module expects {}",
                    x.channels(),
                    self.spec.in_channels
                ),
            ));
        }
        let intrinsic = self.primary.forward(x, mode)?;
        let ghosts = self
            .cheap
            .iter_mut()
            .map(|op| op.forward(&intrinsic, mode))
            .collect::<Result<Vec<_>>>()?;
        let out = self.assemble(&intrinsic, &ghosts);
        Ok((intrinsic, out))
    }

    fn assemble(&self, intrinsic: &Tensor4<T>, ghosts: &[Tensor4<T>]) -> Tensor4<T> {
        let [nb, _, h, w] = intrinsic.shape();
        let (s, n) = (self.spec.ratio, self.spec.out_channels);
        let mut out = Tensor4::zeros([nb, n, h, w]);
        for b in 0..nb {
            for o in 0..n {
                let (i, slot) = (o / s, o % s);
                let src = if slot == s - 1 {
                    intrinsic.plane(b, i)
                } else {
                    ghosts[slot].plane(b, i)
                };
                out.plane_mut(b, o).copy_from_slice(src);
            }
        }
        out
    }
}

impl<T: Scalar> Layer<T> for GhostModule<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        Ok(self.forward_parts(x, mode)?.1)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [nb, n, h, w] = grad_y.shape();
        if n != self.spec.out_channels {
            return Err(Error::shape(
                "ghost_module_backward",
                "grad_y channel count differs from module output",
            ));
        }
        let (s, m) = (self.spec.ratio, self.spec.intrinsic());
        let mut g_intrinsic = Tensor4::zeros([nb, m, h, w]);
        let mut g_ghost = vec![Tensor4::zeros([nb, m, h, w]); s - 1];
        for b in 0..nb {
            for o in 0..n {
                let (i, slot) = (o / s, o % s);
                let dst = if slot == s - 1 {
                    g_intrinsic.plane_mut(b, i)
                } else {
                    g_ghost[slot].plane_mut(b, i)
                };
                dst.copy_from_slice(grad_y.plane(b, o));
            }
        }
        for (op, g) in self.cheap.iter_mut().zip(&g_ghost) {
            let back = op.backward(g)?;
            g_intrinsic.add_assign(&back)?;
        }
        self.primary.backward(&g_intrinsic)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.primary.visit_params(&join(prefix, "primary"), f);
        for (j, op) in self.cheap.iter().enumerate() {
            op.visit_params(&join(prefix, &format!("cheap{j}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.primary.visit_params_mut(&join(prefix, "primary"), f);
        for (j, op) in self.cheap.iter_mut().enumerate() {
            op.visit_params_mut(&join(prefix, &format!("cheap{j}")), f);
        }
    }
}
