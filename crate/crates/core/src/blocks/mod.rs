//! Network building blocks: the ordinary double convolution, the ghost and GP
//! modules, and the residual bottleneck that stacks two of them.

mod bottleneck;
mod double_conv;
mod ghost;

pub use bottleneck::{BneckSpec, Bottleneck, Shortcut};
pub use double_conv::DoubleConv;
pub use ghost::{CheapOp, GhostModule, GhostSpec, GHOST_BANK, GP_BANK};

use rand::Rng;

use crate::engine::{Layer, Mode, Param};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

/// Which block fills each U-Net level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Two 3x3 conv/BN/ReLU stages (U-Net).
    Ordinary,
    /// Ghost-module bottleneck (Ghost U-Net).
    Ghost,
    /// GP-module bottleneck (GPU-Net).
    Gp,
}

impl BlockKind {
    pub const ALL: [BlockKind; 3] = [BlockKind::Ordinary, BlockKind::Ghost, BlockKind::Gp];

    pub fn tag(self) -> u32 {
        match self {
            BlockKind::Ordinary => 0,
            BlockKind::Ghost => 1,
            BlockKind::Gp => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Model name used on the command line.
    pub fn model_name(self) -> &'static str {
        match self {
            BlockKind::Ordinary => "unet",
            BlockKind::Ghost => "ghost-unet",
            BlockKind::Gp => "gpu-net",
        }
    }

    pub fn from_model_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.model_name() == name)
    }
}

#[derive(Debug, Clone)]
pub enum Block<T> {
    Double(DoubleConv<T>),
    Bneck(Bottleneck<T>),
}

impl<T: Scalar> Block<T> {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(match kind {
            BlockKind::Ordinary => Block::Double(DoubleConv::new(in_channels, out_channels)?),
            BlockKind::Ghost => Block::Bneck(Bottleneck::new(BneckSpec::ghost(
                in_channels,
                out_channels,
            ))?),
            BlockKind::Gp => {
                Block::Bneck(Bottleneck::new(BneckSpec::gp(in_channels, out_channels))?)
            }
        })
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        match self {
            Block::Double(b) => b.init(rng),
            Block::Bneck(b) => b.init(rng),
        }
    }

    fn inner(&self) -> &dyn Layer<T> {
        match self {
            Block::Double(b) => b,
            Block::Bneck(b) => b,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Layer<T> {
        match self {
            Block::Double(b) => b,
            Block::Bneck(b) => b,
        }
    }
}

impl<T: Scalar> Layer<T> for Block<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.inner_mut().forward(x, mode)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.inner_mut().backward(grad_y)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.inner().visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.inner_mut().visit_params_mut(prefix, f)
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>)) {
        self.inner().visit_buffers(prefix, f)
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {
        self.inner_mut().visit_buffers_mut(prefix, f)
    }
}
