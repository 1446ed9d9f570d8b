//! Tensor primitives with hand-written forward and backward passes.

mod activation;
mod conv;
pub mod gemm;
pub mod gradcheck;
pub mod im2col;
mod loss;
mod norm;
pub(crate) mod param;
mod pool;
mod transposed;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, Relu, Sigmoid};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvSpec};
pub use loss::{bce_loss, bce_loss_backward, BCE_EPS};
pub use norm::{
    batchnorm2d_backward, batchnorm2d_forward, BatchNorm2d, BnCache, RunningStats, BN_EPS,
    BN_MOMENTUM,
};
pub use param::Param;
pub use pool::{maxpool2d, maxpool2d_backward, MaxPool2d, PoolIndices};
pub use transposed::{transposed_conv2d_backward, transposed_conv2d_forward, TransposedConv2d};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

/// Whether batch normalization uses batch statistics (and updates its running averages).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable layer that caches what its backward pass needs.
///
/// `backward` must be called after `forward` and consumes the cached state;
/// parameter gradients are accumulated, never overwritten.
pub trait Layer<T: Scalar> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>>;

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>>;

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    /// Non-learnable state that still belongs in a checkpoint (BN running statistics).
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor4<T>)) {}

    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor4<T>)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }
}

/// `prefix.name`, or just `name` at the root.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
