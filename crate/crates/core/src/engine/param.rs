use rand::Rng;

use crate::tensor::{Scalar, Tensor4};

/// A learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    /// Logical rank used when serializing (4 for kernels, 1 for per-channel vectors).
    rank: usize,
}

impl<T: Scalar> Param<T> {
    pub fn kernel(shape: [usize; 4]) -> Self {
        Self {
            value: Tensor4::zeros(shape),
            grad: Tensor4::zeros(shape),
            rank: 4,
        }
    }

    /// Per-channel vector (bias, BN affine) stored as `(len, 1, 1, 1)`.
    pub fn vector(len: usize, fill: T) -> Self {
        Self {
            value: Tensor4::full([len, 1, 1, 1], fill),
            grad: Tensor4::zeros([len, 1, 1, 1]),
            rank: 1,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Dims as serialized: `[len]` for vectors, the full shape for kernels.
    pub fn dims(&self) -> Vec<usize> {
        logical_dims(&self.value, self.rank)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Kaiming-uniform fan-in initialization for ReLU networks: U(-b, b), b = sqrt(6 / fan_in).
    pub fn kaiming_uniform<R: Rng>(&mut self, fan_in: usize, rng: &mut R) {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        for v in self.value.data_mut() {
            *v = T::lit(rng.gen_range(-bound..bound));
        }
    }
}

pub(crate) fn logical_dims<T: Scalar>(t: &Tensor4<T>, rank: usize) -> Vec<usize> {
    if rank == 1 {
        vec![t.len()]
    } else {
        t.shape().to_vec()
    }
}
