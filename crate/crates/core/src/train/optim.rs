use serde::{Deserialize, Serialize};

use crate::engine::Layer;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd
    }
}

/// Optimizer state, one slot per parameter tensor in visit order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the accumulated gradients. Gradients are left in place.
    pub fn step<T: Scalar, L: Layer<T> + ?Sized>(&mut self, model: &mut L) -> Result<()> {
        let mut bad = None;
        model.visit_params("", &mut |name, p| {
            if bad.is_none() && !p.grad.is_finite() {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient(name));
        }

        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => model.visit_params_mut("", &mut |_, p| {
                for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                    *w = T::lit(w.as_f64() - lr * g.as_f64());
                }
            }),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                let (ms, vs) = (&mut self.m, &mut self.v);
                let mut k = 0;
                model.visit_params_mut("", &mut |_, p| {
                    if ms.len() == k {
                        ms.push(vec![0.0; p.len()]);
                        vs.push(vec![0.0; p.len()]);
                    }
                    let (m, v) = (&mut ms[k], &mut vs[k]);
                    for (i, (w, g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate()
                    {
                        let g = g.as_f64();
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                        *w = T::lit(w.as_f64() - update);
                    }
                    k += 1;
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Conv2d, ConvSpec};

    fn scalar_layer(w: f64, g: f64) -> Conv2d<f64> {
        let mut c = Conv2d::new(ConvSpec::new(1, 1, 1, 0).with_bias(false)).unwrap();
        c.weight.value.data_mut()[0] = w;
        c.weight.grad.data_mut()[0] = g;
        c
    }

    #[test]
    fn sgd_single_step() {
        let mut l = scalar_layer(0.0, 1.0);
        Optimizer::new(OptimizerKind::Sgd, 0.1)
            .step(&mut l)
            .unwrap();
        assert_eq!(l.weight.value.data()[0], -0.1);
    }

    #[test]
    fn zero_grad_is_a_fixed_point() {
        for kind in [OptimizerKind::default(), OptimizerKind::Sgd] {
            let mut l = scalar_layer(0.7, 0.0);
            Optimizer::new(kind, 0.01).step(&mut l).unwrap();
            assert_eq!(l.weight.value.data()[0], 0.7);
        }
    }

    #[test]
    fn first_adam_step_is_lr_sized() {
        for g in [1e-4, 1.0, 1e4, -3.0] {
            let mut l = scalar_layer(0.0, g);
            Optimizer::new(OptimizerKind::default(), 1e-3)
                .step(&mut l)
                .unwrap();
            let moved = l.weight.value.data()[0];
            assert!(
                (moved.abs() - 1e-3).abs() < 1e-3 * 1e-3,
                "g={g} moved {moved}"
            );
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut l = scalar_layer(0.0, f64::NAN);
        let err = Optimizer::new(OptimizerKind::Sgd, 0.1)
            .step(&mut l)
            .unwrap_err();
        assert!(
            matches!(err, Error::NonFiniteGradient(ref n) if n == "weight"),
            "{err}"
        );
        assert_eq!(l.weight.value.data()[0], 0.0);
    }
}
