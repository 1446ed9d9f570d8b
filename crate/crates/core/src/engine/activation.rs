use super::{Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward<T: Scalar>(grad_y: &Tensor4<T>, saved_x: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad_y.shape() != saved_x.shape() {
        return Err(Error::shape("relu_backward", "grad_y does not match input"));
    }
    let mut gx = grad_y.clone();
    for (g, &x) in gx.data_mut().iter_mut().zip(saved_x.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(gx)
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| {
        // Branch on sign so exp never overflows.
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

pub fn sigmoid_backward<T: Scalar>(
    grad_y: &Tensor4<T>,
    saved_y: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if grad_y.shape() != saved_y.shape() {
        return Err(Error::shape(
            "sigmoid_backward",
            "grad_y does not match output",
        ));
    }
    let mut gx = grad_y.clone();
    for (g, &y) in gx.data_mut().iter_mut().zip(saved_y.data()) {
        *g = *g * y * (T::one() - y);
    }
    Ok(gx)
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    saved_x: Option<Tensor4<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { saved_x: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        self.saved_x = Some(x.clone());
        relu(x).ensure_finite("relu")
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self
            .saved_x
            .take()
            .ok_or_else(|| Error::shape("Relu::backward", "no cached forward input"))?;
        relu_backward(grad_y, &x)
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T> {
    saved_y: Option<Tensor4<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { saved_y: None }
    }
}

impl<T: Scalar> Layer<T> for Sigmoid<T> {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let y = sigmoid(x).ensure_finite("sigmoid")?;
        self.saved_y = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = self
            .saved_y
            .take()
            .ok_or_else(|| Error::shape("Sigmoid::backward", "no cached forward output"))?;
        sigmoid_backward(grad_y, &y)
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_kink() {
        let x = Tensor4::<f32>::from_vec([1, 1, 1, 3], vec![-1.0, 2.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);
        let g = relu_backward(&Tensor4::full([1, 1, 1, 3], 1.0), &x).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_extremes() {
        let x = Tensor4::<f32>::from_vec([1, 1, 1, 3], vec![0.0, 200.0, -200.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.data()[0], 0.5);
        assert_eq!(y.data()[1], 1.0);
        assert!(y.data()[2] >= 0.0 && y.data()[2] < 1e-30);
        assert!(y.is_finite());
    }
}
