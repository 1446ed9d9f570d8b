use super::{Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Flat input offset of each pooled maximum, one per output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 4],
    argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Ties go to the first element in row-major order.
pub fn maxpool2d<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, PoolIndices)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial dims {h}x{w} must be even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let xd = x.data();
    let yd = y.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                yd[o] = xd[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    Ok((
        y,
        PoolIndices {
            input_shape: x.shape(),
            argmax,
        },
    ))
}

/// Routes each output gradient to its stored argmax position.
pub fn maxpool2d_backward<T: Scalar>(grad_y: &Tensor4<T>, idx: &PoolIndices) -> Result<Tensor4<T>> {
    if grad_y.len() != idx.argmax.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            "grad_y does not match the pooled output",
        ));
    }
    let mut gx = Tensor4::zeros(idx.input_shape);
    let gxd = gx.data_mut();
    for (&i, &g) in idx.argmax.iter().zip(grad_y.data()) {
        gxd[i] += g;
    }
    Ok(gx)
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    indices: Option<PoolIndices>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: &Tensor4<T>, _mode: Mode) -> Result<Tensor4<T>> {
        let (y, idx) = maxpool2d(x)?;
        self.indices = Some(idx);
        Ok(y)
    }

    fn backward(&mut self, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let idx = self
            .indices
            .take()
            .ok_or_else(|| Error::shape("MaxPool2d::backward", "no cached forward indices"))?;
        maxpool2d_backward(grad_y, &idx)
    }

    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param<T>)) {}

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param<T>)) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_max() {
        let x = Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_window_routes_to_first_element() {
        let x = Tensor4::<f32>::full([1, 1, 2, 4], 3.0);
        let (_, idx) = maxpool2d(&x).unwrap();
        let gy = Tensor4::from_vec([1, 1, 1, 2], vec![1.5, -2.0]).unwrap();
        let gx = maxpool2d_backward(&gy, &idx).unwrap();
        assert_eq!(gx.data(), &[1.5, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_window_max_oracle() {
        let x = Tensor4::<f64>::from_fn([2, 3, 6, 6], |[b, c, y, x]| {
            (((b * 131 + c * 71 + y * 13 + x * 7) * 2654435761usize) % 1000) as f64 / 10.0
        });
        let (y, _) = maxpool2d(&x).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                for oy in 0..3 {
                    for ox in 0..3 {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(x.get([b, c, 2 * oy + dy, 2 * ox + dx]));
                            }
                        }
                        assert_eq!(y.get([b, c, oy, ox]), m);
                    }
                }
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(maxpool2d(&Tensor4::<f32>::zeros([1, 1, 3, 4])).is_err());
    }
}
