//! Patch extraction for convolution via matrix products.

use crate::tensor::Scalar;

/// Sliding-window geometry of one spatial convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    /// Output spatial extent `floor((len + 2p - d(k-1) - 1) / s) + 1`, or `None` if it is < 1.
    pub fn out_len(
        len: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = len + 2 * padding;
        if padded < span || stride == 0 {
            return None;
        }
        Some((padded - span) / stride + 1)
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    #[inline]
    fn source(&self, o: usize, tap: usize) -> Option<usize> {
        let pos = (o * self.stride + tap * self.dilation) as isize - self.padding as isize;
        (pos >= 0).then_some(pos as usize)
    }
}

/// Unfold `channels` planes of `src` (each `in_h x in_w`) into a
/// `(channels * k * k) x (out_h * out_w)` matrix. Row order is channel-major,
/// then kernel row, then kernel column. Taps outside the input read as zero.
pub fn im2col<T: Scalar>(src: &[T], channels: usize, g: &Geometry, dst: &mut [T]) {
    let k = g.kernel;
    let plane = g.in_h * g.in_w;
    let cols = g.out_h * g.out_w;
    debug_assert_eq!(dst.len(), channels * k * k * cols);
    for c in 0..channels {
        let x = &src[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let out = &mut dst[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let line = &mut out[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.source(oy, ky).filter(|&iy| iy < g.in_h) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let xrow = &x[iy * g.in_w..(iy + 1) * g.in_w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.source(ox, kx) {
                                    Some(ix) if ix < g.in_w => xrow[ix],
                                    _ => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add the patch matrix back onto `dst` planes.
pub fn col2im_add<T: Scalar>(cols_buf: &[T], channels: usize, g: &Geometry, dst: &mut [T]) {
    let k = g.kernel;
    let plane = g.in_h * g.in_w;
    let cols = g.out_h * g.out_w;
    debug_assert_eq!(cols_buf.len(), channels * k * k * cols);
    for c in 0..channels {
        let x = &mut dst[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky).filter(|&iy| iy < g.in_h) else {
                        continue;
                    };
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let xrow = &mut x[iy * g.in_w..(iy + 1) * g.in_w];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kx).filter(|&ix| ix < g.in_w) {
                            xrow[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_len_formula() {
        assert_eq!(Geometry::out_len(8, 3, 1, 1, 1), Some(8));
        assert_eq!(Geometry::out_len(5, 3, 1, 0, 1), Some(3));
        assert_eq!(Geometry::out_len(16, 3, 1, 6, 6), Some(16));
        assert_eq!(Geometry::out_len(7, 2, 2, 0, 1), Some(3));
        assert_eq!(Geometry::out_len(2, 3, 1, 0, 1), None);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for a strided, dilated, padded geometry.
        let g = Geometry {
            kernel: 3,
            stride: 2,
            padding: 2,
            dilation: 2,
            in_h: 7,
            in_w: 6,
            out_h: 0,
            out_w: 0,
        };
        let g = Geometry {
            out_h: Geometry::out_len(7, 3, 2, 2, 2).unwrap(),
            out_w: Geometry::out_len(6, 3, 2, 2, 2).unwrap(),
            ..g
        };
        let ch = 2;
        let x: Vec<f64> = (0..ch * 42).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let ncols = ch * 9 * g.out_h * g.out_w;
        let y: Vec<f64> = (0..ncols).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut cx = vec![0.0; ncols];
        im2col(&x, ch, &g, &mut cx);
        let mut xy = vec![0.0; x.len()];
        col2im_add(&y, ch, &g, &mut xy);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&xy).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
