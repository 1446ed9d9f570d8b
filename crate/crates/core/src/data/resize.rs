use crate::error::{Error, Result};
use crate::metrics::{binarize, Mask};
use crate::tensor::{Scalar, Tensor4};

// Source coordinate under half-pixel centers, clamped to the edge samples.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers (not corner-aligned).
pub fn resize_bilinear<T: Scalar>(
    t: &Tensor4<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor4<T>> {
    let [b, c, h, w] = t.shape();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            "resize",
            format!("{h}x{w} -> {out_h}x{out_w}"),
        ));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(t.clone());
    }
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = Tensor4::zeros([b, c, out_h, out_w]);
    for bi in 0..b {
        for ci in 0..c {
            let src = t.plane(bi, ci);
            let dst = out.plane_mut(bi, ci);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let v = |y: usize, x: usize| src[y * w + x].as_f64();
                    let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                    let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                    dst[oy * out_w + ox] = T::lit(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Ok(out)
}

/// Resize a mask bilinearly and re-threshold at 0.5.
pub fn resize_mask(mask: &Mask, out_h: usize, out_w: usize) -> Result<Mask> {
    let t = resize_bilinear(&mask.to_tensor::<f64>(), out_h, out_w)?;
    binarize(&t.map(|v| v.clamp(0.0, 1.0)), 0.5)
}
