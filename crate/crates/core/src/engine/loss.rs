use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Probability clamp applied before taking logs.
pub const BCE_EPS: f64 = 1e-7;

fn check<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "bce_loss",
            format!("pred {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Empty("bce_loss"));
    }
    if let Some(&t) = target
        .data()
        .iter()
        .find(|&&t| t != T::zero() && t != T::one())
    {
        return Err(Error::NonBinaryTarget(t.as_f64()));
    }
    Ok(())
}

#[inline]
fn clamp<T: Scalar>(p: T) -> T {
    let eps = T::lit(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Mean of `-[t ln p + (1 - t) ln(1 - p)]` with `p` clamped to `[eps, 1 - eps]`.
pub fn bce_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<T> {
    check(pred, target)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp(p).as_f64();
            if t == T::one() {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    let loss = T::lit(total / pred.len() as f64);
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("bce_loss"))
    }
}

/// `dL/dp = (p - t) / (p (1 - p)) / N`, and 0 where the clamp is active.
pub fn bce_loss_backward<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<Tensor4<T>> {
    check(pred, target)?;
    let inv_n = T::one() / T::lit(pred.len() as f64);
    let mut g = pred.clone();
    for (gv, &t) in g.data_mut().iter_mut().zip(target.data()) {
        let p = *gv;
        *gv = if clamp(p) != p {
            T::zero()
        } else {
            (p - t) / (p * (T::one() - p)) * inv_n
        };
    }
    g.ensure_finite("bce_loss_backward")
}
