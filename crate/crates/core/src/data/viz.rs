use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Min-max scale one `(1, 1, h, w)` map to `[0, 1]`. A constant map becomes mid-gray (128/255).
pub fn normalize_map<T: Scalar>(map: &Tensor4<T>) -> Result<Tensor4<f32>> {
    let [b, c, h, w] = map.shape();
    if b != 1 || c != 1 {
        return Err(Error::shape(
            "normalize_map",
            format!("expected one map, got {:?}", map.shape()),
        ));
    }
    let vals: Vec<f64> = map.data().iter().map(|v| v.as_f64()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite("feature map"));
    }
    let data = if hi > lo {
        vals.iter().map(|v| ((v - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![128.0 / 255.0; vals.len()]
    };
    Tensor4::from_vec([1, 1, h, w], data)
}

/// Tile equally sized `(1, 1, h, w)` maps row-major into a near-square grid
/// with a one-pixel black border between tiles.
pub fn contact_sheet(maps: &[Tensor4<f32>]) -> Result<Tensor4<f32>> {
    let first = maps.first().ok_or(Error::Empty("contact sheet"))?;
    let [_, _, h, w] = first.shape();
    if let Some(m) = maps.iter().find(|m| m.shape() != [1, 1, h, w]) {
        return Err(Error::shape(
            "contact_sheet",
            format!("{:?} vs {:?}", m.shape(), first.shape()),
        ));
    }
    let cols = (maps.len() as f64).sqrt().ceil() as usize;
    let rows = maps.len().div_ceil(cols);
    let (sh, sw) = (rows * (h + 1) - 1, cols * (w + 1) - 1);
    let mut sheet = Tensor4::<f32>::zeros([1, 1, sh, sw]);
    for (i, m) in maps.iter().enumerate() {
        let (oy, ox) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
        for y in 0..h {
            let row = &m.data()[y * w..(y + 1) * w];
            sheet.data_mut()[(oy + y) * sw + ox..(oy + y) * sw + ox + w].copy_from_slice(row);
        }
    }
    Ok(sheet)
}
