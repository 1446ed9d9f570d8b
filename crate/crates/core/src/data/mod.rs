//! Image codecs, resizing, dataset splits and on-disk datasets.
//!
//! A dataset directory holds `manifest.txt` (one id per line),
//! `images/<id>.pgm` or `images/<id>.ppm`, and `masks/<id>.pgm`.

mod netpbm;
mod resize;
mod split;
mod synth;
mod viz;

use std::fs;
use std::path::Path;

pub use netpbm::{decode_netpbm, encode_netpbm, load_image, load_mask, save_image, save_mask};
pub use resize::{resize_bilinear, resize_mask};
pub use split::{split_dataset, SplitSpec, Splits};
pub use synth::{synth_shapes, MASK_FRACTION, NOISE_SIGMA};
pub use viz::{contact_sheet, normalize_map};

use crate::error::{Error, Result};
use crate::metrics::Mask;
use crate::tensor::{Scalar, Tensor4};

pub const MANIFEST: &str = "manifest.txt";

/// One image with its ground-truth mask; both are `(1, ·, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor4<f32>,
    pub mask: Mask,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor4<f32>, mask: Mask, id: impl Into<String>) -> Result<Self> {
        let [ib, _, ih, iw] = image.shape();
        let [mb, mc, mh, mw] = mask.shape();
        if ib != 1 || mb != 1 || mc != 1 || (ih, iw) != (mh, mw) {
            return Err(Error::shape(
                "sample",
                format!(
                    "image {:?} and mask {:?} disagree",
                    image.shape(),
                    mask.shape()
                ),
            ));
        }
        Ok(Self {
            image,
            mask,
            id: id.into(),
        })
    }
}

/// Stack samples into an image batch and a target batch.
pub fn stack_batch<T: Scalar>(samples: &[&Sample]) -> Result<(Tensor4<T>, Tensor4<T>)> {
    if samples.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let images: Vec<Tensor4<T>> = samples.iter().map(|s| s.image.cast()).collect();
    let masks: Vec<Tensor4<T>> = samples.iter().map(|s| s.mask.to_tensor()).collect();
    Ok((
        Tensor4::stack(&images.iter().collect::<Vec<_>>())?,
        Tensor4::stack(&masks.iter().collect::<Vec<_>>())?,
    ))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let ids: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if ids.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    Ok(ids)
}

pub fn load_sample(dir: &Path, id: &str) -> Result<Sample> {
    let pgm = dir.join("images").join(format!("{id}.pgm"));
    let image_path = if pgm.exists() {
        pgm
    } else {
        dir.join("images").join(format!("{id}.ppm"))
    };
    let image = load_image(&image_path)?;
    let mask = load_mask(&dir.join("masks").join(format!("{id}.pgm")))?;
    Sample::new(image, mask, id)
}

/// Load the samples named in the manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    read_manifest(dir)?
        .iter()
        .map(|id| load_sample(dir, id))
        .collect()
}

pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = String::new();
    for s in samples {
        let ext = if s.image.channels() == 3 {
            "ppm"
        } else {
            "pgm"
        };
        save_image(
            &s.image,
            &dir.join("images").join(format!("{}.{ext}", s.id)),
        )?;
        save_mask(&s.mask, &dir.join("masks").join(format!("{}.pgm", s.id)))?;
        manifest.push_str(&s.id);
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}
