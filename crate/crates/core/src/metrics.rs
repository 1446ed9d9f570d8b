//! Pixel-level segmentation metrics: accuracy, F1 (Dice) and Jaccard.
//!
//! When ground truth and prediction are both empty, F1 and Jaccard are 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binary mask with the shape of the tensor it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: [usize; 4],
    data: Vec<u8>,
}

impl Mask {
    pub fn new(shape: [usize; 4], data: Vec<u8>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(
                "mask",
                format!("{} values for shape {shape:?}", data.len()),
            ));
        }
        if let Some(&v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinaryTarget(v as f64));
        }
        Ok(Self { shape, data })
    }

    /// Accepts only tensors whose entries are exactly 0 or 1.
    pub fn from_tensor<T: Scalar>(t: &Tensor4<T>) -> Result<Self> {
        let data = t
            .data()
            .iter()
            .map(|&v| {
                let f = v.as_f64();
                if f == 0.0 {
                    Ok(0)
                } else if f == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::NonBinaryTarget(f))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            shape: t.shape(),
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor4<T> {
        let data = self
            .data
            .iter()
            .map(|&v| if v == 1 { T::one() } else { T::zero() })
            .collect();
        Tensor4::from_vec(self.shape, data).expect("mask shape is consistent")
    }

    /// The mask of sample `b` as a `(1, c, h, w)` mask.
    pub fn sample(&self, b: usize) -> Mask {
        let [_, c, h, w] = self.shape;
        let n = c * h * w;
        Mask {
            shape: [1, c, h, w],
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    pub fn complement(&self) -> Mask {
        Mask {
            shape: self.shape,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }
}

/// 1 where `prob >= threshold`, else 0. Probabilities outside `[0, 1]` are rejected.
pub fn binarize<T: Scalar>(prob: &Tensor4<T>, threshold: f64) -> Result<Mask> {
    let data = prob
        .data()
        .iter()
        .map(|&v| {
            let f = v.as_f64();
            if !(0.0..=1.0).contains(&f) {
                Err(Error::OutOfRange(f))
            } else {
                Ok(u8::from(f >= threshold))
            }
        })
        .collect::<Result<_>>()?;
    Ok(Mask {
        shape: prob.shape(),
        data,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self.merge(&rhs);
        self
    }
}

pub fn confusion(gt: &Mask, sr: &Mask) -> Result<ConfusionCounts> {
    if gt.shape != sr.shape {
        return Err(Error::shape(
            "confusion",
            format!("ground truth {:?} vs prediction {:?}", gt.shape, sr.shape),
        ));
    }
    let mut cc = ConfusionCounts::default();
    for (&g, &s) in gt.data.iter().zip(&sr.data) {
        match (g, s) {
            (1, 1) => cc.tp += 1,
            (0, 0) => cc.tn += 1,
            (0, 1) => cc.fp += 1,
            _ => cc.fn_ += 1,
        }
    }
    Ok(cc)
}

fn nonempty(cc: &ConfusionCounts) -> Result<()> {
    if cc.total() == 0 {
        Err(Error::Empty("confusion counts"))
    } else {
        Ok(())
    }
}

pub fn accuracy(cc: &ConfusionCounts) -> Result<f64> {
    nonempty(cc)?;
    Ok((cc.tp + cc.tn) as f64 / cc.total() as f64)
}

/// `2|GT ∩ SR| / (|GT| + |SR|)`.
pub fn f1(cc: &ConfusionCounts) -> Result<f64> {
    nonempty(cc)?;
    let den = 2 * cc.tp + cc.fp + cc.fn_;
    Ok(if den == 0 {
        1.0
    } else {
        (2 * cc.tp) as f64 / den as f64
    })
}

/// `|GT ∩ SR| / |GT ∪ SR|`.
pub fn jaccard(cc: &ConfusionCounts) -> Result<f64> {
    nonempty(cc)?;
    let den = cc.tp + cc.fp + cc.fn_;
    Ok(if den == 0 {
        1.0
    } else {
        cc.tp as f64 / den as f64
    })
}

/// How per-image results combine into one dataset figure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Metrics of the summed confusion counts.
    #[default]
    Pooled,
    /// Mean of each image's metrics.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub ac: f64,
    pub f1: f64,
    pub js: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MetricsRecord {
    pub fn from_counts(cc: &ConfusionCounts) -> Result<Self> {
        Ok(Self {
            ac: accuracy(cc)?,
            f1: f1(cc)?,
            js: jaccard(cc)?,
            tp: cc.tp,
            tn: cc.tn,
            fp: cc.fp,
            fn_: cc.fn_,
        })
    }

    /// Combine per-image counts. Counts in the record are always the pooled totals.
    pub fn aggregate(per_image: &[ConfusionCounts], averaging: Averaging) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Empty("metric aggregation"));
        }
        let pooled = per_image
            .iter()
            .fold(ConfusionCounts::default(), |a, &b| a + b);
        let mut rec = Self::from_counts(&pooled)?;
        if averaging == Averaging::PerImage {
            let n = per_image.len() as f64;
            let (mut ac, mut f, mut js) = (0.0, 0.0, 0.0);
            for cc in per_image {
                ac += accuracy(cc)?;
                f += f1(cc)?;
                js += jaccard(cc)?;
            }
            rec.ac = ac / n;
            rec.f1 = f / n;
            rec.js = js / n;
        }
        Ok(rec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}
