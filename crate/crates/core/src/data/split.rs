use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, validation, test.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            fractions: [0.7, 0.1, 0.2],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config(format!(
                "split fractions {:?} must be non-negative",
                self.fractions
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    /// Floor of each share, then the leftover items go one each to the largest
    /// fractional parts; equal parts favour train, then val, then test.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let quota = self.fractions.map(|f| f * n as f64);
        let mut sizes = quota.map(|q| q.floor() as usize);
        let left = n - sizes.iter().sum::<usize>().min(n);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let (fa, fb) = (quota[a] - quota[a].floor(), quota[b] - quota[b].floor());
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle().take(left) {
            sizes[i] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Seeded shuffle, then contiguous train/val/test slices.
pub fn split_dataset(ids: &[String], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if ids.is_empty() {
        return Err(Error::Empty("dataset ids"));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let [tr, va, _] = spec.sizes(ids.len());
    let test = shuffled.split_off(tr + va);
    let val = shuffled.split_off(tr);
    Ok(Splits {
        train: shuffled,
        val,
        test,
    })
}
