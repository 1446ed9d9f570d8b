use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Sample;
use crate::error::{Error, Result};
use crate::metrics::Mask;
use crate::tensor::Tensor4;

pub const NOISE_SIGMA: f64 = 0.1;
pub const MASK_FRACTION: (f64, f64) = (0.05, 0.6);
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse,
    Rect,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    shape: Shape,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
}

impl Placed {
    fn random<R: Rng>(rng: &mut R, h: usize, w: usize) -> Self {
        let side = h.min(w) as f64;
        let angle = rng.gen_range(0.0..PI);
        Self {
            shape: if rng.gen_bool(0.5) {
                Shape::Ellipse
            } else {
                Shape::Rect
            },
            cx: rng.gen_range(0.15..0.85) * w as f64,
            cy: rng.gen_range(0.15..0.85) * h as f64,
            rx: rng.gen_range(0.08..0.3) * side,
            ry: rng.gen_range(0.08..0.3) * side,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.rx;
        let v = (-dx * self.sin + dy * self.cos) / self.ry;
        match self.shape {
            Shape::Ellipse => u * u + v * v <= 1.0,
            Shape::Rect => u.abs() <= 1.0 && v.abs() <= 1.0,
        }
    }
}

// Fraction of supersamples inside any shape, per pixel.
fn coverage(shapes: &[Placed], h: usize, w: usize) -> Vec<f64> {
    let n = SUPERSAMPLE as f64;
    let mut alpha = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / n;
                    let py = y as f64 + (sy as f64 + 0.5) / n;
                    hits += usize::from(shapes.iter().any(|s| s.contains(px, py)));
                }
            }
            alpha[y * w + x] = hits as f64 / (n * n);
        }
    }
    alpha
}

fn one_sample(rng: &mut ChaCha8Rng, h: usize, w: usize, id: String) -> Sample {
    let (alpha, mask) = loop {
        let count = rng.gen_range(1..=3);
        let shapes: Vec<Placed> = (0..count).map(|_| Placed::random(rng, h, w)).collect();
        let alpha = coverage(&shapes, h, w);
        let mask: Vec<u8> = alpha.iter().map(|&a| u8::from(a >= 0.5)).collect();
        let frac = mask.iter().map(|&m| m as usize).sum::<usize>() as f64 / (h * w) as f64;
        if (MASK_FRACTION.0..=MASK_FRACTION.1).contains(&frac) {
            break (alpha, mask);
        }
    };

    let (fx, fy) = (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3));
    let phase = rng.gen_range(0.0..2.0 * PI);
    let background = rng.gen_range(0.2..0.35);
    let foreground = rng.gen_range(0.65..0.85);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let a = alpha[y * w + x];
            let texture = background + 0.08 * (fx * x as f64 + fy * y as f64 + phase).sin();
            let v = texture * (1.0 - a) + foreground * a + noise.sample(rng);
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Sample {
        image: Tensor4::from_vec([1, 1, h, w], pixels).expect("sized"),
        mask: Mask::new([1, 1, h, w], mask).expect("binary"),
        id,
    }
}

/// Grayscale images of one to three anti-aliased ellipses or rectangles on a
/// textured background with Gaussian noise. Each mask covers 5% to 60% of its image.
pub fn synth_shapes(count: usize, h: usize, w: usize, seed: u64) -> Result<Vec<Sample>> {
    if h == 0 || w == 0 || !h.is_multiple_of(16) || !w.is_multiple_of(16) {
        return Err(Error::Config(format!(
            "synthetic size {h}x{w} must be a positive multiple of 16"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|i| one_sample(&mut rng, h, w, format!("synth{i:05}")))
        .collect())
}
