//! Analytic parameter and FLOP accounting.
//!
//! One FLOP is one multiply-accumulate. Biases, batch norm, activations and
//! pooling contribute no FLOPs; batch norm contributes two parameters per channel.

use std::fmt::{self, Write as _};

use num_rational::Ratio;
use serde::Serialize;

use crate::blocks::{Block, BneckSpec, GhostSpec, Shortcut};
use crate::engine::ConvSpec;
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::zoo::{LayerGraph, Node};

pub fn params_conv(spec: &ConvSpec) -> u64 {
    let (c, n, k) = (
        spec.in_channels as u64,
        spec.out_channels as u64,
        spec.kernel as u64,
    );
    c * k * k * n / spec.groups as u64 + if spec.bias { n } else { 0 }
}

pub fn flops_conv(spec: &ConvSpec, out_h: usize, out_w: usize) -> u64 {
    let (c, n, k) = (
        spec.in_channels as u64,
        spec.out_channels as u64,
        spec.kernel as u64,
    );
    c * k * k * n * (out_h * out_w) as u64 / spec.groups as u64
}

/// How ghost/GP modules are costed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostMode {
    /// Sum over the kernels actually instantiated.
    #[default]
    Exact,
    /// Closed form with one cheap-kernel size `d` shared by every slot.
    /// Rejects banks whose kernel sizes differ.
    Formula,
}

fn uniform_cheap_kernel(spec: &GhostSpec) -> Result<u64> {
    match spec.bank.first() {
        None => Ok(0),
        Some(first) if spec.bank.iter().all(|op| op.kernel == first.kernel) => {
            Ok(first.kernel as u64)
        }
        Some(_) => Err(Error::Config(format!(
            "closed-form cost needs a uniform cheap-op kernel, bank is {:?}",
            spec.bank
        ))),
    }
}

pub fn params_gp(spec: &GhostSpec, mode: CostMode) -> Result<u64> {
    spec.validate()?;
    let primary = params_conv(&spec.primary_spec());
    let m = spec.intrinsic() as u64;
    let cheap = match mode {
        CostMode::Exact => (0..spec.bank.len())
            .map(|j| params_conv(&spec.cheap_spec(j)))
            .sum(),
        CostMode::Formula => {
            let d = uniform_cheap_kernel(spec)?;
            (spec.ratio as u64 - 1) * m * d * d
        }
    };
    Ok(primary + cheap)
}

pub fn flops_gp(spec: &GhostSpec, out_h: usize, out_w: usize, mode: CostMode) -> Result<u64> {
    spec.validate()?;
    let primary = flops_conv(&spec.primary_spec(), out_h, out_w);
    let m = spec.intrinsic() as u64;
    let cheap = match mode {
        CostMode::Exact => (0..spec.bank.len())
            .map(|j| flops_conv(&spec.cheap_spec(j), out_h, out_w))
            .sum(),
        CostMode::Formula => {
            let d = uniform_cheap_kernel(spec)?;
            (spec.ratio as u64 - 1) * m * d * d * (out_h * out_w) as u64
        }
    };
    Ok(primary + cheap)
}

/// Parameter compression of a ghost module over an ordinary convolution:
/// `c*s*k^2 / (c*k^2 + (s-1)*d^2)`.
pub fn ratio_params(c: u64, k: u64, d: u64, s: u64) -> Ratio<u64> {
    assert!(
        c > 0 && k > 0 && d > 0 && s > 0,
        "ratio arguments must be positive"
    );
    Ratio::new(c * s * k * k, c * k * k + (s - 1) * d * d)
}

/// FLOP acceleration of a ghost module over an ordinary convolution, with
/// `n = s` output maps on a unit grid; both factors cancel from the ratio.
pub fn ratio_flops(c: u64, k: u64, d: u64, s: u64) -> Ratio<u64> {
    assert!(
        c > 0 && k > 0 && d > 0 && s > 0,
        "ratio arguments must be positive"
    );
    let (n, hw) = (s, 1u64);
    let m = n / s;
    Ratio::new(
        n * hw * c * k * k,
        m * hw * c * k * k + (s - 1) * m * hw * d * d,
    )
}

pub fn ratio_to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn bn_params(channels: usize) -> u64 {
    2 * channels as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub params: u64,
    pub flops: u64,
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Self) {
        self.params += o.params;
        self.flops += o.flops;
    }
}

fn conv_cost(spec: &ConvSpec, h: usize, w: usize) -> Cost {
    Cost {
        params: params_conv(spec),
        flops: flops_conv(spec, h, w),
    }
}

pub fn ghost_module_cost(spec: &GhostSpec, h: usize, w: usize) -> Result<Cost> {
    Ok(Cost {
        params: params_gp(spec, CostMode::Exact)?,
        flops: flops_gp(spec, h, w, CostMode::Exact)?,
    })
}

pub fn bneck_cost(spec: &BneckSpec, h: usize, w: usize) -> Result<Cost> {
    let mut total = ghost_module_cost(&spec.first, h, w)?;
    total += ghost_module_cost(&spec.second, h, w)?;
    total.params += bn_params(spec.first.out_channels) + bn_params(spec.out_channels);
    if spec.shortcut == Shortcut::Projection {
        let (dw, pw) = spec.projection_specs();
        total += conv_cost(&dw, h, w);
        total += conv_cost(&pw, h, w);
        total.params += bn_params(spec.in_channels) + bn_params(spec.out_channels);
    }
    Ok(total)
}

fn block_cost<T: Scalar>(block: &Block<T>, h: usize, w: usize) -> Result<Cost> {
    match block {
        Block::Double(d) => {
            let mut total = Cost::default();
            for spec in d.specs() {
                total += conv_cost(&spec, h, w);
                total.params += bn_params(spec.out_channels);
            }
            Ok(total)
        }
        Block::Bneck(b) => bneck_cost(b.spec(), h, w),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Baseline {
    pub name: String,
    pub params_ratio: f64,
    pub flops_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub input_h: usize,
    pub input_w: usize,
    pub rows: Vec<CostRow>,
    pub params: u64,
    pub flops: u64,
    /// This model's totals divided by the baseline's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
}

impl CostReport {
    pub fn with_baseline(mut self, base: &CostReport) -> Self {
        self.baseline = Some(Baseline {
            name: base.model.clone(),
            params_ratio: self.params as f64 / base.params as f64,
            flops_ratio: self.flops as f64 / base.flops as f64,
        });
        self
    }

    pub fn params_m(&self) -> f64 {
        self.params as f64 / 1e6
    }

    pub fn flops_g(&self) -> f64 {
        self.flops as f64 / 1e9
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(5);
        let mut s = String::new();
        writeln!(s, "{} @ {}x{}", self.model, self.input_h, self.input_w).unwrap();
        writeln!(s, "{:<width$}  {:>14}  {:>18}", "node", "params", "flops").unwrap();
        for r in &self.rows {
            writeln!(s, "{:<width$}  {:>14}  {:>18}", r.name, r.params, r.flops).unwrap();
        }
        writeln!(
            s,
            "{:<width$}  {:>14}  {:>18}",
            "total", self.params, self.flops
        )
        .unwrap();
        write!(
            s,
            "params {:.2} M, flops {:.2} G",
            self.params_m(),
            self.flops_g()
        )
        .unwrap();
        if let Some(b) = &self.baseline {
            write!(
                s,
                "\nvs {}: params x{:.4}, flops x{:.4}",
                b.name, b.params_ratio, b.flops_ratio
            )
            .unwrap();
        }
        s
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Walk the graph's layer specs at the given input size.
pub fn model_cost<T: Scalar>(
    model: &LayerGraph<T>,
    input_h: usize,
    input_w: usize,
) -> Result<CostReport> {
    let (mut h, mut w) = (input_h, input_w);
    let mut rows = Vec::new();
    for (name, node) in model.nodes() {
        let cost = match node {
            Node::Block(b) => block_cost(b, h, w)?,
            Node::MaxPool(_) => {
                h /= 2;
                w /= 2;
                Cost::default()
            }
            Node::Up(u) => {
                (h, w) = u.tconv.output_size(h, w)?;
                let mut c = conv_cost(u.tconv.spec(), h, w);
                c.params += bn_params(u.tconv.spec().out_channels);
                c
            }
            Node::Head(conv) => conv_cost(conv.spec(), h, w),
            Node::Concat { .. } | Node::Sigmoid(_) => continue,
        };
        rows.push(CostRow {
            name: name.to_string(),
            params: cost.params,
            flops: cost.flops,
        });
    }
    Ok(CostReport {
        model: model.config().block_kind.model_name().to_string(),
        input_h,
        input_w,
        params: rows.iter().map(|r| r.params).sum(),
        flops: rows.iter().map(|r| r.flops).sum(),
        rows,
        baseline: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_examples() {
        assert_eq!(
            params_conv(&ConvSpec::new(3, 64, 3, 1).with_bias(false)),
            1728
        );
        assert_eq!(params_conv(&ConvSpec::new(1, 1, 1, 0).with_bias(false)), 1);
        assert_eq!(params_conv(&ConvSpec::depthwise(64, 3, 1)), 576);
        assert_eq!(
            flops_conv(&ConvSpec::new(3, 64, 3, 1), 192, 256),
            84_934_656
        );
        assert_eq!(flops_conv(&ConvSpec::new(1, 1, 1, 0), 1, 1), 1);
    }

    #[test]
    fn ghost_examples() {
        let ghost = GhostSpec::ghost(16, 16).with_primary_kernel(3);
        assert_eq!(params_gp(&ghost, CostMode::Formula).unwrap(), 1224);
        assert_eq!(params_gp(&ghost, CostMode::Exact).unwrap(), 1224);
        let gp = GhostSpec::gp(16, 24).with_primary_kernel(3);
        assert_eq!(params_gp(&gp, CostMode::Exact).unwrap(), 724);
        assert!(params_gp(&gp, CostMode::Formula).is_err());
    }

    #[test]
    fn single_slot_is_plain_conv() {
        let spec = GhostSpec::new(5, 7, 3, vec![]);
        assert_eq!(
            params_gp(&spec, CostMode::Exact).unwrap(),
            params_conv(&spec.primary_spec())
        );
        assert_eq!(
            flops_gp(&spec, 9, 4, CostMode::Formula).unwrap(),
            flops_conv(&spec.primary_spec(), 9, 4)
        );
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio_params(512, 3, 3, 2), Ratio::new(9216, 4617));
        assert_eq!(ratio_params(7, 3, 3, 1), Ratio::from_integer(1));
        let big = ratio_to_f64(ratio_params(1 << 30, 3, 3, 5));
        assert!((big - 5.0).abs() < 1e-6);
    }
}
