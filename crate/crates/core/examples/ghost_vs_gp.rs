//! How much a ghost module saves over a plain convolution, and how the GP bank
//! spreads its cheap maps across dilations.

use gpunet::blocks::{GhostModule, GhostSpec};
use gpunet::cost::{ghost_module_cost, params_conv, ratio_params, ratio_to_f64};
use gpunet::engine::{ConvSpec, Mode};
use gpunet::Tensor4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpunet::Result<()> {
    println!("compression r = cs(k^2) / (c k^2 + (s-1) d^2) with k = d = 3");
    println!(
        "{:>6} {}",
        "c",
        (2..=8)
            .map(|s| format!("{:>7}", format!("s={s}")))
            .collect::<String>()
    );
    for c in [16u64, 64, 256, 1024] {
        let row: String = (2..=8)
            .map(|s| format!("{:>7.3}", ratio_to_f64(ratio_params(c, 3, 3, s))))
            .collect();
        println!("{c:>6} {row}");
    }

    let (c, n, h, w) = (32, 64, 48, 48);
    let conv = params_conv(&ConvSpec::new(c, n, 3, 1).with_bias(false));
    println!("\n{c} -> {n} channels at {h}x{w}");
    println!("  plain conv   {conv:>7} params");
    for (label, spec) in [
        ("ghost s=2", GhostSpec::ghost(c, n)),
        ("gp s=4", GhostSpec::gp(c, n)),
    ] {
        let cost = ghost_module_cost(&spec, h, w)?;
        let dil: Vec<usize> = spec.bank.iter().map(|op| op.dilation).collect();
        println!(
            "  {label:<12} {:>7} params {:>10} flops  cheap dilations {dil:?}",
            cost.params, cost.flops
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut gp = GhostModule::<f32>::new(GhostSpec::gp(c, n))?;
    gp.init(&mut rng);
    let x = Tensor4::from_fn([1, c, h, w], |[_, ch, y, x]| {
        ((ch * 7 + y * 3 + x) % 11) as f32 / 11.0
    });
    let (intrinsic, out) = gp.forward_parts(&x, Mode::Eval)?;
    println!(
        "  gp forward: {:?} intrinsic -> {:?} output",
        intrinsic.shape(),
        out.shape()
    );
    Ok(())
}
