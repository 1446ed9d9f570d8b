//! Pixel metrics on a hand-drawn pair of masks, pooled versus per image.

use gpunet::metrics::{accuracy, confusion, f1, jaccard, Averaging, Mask, MetricsRecord};

fn parse(rows: &[&str]) -> Mask {
    let bits = rows
        .iter()
        .flat_map(|r| r.bytes().map(|b| u8::from(b == b'#')))
        .collect();
    Mask::new([1, 1, rows.len(), rows[0].len()], bits).unwrap()
}

fn main() -> gpunet::Result<()> {
    let truth = parse(&["##..", "##..", "....", "...."]);
    let guess = parse(&[".##.", ".##.", "....", "...."]);
    let cc = confusion(&truth, &guess)?;
    println!("tp {} tn {} fp {} fn {}", cc.tp, cc.tn, cc.fp, cc.fn_);
    println!(
        "ac {} f1 {} js {:.4}",
        accuracy(&cc)?,
        f1(&cc)?,
        jaccard(&cc)?
    );

    let perfect = confusion(&truth, &truth)?;
    let pooled = MetricsRecord::aggregate(&[cc, perfect], Averaging::Pooled)?;
    let per_image = MetricsRecord::aggregate(&[cc, perfect], Averaging::PerImage)?;
    println!("pooled    js {:.4}", pooled.js);
    println!("per image js {:.4}", per_image.js);
    println!("{}", pooled.to_json());
    Ok(())
}
