//! Write a generated dataset to disk, read it back and resize one image.

use gpunet::data::{
    load_dataset, resize_bilinear, save_dataset, split_dataset, synth_shapes, SplitSpec,
};

fn main() -> gpunet::Result<()> {
    let dir = std::env::temp_dir().join("gpunet_netpbm_example");
    let samples = synth_shapes(10, 32, 48, 6)?;
    save_dataset(&dir, &samples)?;
    let back = load_dataset(&dir)?;
    let worst = samples
        .iter()
        .zip(&back)
        .flat_map(|(a, b)| {
            a.image
                .data()
                .iter()
                .zip(b.image.data())
                .map(|(x, y)| (x - y).abs())
        })
        .fold(0.0f32, f32::max);
    let masks_equal = samples.iter().zip(&back).all(|(a, b)| a.mask == b.mask);
    println!("{} samples in {}", back.len(), dir.display());
    println!(
        "max pixel error {worst:.5} (one 8-bit step is {:.5}), masks equal: {masks_equal}",
        1.0 / 255.0
    );

    let big = resize_bilinear(&back[0].image, 64, 96)?;
    println!("resized {:?} -> {:?}", back[0].image.shape(), big.shape());

    let ids: Vec<String> = back.iter().map(|s| s.id.clone()).collect();
    let splits = split_dataset(&ids, &SplitSpec::default())?;
    println!(
        "train {:?}\nval {:?}\ntest {:?}",
        splits.train, splits.val, splits.test
    );
    Ok(())
}
