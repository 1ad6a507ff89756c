//! Generates a synthetic split, writes it in the native format and reads it back.

use qtart::data::{generate_synthetic, load_dataset, save_dataset, NormalizationStats, SyntheticSpec};

fn main() -> qtart::Result<()> {
    let spec = SyntheticSpec::small(500, 5, 3);
    let train = generate_synthetic(&spec)?;
    let test = generate_synthetic(&spec.test_split(200))?;
    let stats = NormalizationStats::compute(&train);
    println!("train {} samples, shape {:?}, classes {:?}", train.len(), train.image_shape(), train.class_counts());
    println!("test  {} samples", test.len());
    println!("channel mean {:?} std {:?}", stats.mean, stats.std);
    println!("planted outliers: {:?}", train.outliers().map(|o| o.len()));

    let dir = std::env::temp_dir().join("qtart-synthetic-example");
    std::fs::create_dir_all(&dir).map_err(|e| qtart::Error::io(&dir, e))?;
    let path = dir.join("train.qtds");
    save_dataset(&train, &path)?;
    let back = load_dataset(&path)?;
    println!("round trip through {}: identical = {}", path.display(), back.images() == train.images());
    Ok(())
}
