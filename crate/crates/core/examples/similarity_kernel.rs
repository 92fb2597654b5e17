//! Embeds a few latents, compares them with the similarity kernel and
//! evaluates the contrastive loss of a small batch.
//!
//! `cargo run --release --example similarity_kernel`

use fedmem::embedding::{
    contrastive_loss, similarity_kernel, EmbeddingConfig, EmbeddingSpace, KernelConfig, Latent,
    Origin, SampleRecord,
};
use fedmem::Result;

fn record(id: &str, values: Vec<f64>, aug_seed: u64) -> Result<SampleRecord> {
    Ok(SampleRecord {
        id: id.into(),
        latent: Latent::new(values, 0)?,
        origin: Origin::Train,
        owner: None,
        aug_seed,
    })
}

fn main() -> Result<()> {
    let space = EmbeddingSpace::new(7, EmbeddingConfig::default())?;
    let dim = space.config().latent_dim;
    let kernel = KernelConfig::default();

    let a: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.91).cos()).collect();
    let original = record("a", a.clone(), 1)?;
    let augmented = record("a-aug", a, 2)?;
    let other = record("b", b, 3)?;

    let e = |r: &SampleRecord| space.extract_embedding(r, true);
    let (ea, ea2, eb) = (e(&original)?, e(&augmented)?, e(&other)?);
    println!("kernel(a, augmented a) = {:.4}", similarity_kernel(&ea, &ea2, &kernel)?);
    println!("kernel(a, b)           = {:.4}", similarity_kernel(&ea, &eb, &kernel)?);

    let batch = vec![(ea.clone(), ea2.clone()), (eb.clone(), e(&record("b-aug", other.latent.values.clone(), 4)?)?)];
    println!("contrastive loss of a two-pair batch = {:.4}", contrastive_loss(&batch, &kernel)?);
    Ok(())
}
