//! Calibrates verifier weights for one embedding space and scores a copy
//! pair against an unrelated pair.
//!
//! `cargo run --release --example verify_pair`

use fedmem::embedding::{EmbeddingConfig, EmbeddingSpace, Latent, Origin, SampleRecord};
use fedmem::verify::{calibrate_default_weights, verify_pair};
use fedmem::Result;

fn main() -> Result<()> {
    let world_seed = 11;
    let space = EmbeddingSpace::new(world_seed, EmbeddingConfig::default())?;
    let weights = calibrate_default_weights(world_seed)?;
    let dim = space.config().latent_dim;

    let make = |id: &str, phase: f64, aug_seed: u64| -> Result<SampleRecord> {
        let values = (0..dim).map(|i| 3.0 * (i as f64 + phase).sin()).collect();
        Ok(SampleRecord {
            id: id.into(),
            latent: Latent::new(values, 0)?,
            origin: Origin::Generated,
            owner: None,
            aug_seed,
        })
    };
    let original = make("original", 0.0, 1)?;
    let copy = make("copy", 0.0, 2)?;
    let unrelated = make("unrelated", 1.7, 3)?;

    println!("original vs copy:      {:.4}", verify_pair(&space, &original, &copy, &weights)?);
    println!("original vs unrelated: {:.4}", verify_pair(&space, &original, &unrelated, &weights)?);
    println!("symmetric: {}", verify_pair(&space, &copy, &original, &weights)? == verify_pair(&space, &original, &copy, &weights)?);
    Ok(())
}
