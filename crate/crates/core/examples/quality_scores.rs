//! Scores a generated set that partly copies the training set with FID,
//! the quality-novelty score and the FLD-lite, AuthPct and C_T baselines.
//!
//! `cargo run --release --example quality_scores`

use fedmem::config::ExperimentConfig;
use fedmem::embedding::{Origin, SampleRecord};
use fedmem::simnet::{build_context, build_world, evaluate, Extras, ReferenceSet};
use fedmem::Result;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.world.per_class = 120;
    cfg.nodes.trainers = 1;
    let ctx = build_context(&cfg)?;
    let world = build_world(&cfg)?;
    let split = &world.node_splits[0];
    let reference = ReferenceSet::new(&ctx, &world, split.train.iter().copied(), split.test.iter().copied(), &cfg.metrics)?;

    for copied in [0usize, 150, 450] {
        // Fresh samples are the test set shifted to new ids; the rest copy training latents.
        let mut generated: Vec<SampleRecord> = split
            .test
            .iter()
            .map(|i| SampleRecord {
                id: format!("gen-{}", world.records[*i].id),
                origin: Origin::Generated,
                aug_seed: world.records[*i].aug_seed ^ 0x5eed,
                ..world.records[*i].clone()
            })
            .collect();
        for (slot, src) in generated.iter_mut().zip(&split.train).take(copied) {
            slot.latent = world.records[*src].latent.clone();
        }
        let e = evaluate(&ctx, &reference, &generated, &cfg.metrics, Extras::ALL)?;
        let b = e.bundle;
        println!(
            "{copied:>3} copies: FID {:.2}  R_C {:.3}  qn {:.2}  FLD {:.2}%  AuthPct {:.1}%  C_T {:.2}",
            b.fid,
            b.r_c,
            b.qn,
            b.fld.unwrap_or(f64::NAN),
            b.authpct.unwrap_or(f64::NAN),
            b.ct.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
