//! Plants copies of training samples in a generated set, finds them with
//! the KNN + verifier pipeline, and derives the training samples to leave
//! out next round.
//!
//! `cargo run --release --example detect_memorization`

use fedmem::config::ExperimentConfig;
use fedmem::embedding::{Latent, Origin, SampleRecord};
use fedmem::memdetect::{detect, DetectionConfig, ExclusionTracker};
use fedmem::simnet::{build_context, build_world};
use fedmem::Result;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.world.per_class = 80;
    cfg.world.duplicate_rate = 0.0;
    cfg.nodes.trainers = 1;
    let ctx = build_context(&cfg)?;
    let world = build_world(&cfg)?;
    let train_records: Vec<&SampleRecord> = world.node_splits[0]
        .train
        .iter()
        .map(|i| &world.records[*i])
        .collect();
    let train = ctx.embed_all(train_records.iter().copied())?;

    // 40 copies of training samples among 360 test samples relabelled as generated.
    let mut generated: Vec<SampleRecord> = world.node_splits[0]
        .test
        .iter()
        .map(|i| SampleRecord {
            origin: Origin::Generated,
            ..world.records[*i].clone()
        })
        .collect();
    for (k, src) in train_records.iter().step_by(10).take(40).enumerate() {
        generated.push(SampleRecord {
            id: format!("copy-{k:02}"),
            latent: Latent::new(src.latent.values.clone(), src.class_id())?,
            origin: Origin::Generated,
            owner: None,
            aug_seed: 9000 + k as u64,
        });
    }
    let generated = ctx.embed_all(&generated)?;

    let report = detect(&ctx.space, &ctx.verifier, &train, &generated, &DetectionConfig::default())?;
    println!(
        "{} candidates checked, {} confirmed; R_C = {:.3}, V_A = {:.3}, V_C = {:.3}",
        report.checked.len(),
        report.confirmed.len(),
        report.r_c,
        report.v_a,
        report.v_c
    );
    for p in report.confirmed.iter().take(5) {
        println!("  {} copies {} (score {:.3})", p.pair.generated_id, p.pair.train_id, p.score);
    }

    let mut tracker = ExclusionTracker::new(train.iter().map(|s| s.id.as_str()));
    tracker.record(&report, cfg.metrics.percentile)?;
    println!(
        "excluded {} of {} training samples ({:.1}%)",
        tracker.excluded.len(),
        train.len(),
        100.0 * tracker.excluded_fraction()
    );
    Ok(())
}
