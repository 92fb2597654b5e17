//! Writes train, test and generated embedding files and scores them the
//! way `fedmem score` does.
//!
//! `cargo run --release --example score_embedding_files`

use fedmem::cli::{cmd_score, ScoreOptions};
use fedmem::config::ExperimentConfig;
use fedmem::embedding::EmbeddedSample;
use fedmem::io;
use fedmem::simnet::{build_context, build_world};
use fedmem::Result;

fn main() -> Result<()> {
    let mut config = ExperimentConfig::default();
    config.world.per_class = 60;
    config.nodes.trainers = 1;
    let ctx = build_context(&config)?;
    let world = build_world(&config)?;
    let split = &world.node_splits[0];
    let embed = |idx: &[usize]| ctx.embed_all(idx.iter().map(|i| &world.records[*i]));
    let train = embed(&split.train)?;
    let test = embed(&split.test)?;
    // Half of the generated set is the test set, half relabelled training samples.
    let mut generated: Vec<EmbeddedSample> = test.iter().step_by(2).cloned().collect();
    generated.extend(train.iter().step_by(2).map(|s| EmbeddedSample {
        id: format!("gen-{}", s.id),
        ..s.clone()
    }));

    let dir = std::env::temp_dir().join("fedmem-score-example");
    std::fs::create_dir_all(&dir)?;
    let path = |name: &str| dir.join(name);
    io::save_embeddings(&path("train.csv"), &train)?;
    io::save_embeddings(&path("test.csv"), &test)?;
    io::save_embeddings(&path("generated.csv"), &generated)?;

    let (out, _report) = cmd_score(&ScoreOptions {
        train: path("train.csv"),
        test: path("test.csv"),
        generated: path("generated.csv"),
        config,
        baselines: true,
        pairs_out: Some(path("pairs.csv")),
    })?;
    println!("{}", serde_json::to_string_pretty(&out)?);
    println!("confirmed pairs written to {}", path("pairs.csv").display());
    Ok(())
}
