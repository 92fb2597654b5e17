use serde::{Deserialize, Serialize};

use super::world::WorldDataset;
use crate::config::{ExperimentConfig, MetricsSection};
use crate::embedding::{EmbeddedSample, Embedding, EmbeddingSpace, SampleRecord};
use crate::error::Result;
use crate::ledger::{Cid, SimTime};
use crate::memdetect::{
    aggregate_report, confirm_matches, intra_class_thresholds, knn_candidates, pool_samples,
    ClassThresholds, MemorizationReport, PairScorer,
};
use crate::metrics::{
    authpct, blended_fld_fid, ct_score, default_k_cells, fld_lite, scott_bandwidth, FidReference,
    GaussianSummary, ScoreBundle,
};
use crate::provenance::Objective;
use crate::verify::PooledFeatures;
use crate::verify::{calibrate_weights, CalibrationConfig, Verifier, VerifierWeights};
use std::collections::HashMap;

/// Fixed parts of an experiment shared by every evaluation: the embedding
/// space and the verifier.
#[derive(Clone, Debug)]
pub struct EvalContext {
    pub space: EmbeddingSpace,
    pub verifier: Verifier,
}

impl EvalContext {
    pub fn new(cfg: &ExperimentConfig, world_seed: u64) -> Result<Self> {
        let space = EmbeddingSpace::new(world_seed, cfg.embedding.clone())?;
        let weights = match &cfg.verifier.weights {
            Some(path) => VerifierWeights::load(path)?,
            None => {
                let cal = CalibrationConfig {
                    windows: cfg.verifier.windows,
                    gem_p: cfg.verifier.gem_p,
                    center_sd: cfg.world.center_sd,
                    sample_sd: cfg.world.sample_sd,
                    ..CalibrationConfig::default()
                };
                calibrate_weights(&space, &cal)?.0
            }
        };
        Ok(EvalContext {
            space,
            verifier: Verifier::new(weights)?,
        })
    }

    pub fn embed(&self, record: &SampleRecord) -> Result<EmbeddedSample> {
        Ok(EmbeddedSample {
            id: record.id.clone(),
            class_id: record.class_id(),
            embedding: self.space.extract_embedding(record, true)?,
        })
    }

    pub fn embed_all<'a>(
        &self,
        records: impl IntoIterator<Item = &'a SampleRecord>,
    ) -> Result<Vec<EmbeddedSample>> {
        records.into_iter().map(|r| self.embed(r)).collect()
    }
}

/// Which optional scores to compute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Extras {
    pub fld: bool,
    pub authpct: bool,
    pub ct: bool,
}

impl Extras {
    pub const ALL: Extras = Extras {
        fld: true,
        authpct: true,
        ct: true,
    };

    pub fn for_objective(objective: Objective) -> Self {
        Extras {
            fld: objective == Objective::FldFid,
            ..Extras::default()
        }
    }
}

/// Train and test embeddings with everything derivable from them alone.
#[derive(Clone, Debug)]
pub struct ReferenceSet {
    pub train: Vec<EmbeddedSample>,
    pub test: Vec<EmbeddedSample>,
    pub thresholds: ClassThresholds,
    pub fid_reference: FidReference,
    pub bandwidth: f64,
    pub k_cells: usize,
    pub pooled_train: HashMap<String, PooledFeatures>,
}

impl ReferenceSet {
    pub fn new(
        ctx: &EvalContext,
        world: &WorldDataset,
        train: impl IntoIterator<Item = usize>,
        test: impl IntoIterator<Item = usize>,
        metrics: &MetricsSection,
    ) -> Result<Self> {
        let train = ctx.embed_all(train.into_iter().map(|i| &world.records[i]))?;
        let test = ctx.embed_all(test.into_iter().map(|i| &world.records[i]))?;
        Self::from_embeddings(ctx, train, test, metrics)
    }

    pub fn from_embeddings(
        ctx: &EvalContext,
        train: Vec<EmbeddedSample>,
        test: Vec<EmbeddedSample>,
        metrics: &MetricsSection,
    ) -> Result<Self> {
        let thresholds = intra_class_thresholds(&train, metrics.stdev)?;
        let test_emb: Vec<Embedding> = test.iter().map(|s| s.embedding.clone()).collect();
        let fid_reference = FidReference::from_samples(&test_emb)?;
        let train_emb: Vec<Embedding> = train.iter().map(|s| s.embedding.clone()).collect();
        let bandwidth = match metrics.bandwidth {
            Some(b) => b,
            None => scott_bandwidth(&train_emb)?,
        };
        let k_cells = metrics
            .k_cells
            .unwrap_or_else(|| default_k_cells(train.len()));
        let pooled_train = pool_samples(&ctx.space, &ctx.verifier, &train)?;
        Ok(ReferenceSet {
            pooled_train,
            train,
            test,
            thresholds,
            fid_reference,
            bandwidth,
            k_cells,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub bundle: ScoreBundle,
    pub report: MemorizationReport,
}

impl Evaluation {
    /// Objective value; lower is better.
    pub fn objective(&self, objective: Objective) -> f64 {
        match objective {
            Objective::FldFid => blended_fld_fid(self.bundle.fid, self.bundle.fld.unwrap_or(0.0)),
            Objective::Qn | Objective::QnDedup => self.bundle.qn,
        }
    }
}

/// Scores a generated set against a reference set.
pub fn evaluate(
    ctx: &EvalContext,
    reference: &ReferenceSet,
    generated: &[SampleRecord],
    metrics: &MetricsSection,
    extras: Extras,
) -> Result<Evaluation> {
    let gen = ctx.embed_all(generated)?;
    evaluate_embedded(ctx, reference, &gen, metrics, extras)
}

/// [`evaluate`] for a generated set that is already embedded.
pub fn evaluate_embedded(
    ctx: &EvalContext,
    reference: &ReferenceSet,
    gen: &[EmbeddedSample],
    metrics: &MetricsSection,
    extras: Extras,
) -> Result<Evaluation> {
    let gen_emb: Vec<Embedding> = gen.iter().map(|s| s.embedding.clone()).collect();
    let fid = reference
        .fid_reference
        .distance(&GaussianSummary::fit(&gen_emb)?)?;
    let candidates = knn_candidates(gen, &reference.train, &reference.thresholds, metrics.knn_k)?;
    let mut scorer = PairScorer::with_pooled_train(
        &ctx.space,
        &ctx.verifier,
        gen,
        &reference.pooled_train,
        &candidates,
    )?;
    let (checked, confirmed) =
        confirm_matches(&candidates, |p| scorer.score(p), metrics.confirm_threshold)?;
    let report = aggregate_report(checked, confirmed, gen.len())?;
    let mut bundle = ScoreBundle::new(fid, &report);
    if extras.fld || extras.authpct || extras.ct {
        let train_emb: Vec<Embedding> = reference
            .train
            .iter()
            .map(|s| s.embedding.clone())
            .collect();
        let test_emb: Vec<Embedding> = reference.test.iter().map(|s| s.embedding.clone()).collect();
        if extras.fld {
            bundle.fld = Some(fld_lite(
                &train_emb,
                &test_emb,
                &gen_emb,
                reference.bandwidth,
            )?);
        }
        if extras.authpct {
            bundle.authpct = Some(authpct(&train_emb, &gen_emb)?);
        }
        if extras.ct {
            bundle.ct = Some(ct_score(
                &train_emb,
                &test_emb,
                &gen_emb,
                reference.k_cells,
            )?);
        }
    }
    Ok(Evaluation { bundle, report })
}

/// One line of `scores.csv`: who scored which model, when.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub time: SimTime,
    pub node_id: String,
    pub model_cid: Cid,
    pub bundle: ScoreBundle,
}

/// `node_id` used for evaluations against the pooled data of every node.
pub const GLOBAL_NODE_ID: &str = "global";
