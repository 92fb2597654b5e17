//! Seeded discrete-event loop over node wake-ups and ledger confirmations.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::eval::{evaluate, EvalContext, Extras, ReferenceSet, ScoreRow, GLOBAL_NODE_ID};
use super::node::{NodeAgent, NodeStrategy, StepEnv};
use super::toy::ToyModel;
use super::world::{generate_world, WorldDataset};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::ledger::{
    Cid, ContentStore, EventKind, Ledger, LedgerConfig, Receipt, SimTime, TxPayload, VoterFilter,
};
use crate::memdetect::MemorizationReport;
use crate::metrics::ScoreBundle;
use crate::provenance::{distribute_rewards, Keyring};
use crate::seed;

/// Global evaluation of one confirmed submission.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubmissionRecord {
    pub model_cid: Cid,
    pub submitter: String,
    pub confirmed_at: SimTime,
    pub bundle: ScoreBundle,
    #[serde(skip)]
    pub report: MemorizationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeSummary {
    pub index: usize,
    pub address: String,
    pub objective: String,
    pub excluded_fraction: f64,
    pub excluded: usize,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct ExperimentTrace {
    pub ledger: Ledger,
    pub store: ContentStore,
    pub keyring: Keyring,
    pub rows: Vec<ScoreRow>,
    pub submissions: Vec<SubmissionRecord>,
    pub nodes: Vec<NodeSummary>,
    pub rewarded_model: Option<Cid>,
}

impl ExperimentTrace {
    /// SHA-256 over the ledger digest and every score row.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.ledger.digest()?.as_bytes());
        for r in &self.rows {
            h.update(serde_json::to_vec(r)?);
            h.update(b"\n");
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Global bundles of the last `n` confirmed submissions.
    pub fn final_bundles(&self, n: usize) -> Vec<&ScoreBundle> {
        let skip = self.submissions.len().saturating_sub(n);
        self.submissions[skip..].iter().map(|s| &s.bundle).collect()
    }
}

/// Embedding space and verifier for a config; reusable across configs that
/// share the seed, embedding and verifier sections.
pub fn build_context(cfg: &ExperimentConfig) -> Result<EvalContext> {
    EvalContext::new(cfg, seed::derive(cfg.seed, "world", 0))
}

pub fn build_world(cfg: &ExperimentConfig) -> Result<WorldDataset> {
    generate_world(
        &cfg.world,
        cfg.nodes.total(),
        seed::derive(cfg.seed, "world", 0),
    )
}

fn wake_delay(strategy: &NodeStrategy, rng: &mut seed::SimRng) -> SimTime {
    let j = strategy.wake_jitter;
    let factor = if j > 0.0 {
        rng.random_range(1.0 - j..=1.0 + j)
    } else {
        1.0
    };
    ((strategy.wake_interval as f64 * factor).round() as SimTime).max(1)
}

struct GlobalEvaluator<'a> {
    env: &'a StepEnv<'a>,
    reference: ReferenceSet,
    extras: Extras,
}

impl GlobalEvaluator<'_> {
    fn evaluate(&self, store: &ContentStore, cid: &Cid) -> Result<MemorizationReportAndBundle> {
        let model = ToyModel::from_bytes(store.get(cid)?)?;
        let mut rng = seed::rng(seed::derive_str(
            self.env.config.seed,
            "eval.global",
            cid.as_str(),
        ));
        let generated =
            model.generate_samples(self.env.config.run.global_samples, "gen-", &mut rng)?;
        let e = evaluate(
            self.env.ctx,
            &self.reference,
            &generated,
            &self.env.config.metrics,
            self.extras,
        )?;
        Ok((e.report, e.bundle))
    }
}

type MemorizationReportAndBundle = (MemorizationReport, ScoreBundle);

/// Runs an experiment, building the context from the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentTrace> {
    cfg.validate()?;
    let ctx = build_context(cfg)?;
    run_with_context(cfg, &ctx)
}

/// Runs an experiment with a prebuilt evaluation context.
pub fn run_with_context(cfg: &ExperimentConfig, ctx: &EvalContext) -> Result<ExperimentTrace> {
    cfg.validate()?;
    let world = build_world(cfg)?;
    let env = StepEnv {
        config: cfg,
        ctx,
        world: &world,
    };
    let global = GlobalEvaluator {
        env: &env,
        reference: ReferenceSet::new(
            ctx,
            &world,
            world.train_indices(),
            world.test_indices(),
            &cfg.metrics,
        )?,
        extras: if cfg.metrics.global_baselines {
            Extras::ALL
        } else {
            Extras::default()
        },
    };

    let mut ledger = Ledger::new(LedgerConfig {
        confirmation_delay: cfg.protocol.confirmation_delay,
        jitter: cfg.protocol.jitter,
        seed: seed::derive(cfg.seed, "ledger", 0),
    });
    let mut store = ContentStore::new();
    let mut keyring = Keyring::default();
    let mut agents = Vec::with_capacity(cfg.nodes.total());
    let mut wake_rngs = Vec::with_capacity(cfg.nodes.total());
    let mut queue = BinaryHeap::new();
    for index in 0..cfg.nodes.total() {
        let agent = NodeAgent::new(&env, index, NodeStrategy::from_config(cfg, index))?;
        keyring.insert(agent.key.clone());
        let mut rng = seed::stream(cfg.seed, "wake", index as u64);
        // Spread first wake-ups so nodes do not move in lockstep.
        let offset = rng.random_range(0..agent.strategy.wake_interval.max(1));
        queue.push(Reverse((agent.strategy.join_at + offset, index)));
        agents.push(agent);
        wake_rngs.push(rng);
    }

    let mut rows = Vec::new();
    let mut submissions = Vec::new();
    let mut on_receipts =
        |receipts: Vec<Receipt>, store: &ContentStore, rows: &mut Vec<ScoreRow>| -> Result<()> {
            for r in receipts {
                let event = r.result?;
                if let EventKind::ModelSubmitted {
                    submitter,
                    model_cid,
                    ..
                } = event.kind
                {
                    let (report, bundle) = global.evaluate(store, &model_cid)?;
                    rows.push(ScoreRow {
                        time: event.confirmed_at,
                        node_id: GLOBAL_NODE_ID.into(),
                        model_cid: model_cid.clone(),
                        bundle: bundle.clone(),
                    });
                    submissions.push(SubmissionRecord {
                        model_cid,
                        submitter,
                        confirmed_at: event.confirmed_at,
                        bundle,
                        report,
                    });
                }
            }
            Ok(())
        };

    let mut submitted_models = 0usize;
    while let Some(Reverse((t, index))) = queue.pop() {
        if t > cfg.run.max_time || submitted_models >= cfg.run.max_submissions {
            break;
        }
        on_receipts(ledger.advance_to(t, &store), &store, &mut rows)?;
        let agent = &mut agents[index];
        if agent.strategy.leave_at.is_some_and(|l| t >= l) {
            continue;
        }
        let out = agent.step(&env, &ledger, &mut store, t)?;
        rows.extend(out.rows);
        for tx in out.transactions {
            if matches!(tx.payload, TxPayload::SubmitModel { .. }) {
                submitted_models += 1;
            }
            ledger.submit(tx)?;
        }
        let next = t + wake_delay(&agent.strategy, &mut wake_rngs[index]);
        queue.push(Reverse((next, index)));
    }
    while let Some(t) = ledger.next_confirmation() {
        on_receipts(ledger.advance_to(t, &store), &store, &mut rows)?;
    }

    let state = ledger.state();
    let mut rewarded_model = None;
    let mut best: Option<(u64, usize)> = None;
    for (pos, cid) in state.model_order.iter().enumerate() {
        let tally = state.tally(cid, VoterFilter::All)?;
        if best.is_none_or(|(b, _)| tally >= b) {
            best = Some((tally, pos));
        }
    }
    if let Some((_, pos)) = best {
        let cid = state.model_order[pos].clone();
        distribute_rewards(
            &mut ledger,
            &store,
            &keyring,
            &cid,
            cfg.protocol.reward_pool,
        )?;
        rewarded_model = Some(cid);
    }

    let nodes = agents
        .iter()
        .map(|a| NodeSummary {
            index: a.index,
            address: a.address.clone(),
            objective: a.strategy.objective.as_str().to_string(),
            excluded_fraction: a.tracker.excluded_fraction(),
            excluded: a.tracker.excluded.len(),
        })
        .collect();
    Ok(ExperimentTrace {
        ledger,
        store,
        keyring,
        rows,
        submissions,
        nodes,
        rewarded_model,
    })
}

/// Means of the numeric score fields over a set of bundles; absent optional
/// scores are averaged over the bundles that have them.
pub fn mean_bundle(bundles: &[&ScoreBundle]) -> Result<BTreeMap<String, f64>> {
    if bundles.is_empty() {
        return Err(Error::domain("no bundles to average"));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut add = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            let e = sums.entry(k.to_string()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    };
    for b in bundles {
        add("qn", Some(b.qn));
        add("fid", Some(b.fid));
        add("fld", b.fld);
        add("authpct", b.authpct);
        add("ct", b.ct);
        add("v_a", Some(b.v_a));
        add("v_c", Some(b.v_c));
        add("r_c", Some(b.r_c));
        add("novelty", Some(b.novelty()));
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect())
}
