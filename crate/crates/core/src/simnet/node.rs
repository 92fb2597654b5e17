//! Node agents: each wake-up reads new ledger events, scores unseen
//! candidates on private data, and (for trainers) continues training the
//! selected model before submitting it and a vote.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::eval::{evaluate, EvalContext, Extras, ReferenceSet, ScoreRow};
use super::toy::ToyModel;
use super::world::WorldDataset;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::ledger::{
    Cid, ContentStore, EventKind, Ledger, ModelMeta, Role, SimTime, Transaction, TxPayload,
    VoterFilter,
};
use crate::memdetect::ExclusionTracker;
use crate::provenance::{
    build_manifest, store_manifest, DataSummary, Objective, SigningKey, TrainingAssertion,
};
use crate::seed;

/// Wallet-style address of node `index`.
pub fn node_address(index: usize) -> String {
    let h = Sha256::digest(format!("fedmem-node:{index}").as_bytes());
    format!("0x{}", &hex::encode(h)[..40])
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeStrategy {
    pub role: Role,
    pub objective: Objective,
    pub epochs_per_round: u64,
    pub samples_per_eval: usize,
    pub alpha: f64,
    pub vote_filter: VoterFilter,
    pub candidate_window: usize,
    pub wake_interval: SimTime,
    pub wake_jitter: f64,
    pub join_at: SimTime,
    pub leave_at: Option<SimTime>,
}

impl NodeStrategy {
    /// Strategy of node `index`: trainers come first, then validators.
    pub fn from_config(cfg: &ExperimentConfig, index: usize) -> Self {
        let n = &cfg.nodes;
        let o = n
            .overrides
            .iter()
            .find(|o| o.index == index)
            .cloned()
            .unwrap_or_default();
        NodeStrategy {
            role: if index < n.trainers {
                Role::Trainer
            } else {
                Role::Validator
            },
            objective: o.objective.unwrap_or(n.objective),
            epochs_per_round: o.epochs_per_round.unwrap_or(n.epochs_per_round),
            samples_per_eval: o.samples_per_eval.unwrap_or(n.samples_per_eval),
            alpha: o.alpha.unwrap_or(n.alpha),
            vote_filter: o.vote_filter.unwrap_or(n.vote_filter),
            candidate_window: n.candidate_window,
            wake_interval: o.wake_interval.unwrap_or(n.wake_interval),
            wake_jitter: n.wake_jitter,
            join_at: o.join_at.unwrap_or(0),
            leave_at: o.leave_at,
        }
    }
}

/// Read-only inputs shared by every node step.
pub struct StepEnv<'a> {
    pub config: &'a ExperimentConfig,
    pub ctx: &'a EvalContext,
    pub world: &'a WorldDataset,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutput {
    pub transactions: Vec<Transaction>,
    pub rows: Vec<ScoreRow>,
}

#[derive(Clone, Debug)]
pub struct NodeAgent {
    pub index: usize,
    pub address: String,
    pub strategy: NodeStrategy,
    pub key: SigningKey,
    pub tracker: ExclusionTracker,
    nonce: u64,
    registration_sent: bool,
    cursor: u64,
    submissions: Vec<Cid>,
    own_scores: BTreeMap<Cid, f64>,
    last_vote: Option<Cid>,
    reference: Option<ReferenceSet>,
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Index of the smallest value; the first one on ties.
fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

impl NodeAgent {
    pub fn new(env: &StepEnv<'_>, index: usize, strategy: NodeStrategy) -> Result<Self> {
        let split = env
            .world
            .node_splits
            .get(index)
            .ok_or_else(|| Error::Config(format!("node {index} has no data split")))?;
        let address = node_address(index);
        let tracker = ExclusionTracker::new(
            split
                .train
                .iter()
                .map(|&i| env.world.records[i].id.as_str()),
        );
        Ok(NodeAgent {
            index,
            key: SigningKey::seeded(env.config.seed, &address),
            address,
            strategy,
            tracker,
            nonce: 0,
            registration_sent: false,
            cursor: 0,
            submissions: Vec::new(),
            own_scores: BTreeMap::new(),
            last_vote: None,
            reference: None,
        })
    }

    pub fn own_scores(&self) -> &BTreeMap<Cid, f64> {
        &self.own_scores
    }

    fn tx(&mut self, now: SimTime, payload: TxPayload) -> Transaction {
        let tx = Transaction {
            sender: self.address.clone(),
            nonce: self.nonce,
            submitted_at: now,
            payload,
        };
        self.nonce += 1;
        tx
    }

    fn reference(&mut self, env: &StepEnv<'_>) -> Result<&ReferenceSet> {
        if self.reference.is_none() {
            let split = &env.world.node_splits[self.index];
            self.reference = Some(ReferenceSet::new(
                env.ctx,
                env.world,
                split.train.iter().copied(),
                split.test.iter().copied(),
                &env.config.metrics,
            )?);
        }
        Ok(self.reference.as_ref().expect("reference just built"))
    }

    fn score_candidate(
        &mut self,
        env: &StepEnv<'_>,
        store: &ContentStore,
        cid: &Cid,
        now: SimTime,
    ) -> Result<ScoreRow> {
        let model = ToyModel::from_bytes(store.get(cid)?)?;
        let mut rng = seed::rng(seed::derive_str(
            env.config.seed,
            &format!("eval.node.{}", self.index),
            cid.as_str(),
        ));
        let generated = model.generate_samples(self.strategy.samples_per_eval, "gen-", &mut rng)?;
        let objective = self.strategy.objective;
        let reference = self.reference(env)?;
        let eval = evaluate(
            env.ctx,
            reference,
            &generated,
            &env.config.metrics,
            Extras::for_objective(objective),
        )?;
        self.tracker
            .record(&eval.report, env.config.metrics.percentile)?;
        self.own_scores
            .insert(cid.clone(), eval.objective(objective));
        Ok(ScoreRow {
            time: now,
            node_id: self.address.clone(),
            model_cid: cid.clone(),
            bundle: eval.bundle,
        })
    }

    /// Runs one wake-up at `now`. The ledger is only read; the returned
    /// transactions are for the caller to submit.
    pub fn step(
        &mut self,
        env: &StepEnv<'_>,
        ledger: &Ledger,
        store: &mut ContentStore,
        now: SimTime,
    ) -> Result<StepOutput> {
        let mut out = StepOutput::default();
        if !self.registration_sent {
            self.registration_sent = true;
            let role = self.strategy.role;
            out.transactions
                .push(self.tx(now, TxPayload::RegisterNode { role }));
            return Ok(out);
        }
        if !ledger.state().nodes.contains_key(&self.address) {
            return Ok(out);
        }

        for ev in ledger.events_since(self.cursor) {
            if let EventKind::ModelSubmitted { model_cid, .. } = &ev.kind {
                self.submissions.push(model_cid.clone());
            }
            self.cursor = ev.seq + 1;
        }
        let window = self.strategy.candidate_window.min(self.submissions.len());
        let candidates: Vec<Cid> = self.submissions[self.submissions.len() - window..].to_vec();
        for cid in &candidates {
            if !self.own_scores.contains_key(cid) {
                out.rows.push(self.score_candidate(env, store, cid, now)?);
            }
        }
        let own: Vec<f64> = candidates.iter().map(|c| self.own_scores[c]).collect();
        let best_own = argmin(&own).map(|i| candidates[i].clone());

        if self.strategy.role == Role::Trainer {
            let base = if candidates.is_empty() {
                None
            } else {
                let tallies = candidates
                    .iter()
                    .map(|c| {
                        ledger
                            .tally_votes(c, self.strategy.vote_filter)
                            .map(|t| t as f64)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let a = self.strategy.alpha;
                let blended: Vec<f64> = min_max(&own)
                    .iter()
                    .zip(min_max(&tallies))
                    .map(|(o, t)| a * o + (1.0 - a) * (1.0 - t))
                    .collect();
                argmin(&blended).map(|i| candidates[i].clone())
            };
            out.transactions
                .push(self.train_and_submit(env, ledger, store, base.as_ref(), now)?);
        }

        if let Some(best) = best_own {
            if self.last_vote.as_ref() != Some(&best) {
                self.last_vote = Some(best.clone());
                out.transactions
                    .push(self.tx(now, TxPayload::SubmitVote { model_cid: best }));
            }
        }
        Ok(out)
    }

    fn train_and_submit(
        &mut self,
        env: &StepEnv<'_>,
        ledger: &Ledger,
        store: &mut ContentStore,
        base: Option<&Cid>,
        now: SimTime,
    ) -> Result<Transaction> {
        let cfg = env.config;
        let records = &env.world.records;
        let train = &env.world.node_splits[self.index].train;
        let mut rng = seed::rng(seed::derive(
            cfg.seed,
            &format!("train.{}", self.index),
            self.nonce,
        ));
        let (mut model, parent_manifest) = match base {
            None => (
                ToyModel::init(records, train, cfg.world.classes, &cfg.trainer, &mut rng)?,
                None,
            ),
            Some(cid) => {
                let record = ledger
                    .state()
                    .models
                    .get(cid)
                    .ok_or_else(|| Error::NotFound(cid.clone()))?;
                (
                    ToyModel::from_bytes(store.get(cid)?)?,
                    Some(record.manifest_cid.clone()),
                )
            }
        };
        let empty = BTreeSet::new();
        let excluded = if self.strategy.objective == Objective::QnDedup {
            &self.tracker.excluded
        } else {
            &empty
        };
        let epochs = self.strategy.epochs_per_round;
        model.train_epochs(records, train, excluded, epochs, &cfg.trainer, &mut rng)?;
        let model_cid = store.put(&model.to_bytes());

        let salt =
            seed::derive(cfg.seed, &format!("salt.{}", self.index), self.nonce).to_le_bytes();
        let used = train
            .iter()
            .map(|&i| &records[i])
            .filter(|r| !excluded.contains(&r.id));
        let summary_cid = store.put(&DataSummary::of(used, &salt).to_bytes()?);
        let assertion = TrainingAssertion {
            author: self.address.clone(),
            epochs,
            data_digest: summary_cid,
            objective: self.strategy.objective,
            timestamp: now,
        };
        let manifest = build_manifest(
            store,
            &model_cid,
            parent_manifest.as_ref(),
            assertion,
            &self.address,
            &self.key,
        )?;
        let manifest_cid = store_manifest(store, &manifest)?;
        let meta: ModelMeta = [
            (
                "objective".to_string(),
                self.strategy.objective.as_str().to_string(),
            ),
            ("epochs".to_string(), epochs.to_string()),
        ]
        .into_iter()
        .collect();
        Ok(self.tx(
            now,
            TxPayload::SubmitModel {
                model_cid,
                manifest_cid,
                parent_cid: base.cloned(),
                meta,
            },
        ))
    }
}
