//! The contract stand-in: an append-only, totally ordered event log whose
//! fold is the contract state, fed by delayed transactions, plus a
//! content-addressed blob store.

mod cid;
mod log;
mod state;
mod store;

pub use cid::Cid;
pub use log::{read_log, write_log, LOG_MAGIC, LOG_VERSION};
pub use state::{
    ContractState, EventKind, LedgerEvent, ModelMeta, ModelRecord, NodeInfo, Role, Vote,
    VoterFilter,
};
pub use store::ContentStore;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

/// Simulated time in milliseconds.
pub type SimTime = u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TxPayload {
    RegisterNode {
        role: Role,
    },
    SubmitModel {
        model_cid: Cid,
        manifest_cid: Cid,
        parent_cid: Option<Cid>,
        meta: ModelMeta,
    },
    SubmitVote {
        model_cid: Cid,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: String,
    pub nonce: u64,
    pub submitted_at: SimTime,
    pub payload: TxPayload,
}

impl Transaction {
    fn event_kind(&self) -> EventKind {
        let sender = self.sender.clone();
        match &self.payload {
            TxPayload::RegisterNode { role } => EventKind::NodeRegistered {
                address: sender,
                role: *role,
            },
            TxPayload::SubmitModel {
                model_cid,
                manifest_cid,
                parent_cid,
                meta,
            } => EventKind::ModelSubmitted {
                submitter: sender,
                model_cid: model_cid.clone(),
                manifest_cid: manifest_cid.clone(),
                parent_cid: parent_cid.clone(),
                meta: meta.clone(),
            },
            TxPayload::SubmitVote { model_cid } => EventKind::VoteSubmitted {
                voter: sender,
                model_cid: model_cid.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    /// Confirmation delay in milliseconds.
    pub confirmation_delay: SimTime,
    /// Upper bound of the extra seeded delay in milliseconds.
    pub jitter: SimTime,
    pub seed: u64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            confirmation_delay: 2_000,
            jitter: 0,
            seed: 0,
        }
    }
}

/// Outcome of one confirmed transaction.
#[derive(Debug)]
pub struct Receipt {
    pub tx: Transaction,
    pub confirmed_at: SimTime,
    pub result: Result<LedgerEvent>,
}

type PendingKey = (SimTime, String, u64);

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    config: LedgerConfig,
    events: Vec<LedgerEvent>,
    state: ContractState,
    pending: BTreeMap<PendingKey, Transaction>,
    last_nonce: HashMap<String, u64>,
    now: SimTime,
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        Ledger {
            config,
            ..Default::default()
        }
    }

    /// Rebuilds a ledger from a stored event log.
    pub fn from_events(config: LedgerConfig, events: Vec<LedgerEvent>) -> Result<Self> {
        let state = ContractState::fold(&events)?;
        let now = events.last().map_or(0, |e| e.confirmed_at);
        Ok(Ledger {
            config,
            events,
            state,
            now,
            ..Default::default()
        })
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Events with `seq >= cursor`, in order.
    pub fn events_since(&self, cursor: u64) -> &[LedgerEvent] {
        let start = usize::try_from(cursor)
            .unwrap_or(usize::MAX)
            .min(self.events.len());
        &self.events[start..]
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Time at which the earliest pending transaction confirms.
    pub fn next_confirmation(&self) -> Option<SimTime> {
        self.pending.keys().next().map(|k| k.0)
    }

    fn confirmation_time(&self, tx: &Transaction) -> SimTime {
        let jitter = if self.config.jitter == 0 {
            0
        } else {
            let mut rng = seed::rng(seed::derive_str(
                self.config.seed,
                "ledger.jitter",
                &format!("{}:{}", tx.sender, tx.nonce),
            ));
            rng.random_range(0..=self.config.jitter)
        };
        tx.submitted_at.max(self.now) + self.config.confirmation_delay + jitter
    }

    /// Queues a transaction for confirmation. Nonces must increase per sender.
    pub fn submit(&mut self, tx: Transaction) -> Result<SimTime> {
        if let Some(last) = self.last_nonce.get(&tx.sender) {
            if tx.nonce <= *last {
                return Err(Error::rejected(format!(
                    "nonce {} of {} is not above {last}",
                    tx.nonce, tx.sender
                )));
            }
        }
        if tx.submitted_at < self.now {
            return Err(Error::rejected(format!(
                "transaction stamped {} before ledger time {}",
                tx.submitted_at, self.now
            )));
        }
        self.last_nonce.insert(tx.sender.clone(), tx.nonce);
        let at = self.confirmation_time(&tx);
        self.pending.insert((at, tx.sender.clone(), tx.nonce), tx);
        Ok(at)
    }

    /// Confirms every pending transaction due by `time`, in (confirmation
    /// time, sender, nonce) order. Content references are checked against
    /// `store`.
    pub fn advance_to(&mut self, time: SimTime, store: &ContentStore) -> Vec<Receipt> {
        let mut receipts = Vec::new();
        while let Some(entry) = self.pending.first_entry() {
            if entry.key().0 > time {
                break;
            }
            let ((at, _, _), tx) = entry.remove_entry();
            self.now = self.now.max(at);
            let result = self.confirm(&tx, at, store);
            receipts.push(Receipt {
                tx,
                confirmed_at: at,
                result,
            });
        }
        self.now = self.now.max(time);
        receipts
    }

    fn confirm(
        &mut self,
        tx: &Transaction,
        at: SimTime,
        store: &ContentStore,
    ) -> Result<LedgerEvent> {
        if let TxPayload::SubmitModel {
            model_cid,
            manifest_cid,
            ..
        } = &tx.payload
        {
            for cid in [model_cid, manifest_cid] {
                if !store.contains(cid) {
                    return Err(Error::rejected(format!(
                        "content {cid} is not in the store"
                    )));
                }
            }
        }
        self.emit(at, tx.event_kind())
    }

    fn emit(&mut self, at: SimTime, kind: EventKind) -> Result<LedgerEvent> {
        self.state.check(&kind)?;
        let event = LedgerEvent {
            seq: self.events.len() as u64,
            confirmed_at: at,
            kind,
        };
        self.state.apply(&event)?;
        self.events.push(event.clone());
        Ok(event)
    }

    /// Contract-initiated payouts, emitted immediately at the current time.
    pub fn pay_rewards(
        &mut self,
        model_cid: &Cid,
        payouts: &[(String, u64)],
    ) -> Result<Vec<LedgerEvent>> {
        for (recipient, _) in payouts {
            self.state.check(&EventKind::RewardPaid {
                recipient: recipient.clone(),
                model_cid: model_cid.clone(),
                amount: 0,
            })?;
        }
        payouts
            .iter()
            .map(|(recipient, amount)| {
                self.emit(
                    self.now,
                    EventKind::RewardPaid {
                        recipient: recipient.clone(),
                        model_cid: model_cid.clone(),
                        amount: *amount,
                    },
                )
            })
            .collect()
    }

    pub fn tally_votes(&self, model_cid: &Cid, filter: VoterFilter) -> Result<u64> {
        self.state.tally(model_cid, filter)
    }

    /// SHA-256 over the canonical JSON lines of every event.
    pub fn digest(&self) -> Result<String> {
        log_digest(&self.events)
    }
}

pub(crate) fn canonical_line(event: &LedgerEvent) -> Result<String> {
    let mut line = serde_json::to_string(event)?;
    line.push('\n');
    Ok(line)
}

pub fn log_digest(events: &[LedgerEvent]) -> Result<String> {
    let mut h = Sha256::new();
    for e in events {
        h.update(canonical_line(e)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(sender: &str, nonce: u64, at: SimTime, payload: TxPayload) -> Transaction {
        Transaction {
            sender: sender.into(),
            nonce,
            submitted_at: at,
            payload,
        }
    }

    fn register(
        l: &mut Ledger,
        s: &ContentStore,
        who: &str,
        role: Role,
        at: SimTime,
    ) -> Result<LedgerEvent> {
        let nonce = l.last_nonce.get(who).map_or(0, |n| n + 1);
        let at = at.max(l.now());
        let due = l
            .submit(tx(who, nonce, at, TxPayload::RegisterNode { role }))
            .unwrap();
        l.advance_to(due, s).pop().unwrap().result
    }

    fn model(store: &mut ContentStore, name: &str, parent: Option<Cid>) -> TxPayload {
        TxPayload::SubmitModel {
            model_cid: store.put(name.as_bytes()),
            manifest_cid: store.put(format!("manifest of {name}").as_bytes()),
            parent_cid: parent,
            meta: ModelMeta::new(),
        }
    }

    #[test]
    fn registration_is_unique() {
        let mut l = Ledger::new(LedgerConfig::default());
        let s = ContentStore::new();
        let e = register(&mut l, &s, "0xa", Role::Trainer, 0).unwrap();
        assert_eq!((e.seq, e.confirmed_at), (0, 2_000));
        assert!(matches!(
            register(&mut l, &s, "0xa", Role::Validator, 20_000),
            Err(Error::Rejected(_))
        ));
        assert_eq!(l.events().len(), 1);
        let late = register(&mut l, &s, "0xb", Role::Validator, 500_000).unwrap();
        assert_eq!(late.seq, 1);
        assert!(l.state().nodes.contains_key("0xb"));
    }

    #[test]
    fn model_submission_rules() {
        let mut l = Ledger::new(LedgerConfig::default());
        let mut s = ContentStore::new();
        register(&mut l, &s, "t", Role::Trainer, 0).unwrap();
        register(&mut l, &s, "v", Role::Validator, 0).unwrap();
        let genesis = model(&mut s, "m0", None);
        l.submit(tx("t", 2, 100_000, genesis)).unwrap();
        assert!(l.advance_to(200_000, &s)[0].result.is_ok());

        let orphan = model(&mut s, "m1", Some(Cid::of(b"nothing")));
        l.submit(tx("t", 3, 200_000, orphan)).unwrap();
        assert!(l.advance_to(300_000, &s)[0].result.is_err());

        let from_validator = model(&mut s, "m2", None);
        l.submit(tx("v", 2, 300_000, from_validator)).unwrap();
        assert!(l.advance_to(400_000, &s)[0].result.is_err());

        let missing = TxPayload::SubmitModel {
            model_cid: Cid::of(b"not stored"),
            manifest_cid: s.put(b"m"),
            parent_cid: None,
            meta: ModelMeta::new(),
        };
        l.submit(tx("t", 4, 400_000, missing)).unwrap();
        assert!(l.advance_to(500_000, &s)[0].result.is_err());
        assert_eq!(l.state().models.len(), 1);
    }

    #[test]
    fn same_time_ties_order_by_sender_then_nonce() {
        let mut l = Ledger::new(LedgerConfig::default());
        let s = ContentStore::new();
        l.submit(tx(
            "b",
            0,
            0,
            TxPayload::RegisterNode {
                role: Role::Trainer,
            },
        ))
        .unwrap();
        l.submit(tx(
            "a",
            0,
            0,
            TxPayload::RegisterNode {
                role: Role::Trainer,
            },
        ))
        .unwrap();
        let r = l.advance_to(2_000, &s);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].tx.sender, "a");
        assert_eq!(r[1].tx.sender, "b");
    }

    #[test]
    fn nonces_must_increase() {
        let mut l = Ledger::new(LedgerConfig::default());
        l.submit(tx(
            "a",
            5,
            0,
            TxPayload::RegisterNode {
                role: Role::Trainer,
            },
        ))
        .unwrap();
        assert!(l
            .submit(tx(
                "a",
                5,
                0,
                TxPayload::RegisterNode {
                    role: Role::Trainer
                }
            ))
            .is_err());
        assert!(l
            .submit(tx(
                "a",
                6,
                0,
                TxPayload::RegisterNode {
                    role: Role::Trainer
                }
            ))
            .is_ok());
    }

    #[test]
    fn votes_latest_wins_and_filters() {
        let mut l = Ledger::new(LedgerConfig::default());
        let mut s = ContentStore::new();
        for (who, role) in [
            ("t1", Role::Trainer),
            ("t2", Role::Trainer),
            ("v", Role::Validator),
        ] {
            register(&mut l, &s, who, role, 0).unwrap();
        }
        let m0 = model(&mut s, "m0", None);
        let m1 = model(&mut s, "m1", None);
        l.submit(tx("t1", 1, 10_000, m0)).unwrap();
        l.submit(tx("t2", 1, 10_000, m1)).unwrap();
        l.advance_to(20_000, &s);
        let (a, b) = (
            l.state().model_order[0].clone(),
            l.state().model_order[1].clone(),
        );
        assert_eq!(l.tally_votes(&a, VoterFilter::All).unwrap(), 0);
        for (i, who) in ["t1", "t2", "v"].iter().enumerate() {
            l.submit(tx(
                who,
                2,
                20_000 + i as u64,
                TxPayload::SubmitVote {
                    model_cid: a.clone(),
                },
            ))
            .unwrap();
        }
        l.advance_to(30_000, &s);
        assert_eq!(l.tally_votes(&a, VoterFilter::All).unwrap(), 3);
        assert_eq!(l.tally_votes(&a, VoterFilter::Validators).unwrap(), 1);
        assert_eq!(l.tally_votes(&a, VoterFilter::Trainers).unwrap(), 2);
        l.submit(tx(
            "t1",
            3,
            30_000,
            TxPayload::SubmitVote {
                model_cid: b.clone(),
            },
        ))
        .unwrap();
        l.submit(tx(
            "t2",
            3,
            30_000,
            TxPayload::SubmitVote {
                model_cid: Cid::of(b"?"),
            },
        ))
        .unwrap();
        let r = l.advance_to(40_000, &s);
        assert!(r[1].result.is_err());
        assert_eq!(l.tally_votes(&a, VoterFilter::All).unwrap(), 2);
        assert_eq!(l.tally_votes(&b, VoterFilter::All).unwrap(), 1);
        assert!(l.tally_votes(&Cid::of(b"?"), VoterFilter::All).is_err());
    }

    #[test]
    fn cursor_reads() {
        let mut l = Ledger::new(LedgerConfig::default());
        let s = ContentStore::new();
        assert!(l.events_since(0).is_empty());
        register(&mut l, &s, "a", Role::Trainer, 0).unwrap();
        register(&mut l, &s, "b", Role::Trainer, 0).unwrap();
        assert_eq!(l.events_since(1).len(), 1);
        assert!(l.events_since(99).is_empty());
        assert_eq!(ContractState::fold(l.events_since(0)).unwrap(), *l.state());
    }

    #[test]
    fn jitter_is_seeded_and_bounded() {
        let cfg = LedgerConfig {
            jitter: 500,
            seed: 9,
            ..Default::default()
        };
        let times: Vec<SimTime> = (0..2)
            .map(|_| {
                let mut l = Ledger::new(cfg.clone());
                l.submit(tx(
                    "a",
                    0,
                    1_000,
                    TxPayload::RegisterNode {
                        role: Role::Trainer,
                    },
                ))
                .unwrap()
            })
            .collect();
        assert_eq!(times[0], times[1]);
        assert!((3_000..=3_500).contains(&times[0]));
    }
}
