use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Cid, SimTime};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Trainer,
    Validator,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoterFilter {
    #[default]
    All,
    Trainers,
    Validators,
}

impl VoterFilter {
    pub fn admits(self, role: Role) -> bool {
        match self {
            VoterFilter::All => true,
            VoterFilter::Trainers => role == Role::Trainer,
            VoterFilter::Validators => role == Role::Validator,
        }
    }
}

/// Free-form submission metadata; sorted keys keep serialization stable.
pub type ModelMeta = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    NodeRegistered {
        address: String,
        role: Role,
    },
    ModelSubmitted {
        submitter: String,
        model_cid: Cid,
        manifest_cid: Cid,
        parent_cid: Option<Cid>,
        meta: ModelMeta,
    },
    VoteSubmitted {
        voter: String,
        model_cid: Cid,
    },
    RewardPaid {
        recipient: String,
        model_cid: Cid,
        amount: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub seq: u64,
    pub confirmed_at: SimTime,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub role: Role,
    pub registered_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub submitter: String,
    pub manifest_cid: Cid,
    pub parent_cid: Option<Cid>,
    pub meta: ModelMeta,
    pub submitted_at: SimTime,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub voter: String,
    pub model_cid: Cid,
    pub time: SimTime,
}

/// Contract state; always equal to the fold of the event log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractState {
    pub nodes: BTreeMap<String, NodeInfo>,
    pub models: BTreeMap<Cid, ModelRecord>,
    /// Model CIDs in submission order.
    pub model_order: Vec<Cid>,
    pub votes: Vec<Vote>,
    /// Latest vote of every voter.
    pub latest_votes: BTreeMap<String, Cid>,
    pub balances: BTreeMap<String, u64>,
    pub next_seq: u64,
}

impl ContractState {
    pub fn fold<'a>(events: impl IntoIterator<Item = &'a LedgerEvent>) -> Result<Self> {
        let mut state = ContractState::default();
        for e in events {
            state.apply(e)?;
        }
        Ok(state)
    }

    /// Checks that `kind` is a legal transition from this state.
    pub fn check(&self, kind: &EventKind) -> Result<()> {
        match kind {
            EventKind::NodeRegistered { address, .. } => {
                if self.nodes.contains_key(address) {
                    return Err(Error::rejected(format!("{address} is already registered")));
                }
            }
            EventKind::ModelSubmitted {
                submitter,
                model_cid,
                parent_cid,
                ..
            } => {
                match self.nodes.get(submitter) {
                    None => return Err(Error::rejected(format!("{submitter} is not registered"))),
                    Some(n) if n.role != Role::Trainer => {
                        return Err(Error::rejected(format!(
                            "{submitter} is a validator and cannot submit models"
                        )))
                    }
                    _ => {}
                }
                if self.models.contains_key(model_cid) {
                    return Err(Error::rejected(format!(
                        "model {model_cid} was already submitted"
                    )));
                }
                if let Some(p) = parent_cid {
                    if !self.models.contains_key(p) {
                        return Err(Error::rejected(format!("parent {p} was never submitted")));
                    }
                }
            }
            EventKind::VoteSubmitted { voter, model_cid } => {
                if !self.nodes.contains_key(voter) {
                    return Err(Error::rejected(format!("{voter} is not registered")));
                }
                if !self.models.contains_key(model_cid) {
                    return Err(Error::rejected(format!(
                        "vote for unknown model {model_cid}"
                    )));
                }
            }
            EventKind::RewardPaid {
                recipient,
                model_cid,
                ..
            } => {
                if !self.nodes.contains_key(recipient) {
                    return Err(Error::rejected(format!(
                        "reward to unregistered {recipient}"
                    )));
                }
                if !self.models.contains_key(model_cid) {
                    return Err(Error::rejected(format!(
                        "reward for unknown model {model_cid}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, event: &LedgerEvent) -> Result<()> {
        if event.seq != self.next_seq {
            return Err(Error::LedgerLog(format!(
                "event seq {} where {} was expected",
                event.seq, self.next_seq
            )));
        }
        self.check(&event.kind)
            .map_err(|e| Error::LedgerLog(format!("event {} is invalid: {e}", event.seq)))?;
        let t = event.confirmed_at;
        match &event.kind {
            EventKind::NodeRegistered { address, role } => {
                self.nodes.insert(
                    address.clone(),
                    NodeInfo {
                        role: *role,
                        registered_at: t,
                    },
                );
            }
            EventKind::ModelSubmitted {
                submitter,
                model_cid,
                manifest_cid,
                parent_cid,
                meta,
            } => {
                self.models.insert(
                    model_cid.clone(),
                    ModelRecord {
                        submitter: submitter.clone(),
                        manifest_cid: manifest_cid.clone(),
                        parent_cid: parent_cid.clone(),
                        meta: meta.clone(),
                        submitted_at: t,
                        seq: event.seq,
                    },
                );
                self.model_order.push(model_cid.clone());
            }
            EventKind::VoteSubmitted { voter, model_cid } => {
                self.votes.push(Vote {
                    voter: voter.clone(),
                    model_cid: model_cid.clone(),
                    time: t,
                });
                self.latest_votes.insert(voter.clone(), model_cid.clone());
            }
            EventKind::RewardPaid {
                recipient, amount, ..
            } => {
                *self.balances.entry(recipient.clone()).or_insert(0) += amount;
            }
        }
        self.next_seq += 1;
        Ok(())
    }

    /// Number of voters whose latest vote is for `model_cid`.
    pub fn tally(&self, model_cid: &Cid, filter: VoterFilter) -> Result<u64> {
        if !self.models.contains_key(model_cid) {
            return Err(Error::NotFound(model_cid.clone()));
        }
        Ok(self
            .latest_votes
            .iter()
            .filter(|(voter, cid)| *cid == model_cid && filter.admits(self.nodes[*voter].role))
            .count() as u64)
    }

    /// Ancestors of `cid` from its parent back to the genesis submission.
    pub fn ancestry(&self, cid: &Cid) -> Result<Vec<Cid>> {
        let mut out = Vec::new();
        let mut cur = self
            .models
            .get(cid)
            .ok_or_else(|| Error::NotFound(cid.clone()))?;
        while let Some(p) = &cur.parent_cid {
            if out.len() > self.models.len() {
                return Err(Error::lineage(cid, "parent chain contains a cycle"));
            }
            out.push(p.clone());
            cur = self
                .models
                .get(p)
                .ok_or_else(|| Error::NotFound(p.clone()))?;
        }
        Ok(out)
    }
}
