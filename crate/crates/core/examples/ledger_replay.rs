//! Registers nodes, submits two models and a vote on the simulated ledger,
//! then rebuilds the contract state from the serialized event log.
//!
//! `cargo run --release --example ledger_replay`

use fedmem::ledger::{
    read_log, write_log, ContentStore, ContractState, Ledger, LedgerConfig, ModelMeta, Role,
    Transaction, TxPayload, VoterFilter,
};
use fedmem::Result;

fn main() -> Result<()> {
    let mut ledger = Ledger::new(LedgerConfig::default());
    let mut store = ContentStore::new();
    let tx = |sender: &str, nonce: u64, at: u64, payload: TxPayload| Transaction {
        sender: sender.into(),
        nonce,
        submitted_at: at,
        payload,
    };

    ledger.submit(tx("0xtrainer", 0, 0, TxPayload::RegisterNode { role: Role::Trainer }))?;
    ledger.submit(tx("0xvalidator", 0, 0, TxPayload::RegisterNode { role: Role::Validator }))?;
    ledger.advance_to(10_000, &store);

    let genesis = store.put(b"model weights, round 0");
    ledger.submit(tx(
        "0xtrainer",
        1,
        10_000,
        TxPayload::SubmitModel {
            model_cid: genesis.clone(),
            manifest_cid: store.put(b"manifest 0"),
            parent_cid: None,
            meta: ModelMeta::new(),
        },
    ))?;
    ledger.advance_to(20_000, &store);
    let child = store.put(b"model weights, round 1");
    ledger.submit(tx(
        "0xtrainer",
        2,
        20_000,
        TxPayload::SubmitModel {
            model_cid: child.clone(),
            manifest_cid: store.put(b"manifest 1"),
            parent_cid: Some(genesis),
            meta: ModelMeta::from([("epochs".into(), "5".into())]),
        },
    ))?;
    ledger.submit(tx("0xvalidator", 1, 20_000, TxPayload::SubmitVote { model_cid: child.clone() }))?;
    for r in ledger.advance_to(40_000, &store) {
        println!("confirmed at {} ms: {}", r.confirmed_at, if r.result.is_ok() { "ok" } else { "rejected" });
    }
    println!("votes for the child model: {}", ledger.tally_votes(&child, VoterFilter::All)?);

    let mut log = Vec::new();
    write_log(&mut log, ledger.events())?;
    let replayed = ContractState::fold(&read_log(log.as_slice())?)?;
    println!("{} events, {} bytes of log; replay matches: {}", ledger.events().len(), log.len(), replayed == *ledger.state());
    println!("ledger digest {}", ledger.digest()?);
    Ok(())
}
