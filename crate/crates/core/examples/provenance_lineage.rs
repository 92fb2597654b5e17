//! Builds a three-step signed lineage of models from two contributors,
//! validates it, splits a reward pool along it, and shows that a damaged
//! blob breaks validation.
//!
//! `cargo run --release --example provenance_lineage`

use std::collections::BTreeMap;

use fedmem::ledger::ContentStore;
use fedmem::provenance::{
    apportion_rewards, build_manifest, store_manifest, validate_lineage, DataSummary, Keyring,
    Objective, SigningKey, TrainingAssertion,
};
use fedmem::Result;

fn main() -> Result<()> {
    let mut store = ContentStore::new();
    let mut keyring = Keyring::default();
    let alice = SigningKey::seeded(1, "0xalice");
    let bob = SigningKey::seeded(1, "0xbob");
    keyring.insert(alice.clone());
    keyring.insert(bob.clone());

    let steps = [(&alice, 10), (&bob, 5), (&alice, 5)];
    let mut head = None;
    for (t, (key, epochs)) in steps.into_iter().enumerate() {
        let summary = DataSummary {
            class_counts: BTreeMap::from([(0, 50), (1, 50)]),
            salt: format!("{t:02x}"),
            digest: format!("{:064x}", t),
        };
        let assertion = TrainingAssertion {
            author: key.signer_id.clone(),
            epochs,
            data_digest: store.put(&summary.to_bytes()?),
            objective: Objective::QnDedup,
            timestamp: 1_000 * t as u64,
        };
        let asset = store.put(format!("weights after step {t}").as_bytes());
        let manifest = build_manifest(&store, &asset, head.as_ref(), assertion, &key.signer_id, key)?;
        head = Some(store_manifest(&mut store, &manifest)?);
    }
    let head = head.expect("three steps");

    let chain = validate_lineage(&store, &keyring, &head)?;
    println!("lineage of {} manifests validates", chain.len());
    for (wallet, amount) in apportion_rewards(&chain, 1_000)? {
        println!("  {wallet} receives {amount}");
    }

    let genesis = chain.entries[0].1.asset_cid.clone();
    let mut bytes = store.get(&genesis)?.to_vec();
    bytes[0] ^= 1;
    store.overwrite_unchecked(&genesis, bytes)?;
    match validate_lineage(&store, &keyring, &head) {
        Ok(_) => println!("damaged lineage still validates"),
        Err(e) => println!("after flipping one bit of the genesis model: {e}"),
    }
    Ok(())
}
