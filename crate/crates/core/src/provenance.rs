//! Signed provenance manifests for model blobs, lineage validation and
//! epoch-proportional reward splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::SampleRecord;
use crate::error::{Error, Result};
use crate::ledger::{Cid, ContentStore, Ledger, LedgerEvent, SimTime};
use crate::seed;

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    FldFid,
    Qn,
    QnDedup,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::FldFid, Objective::Qn, Objective::QnDedup];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::FldFid => "fld_fid",
            Objective::Qn => "qn",
            Objective::QnDedup => "qn_dedup",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingAssertion {
    pub author: String,
    pub epochs: u64,
    /// CID of a [`DataSummary`] blob.
    pub data_digest: Cid,
    pub objective: Objective,
    pub timestamp: SimTime,
}

/// What a manifest may reveal about training data: per-class counts and a
/// salted hash of the records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSummary {
    pub class_counts: BTreeMap<u32, u64>,
    pub salt: String,
    pub digest: String,
}

impl DataSummary {
    /// Summarizes `records`; the hash covers ids and latents in id order.
    pub fn of<'a>(records: impl IntoIterator<Item = &'a SampleRecord>, salt: &[u8]) -> Self {
        let mut sorted: Vec<&SampleRecord> = records.into_iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let mut class_counts = BTreeMap::new();
        let mut h = Sha256::new();
        h.update(salt);
        for r in &sorted {
            *class_counts.entry(r.class_id()).or_insert(0) += 1;
            h.update((r.id.len() as u64).to_le_bytes());
            h.update(r.id.as_bytes());
            h.update(r.latent.canonical_bytes());
        }
        DataSummary {
            class_counts,
            salt: hex::encode(salt),
            digest: hex::encode(h.finalize()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&serde_json::to_value(self)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ingredient {
    /// The parent model blob.
    pub asset_cid: Cid,
    /// The parent's manifest.
    pub manifest_cid: Cid,
    pub relationship: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CryptoAddresses {
    pub wallet: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub asset_cid: Cid,
    pub ingredients: Vec<Ingredient>,
    pub assertions: Vec<TrainingAssertion>,
    #[serde(rename = "crypto.addresses")]
    pub crypto_addresses: CryptoAddresses,
    pub signer_id: String,
    /// Hex signature over the canonical bytes of every other field.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub signature: String,
}

impl Manifest {
    pub fn wallet(&self) -> &str {
        &self.crypto_addresses.wallet
    }

    pub fn parent(&self) -> Option<&Ingredient> {
        self.ingredients.first()
    }

    /// Canonical JSON: sorted keys, no whitespace, integers only.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&serde_json::to_value(self)?)?)
    }

    pub fn signing_bytes(&self) -> Result<Vec<u8>> {
        let unsigned = Manifest {
            signature: String::new(),
            ..self.clone()
        };
        unsigned.canonical_bytes()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Per-node keyed-hash signing key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigningKey {
    pub signer_id: String,
    key: [u8; 32],
}

impl SigningKey {
    pub fn from_bytes(signer_id: impl Into<String>, key: [u8; 32]) -> Self {
        SigningKey {
            signer_id: signer_id.into(),
            key,
        }
    }

    /// Key derived from a base seed and the signer id.
    pub fn seeded(base_seed: u64, signer_id: &str) -> Self {
        let s = seed::derive_str(base_seed, "provenance.key", signer_id);
        let mut h = Sha256::new();
        h.update(b"fedmem signing key");
        h.update(s.to_le_bytes());
        h.update(signer_id.as_bytes());
        SigningKey::from_bytes(signer_id, h.finalize().into())
    }

    pub fn sign(&self, bytes: &[u8]) -> String {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("HMAC accepts any key length");
        mac.update(bytes);
        hex::encode(mac.finalize().into_bytes())
    }

    pub fn verify(&self, bytes: &[u8], signature: &str) -> bool {
        let Ok(sig) = hex::decode(signature) else {
            return false;
        };
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("HMAC accepts any key length");
        mac.update(bytes);
        mac.verify_slice(&sig).is_ok()
    }
}

/// Keys of every known signer, persisted as `{"signer_id": "hex key"}`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Keyring {
    keys: BTreeMap<String, SigningKey>,
}

impl Keyring {
    pub fn insert(&mut self, key: SigningKey) {
        self.keys.insert(key.signer_id.clone(), key);
    }

    pub fn get(&self, signer_id: &str) -> Option<&SigningKey> {
        self.keys.get(signer_id)
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<&str, String> = self
            .keys
            .iter()
            .map(|(id, k)| (id.as_str(), hex::encode(k.key)))
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(text)?;
        let mut ring = Keyring::default();
        for (id, hex_key) in map {
            let key: [u8; 32] = hex::decode(&hex_key)
                .ok()
                .and_then(|k| k.try_into().ok())
                .ok_or_else(|| Error::Config(format!("key of {id} is not 32 hex-encoded bytes")))?;
            ring.insert(SigningKey::from_bytes(id, key));
        }
        Ok(ring)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Builds and signs the manifest for `asset_cid`. A child manifest repeats
/// its parent's assertions and appends `assertion`.
pub fn build_manifest(
    store: &ContentStore,
    asset_cid: &Cid,
    parent_manifest: Option<&Cid>,
    assertion: TrainingAssertion,
    wallet: &str,
    key: &SigningKey,
) -> Result<Manifest> {
    store.get(asset_cid)?;
    store.get(&assertion.data_digest)?;
    let (ingredients, mut assertions) = match parent_manifest {
        None => (Vec::new(), Vec::new()),
        Some(cid) => {
            let parent = Manifest::parse(store.get(cid)?)?;
            (
                vec![Ingredient {
                    asset_cid: parent.asset_cid.clone(),
                    manifest_cid: cid.clone(),
                    relationship: "parentOf".into(),
                }],
                parent.assertions,
            )
        }
    };
    assertions.push(assertion);
    let mut m = Manifest {
        asset_cid: asset_cid.clone(),
        ingredients,
        assertions,
        crypto_addresses: CryptoAddresses {
            wallet: wallet.to_string(),
        },
        signer_id: key.signer_id.clone(),
        signature: String::new(),
    };
    m.signature = key.sign(&m.signing_bytes()?);
    Ok(m)
}

pub fn store_manifest(store: &mut ContentStore, manifest: &Manifest) -> Result<Cid> {
    Ok(store.put(&manifest.canonical_bytes()?))
}

pub fn verify_manifest(manifest: &Manifest, key: &SigningKey) -> Result<bool> {
    Ok(key.signer_id == manifest.signer_id
        && key.verify(&manifest.signing_bytes()?, &manifest.signature))
}

/// Manifests from genesis to head, each with its CID.
#[derive(Clone, Debug, PartialEq)]
pub struct LineageChain {
    pub entries: Vec<(Cid, Manifest)>,
}

impl LineageChain {
    pub fn head(&self) -> &Manifest {
        &self.entries[self.entries.len() - 1].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn load_checked(store: &ContentStore, keyring: &Keyring, cid: &Cid) -> Result<Manifest> {
    let bytes = store
        .get(cid)
        .map_err(|e| Error::lineage(cid, e.to_string()))?;
    let m = Manifest::parse(bytes)
        .map_err(|e| Error::lineage(cid, format!("unparseable manifest: {e}")))?;
    if m.canonical_bytes()? != bytes {
        return Err(Error::lineage(cid, "manifest is not in canonical form"));
    }
    let key = keyring
        .get(&m.signer_id)
        .ok_or_else(|| Error::lineage(cid, format!("unknown signer {}", m.signer_id)))?;
    if !verify_manifest(&m, key)? {
        return Err(Error::lineage(cid, "signature does not verify"));
    }
    for (what, c) in [("asset", &m.asset_cid)].into_iter().chain(
        m.assertions
            .iter()
            .map(|a| ("training data summary", &a.data_digest)),
    ) {
        store
            .get(c)
            .map_err(|e| Error::lineage(cid, format!("{what} {c}: {e}")))?;
    }
    if m.ingredients.len() > 1 {
        return Err(Error::lineage(cid, "more than one parent ingredient"));
    }
    if m.assertions.is_empty() {
        return Err(Error::lineage(cid, "manifest has no training assertion"));
    }
    Ok(m)
}

/// Walks ingredients from `head` back to genesis, checking content hashes,
/// canonical form, signatures, parent links and assertion history.
pub fn validate_lineage(
    store: &ContentStore,
    keyring: &Keyring,
    head: &Cid,
) -> Result<LineageChain> {
    let mut rev: Vec<(Cid, Manifest)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut cur = head.clone();
    loop {
        if !seen.insert(cur.clone()) {
            return Err(Error::lineage(&cur, "ingredient chain contains a cycle"));
        }
        let m = load_checked(store, keyring, &cur)?;
        let next = m.parent().cloned();
        rev.push((cur.clone(), m));
        let Some(ing) = next else { break };
        let parent = load_checked(store, keyring, &ing.manifest_cid)?;
        let child = &rev[rev.len() - 1].1;
        if parent.asset_cid != ing.asset_cid {
            return Err(Error::lineage(
                &cur,
                "ingredient asset does not match the parent manifest",
            ));
        }
        if child.assertions.len() != parent.assertions.len() + 1
            || child.assertions[..parent.assertions.len()] != parent.assertions[..]
        {
            return Err(Error::lineage(
                &cur,
                "assertions do not extend the parent's history",
            ));
        }
        cur = ing.manifest_cid;
    }
    if rev[rev.len() - 1].1.assertions.len() != 1 {
        return Err(Error::lineage(
            &rev[rev.len() - 1].0,
            "genesis manifest must carry one assertion",
        ));
    }
    rev.reverse();
    Ok(LineageChain { entries: rev })
}

/// Splits `pool` among wallets in proportion to the epochs each contributed
/// along the lineage, with largest-remainder rounding (ties to the smaller
/// wallet). With no epochs at all the head's wallet receives everything.
pub fn apportion_rewards(chain: &LineageChain, pool: u64) -> Result<Vec<(String, u64)>> {
    if chain.is_empty() {
        return Err(Error::domain("empty lineage"));
    }
    let mut epochs: BTreeMap<&str, u64> = BTreeMap::new();
    for (_, m) in &chain.entries {
        let own = m.assertions.last().map_or(0, |a| a.epochs);
        *epochs.entry(m.wallet()).or_insert(0) += own;
    }
    let total: u128 = epochs.values().map(|e| u128::from(*e)).sum();
    if total == 0 {
        return Ok(vec![(chain.head().wallet().to_string(), pool)]);
    }
    let mut shares: Vec<(&str, u64, u128)> = epochs
        .iter()
        .map(|(w, e)| {
            let num = u128::from(pool) * u128::from(*e);
            (*w, (num / total) as u64, num % total)
        })
        .collect();
    let assigned: u64 = shares.iter().map(|s| s.1).sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|a, b| {
        shares[*b]
            .2
            .cmp(&shares[*a].2)
            .then(shares[*a].0.cmp(shares[*b].0))
    });
    for i in order.into_iter().take((pool - assigned) as usize) {
        shares[i].1 += 1;
    }
    Ok(shares
        .into_iter()
        .map(|(w, a, _)| (w.to_string(), a))
        .collect())
}

/// Validates the lineage of `model_cid`'s manifest and pays `pool` out
/// through the ledger.
pub fn distribute_rewards(
    ledger: &mut Ledger,
    store: &ContentStore,
    keyring: &Keyring,
    model_cid: &Cid,
    pool: u64,
) -> Result<Vec<LedgerEvent>> {
    let record = ledger
        .state()
        .models
        .get(model_cid)
        .ok_or_else(|| Error::NotFound(model_cid.clone()))?;
    let chain = validate_lineage(store, keyring, &record.manifest_cid)?;
    let payouts = apportion_rewards(&chain, pool)?;
    ledger.pay_rewards(model_cid, &payouts)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixture {
        store: ContentStore,
        keyring: Keyring,
        manifests: Vec<Cid>,
    }

    fn chain(wallets: &[(&str, u64)]) -> Fixture {
        let mut store = ContentStore::new();
        let mut keyring = Keyring::default();
        let mut manifests: Vec<Cid> = Vec::new();
        for (i, (wallet, epochs)) in wallets.iter().enumerate() {
            let key = SigningKey::seeded(1, wallet);
            keyring.insert(key.clone());
            let asset = store.put(format!("model {i}").as_bytes());
            let summary = DataSummary {
                class_counts: BTreeMap::from([(0, 10)]),
                salt: "00".into(),
                digest: format!("{i}"),
            };
            let data = store.put(&summary.to_bytes().unwrap());
            let assertion = TrainingAssertion {
                author: wallet.to_string(),
                epochs: *epochs,
                data_digest: data,
                objective: Objective::Qn,
                timestamp: i as u64 * 1000,
            };
            let m =
                build_manifest(&store, &asset, manifests.last(), assertion, wallet, &key).unwrap();
            manifests.push(store_manifest(&mut store, &m).unwrap());
        }
        Fixture {
            store,
            keyring,
            manifests,
        }
    }

    #[test]
    fn genesis_manifest_verifies() {
        let f = chain(&[("0xa", 3)]);
        let m = Manifest::parse(f.store.get(&f.manifests[0]).unwrap()).unwrap();
        assert!(m.ingredients.is_empty());
        assert!(verify_manifest(&m, f.keyring.get("0xa").unwrap()).unwrap());
        assert!(!verify_manifest(&m, &SigningKey::seeded(2, "0xa")).unwrap());
    }

    #[test]
    fn deep_chain_walks_in_order() {
        let wallets: Vec<(String, u64)> = (0..10).map(|i| (format!("0x{i}"), i)).collect();
        let refs: Vec<(&str, u64)> = wallets.iter().map(|(w, e)| (w.as_str(), *e)).collect();
        let f = chain(&refs);
        let c = validate_lineage(&f.store, &f.keyring, f.manifests.last().unwrap()).unwrap();
        assert_eq!(c.len(), 10);
        let epochs: Vec<u64> = c.head().assertions.iter().map(|a| a.epochs).collect();
        assert_eq!(epochs, (0..10).collect::<Vec<_>>());
        let two = validate_lineage(&f.store, &f.keyring, &f.manifests[1]).unwrap();
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn canonical_serialization_is_stable() {
        let f = chain(&[("0xa", 1), ("0xb", 2)]);
        let bytes = f.store.get(&f.manifests[1]).unwrap();
        let m = Manifest::parse(bytes).unwrap();
        assert_eq!(m.canonical_bytes().unwrap(), bytes);
        let text = std::str::from_utf8(bytes).unwrap();
        assert!(text.contains("\"crypto.addresses\""));
        assert!(text.starts_with("{\"assertions\""));
    }

    #[test]
    fn byte_flip_in_mid_chain_manifest_is_caught() {
        let mut f = chain(&[("0xa", 1), ("0xb", 2), ("0xc", 3)]);
        let mid = f.manifests[1].clone();
        let mut bytes = f.store.get(&mid).unwrap().to_vec();
        bytes[10] ^= 1;
        f.store.overwrite_unchecked(&mid, bytes).unwrap();
        match validate_lineage(&f.store, &f.keyring, &f.manifests[2]) {
            Err(Error::Lineage { cid, .. }) => assert_eq!(cid, mid),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn re_signing_with_wrong_key_is_reported() {
        let mut f = chain(&[("0xa", 1), ("0xb", 2)]);
        let mut m = Manifest::parse(f.store.get(&f.manifests[1]).unwrap()).unwrap();
        m.assertions[1].epochs = 99;
        let forger = SigningKey::from_bytes("0xb", [7; 32]);
        m.signature = forger.sign(&m.signing_bytes().unwrap());
        let forged = store_manifest(&mut f.store, &m).unwrap();
        match validate_lineage(&f.store, &f.keyring, &forged) {
            Err(Error::Lineage { cid, reason }) => {
                assert_eq!(cid, forged);
                assert!(reason.contains("signature"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_parent_fails_to_build() {
        let f = chain(&[("0xa", 1)]);
        let key = SigningKey::seeded(1, "0xa");
        let asset = f.manifests[0].clone();
        let a = TrainingAssertion {
            author: "0xa".into(),
            epochs: 1,
            data_digest: f.manifests[0].clone(),
            objective: Objective::Qn,
            timestamp: 0,
        };
        assert!(build_manifest(&f.store, &asset, Some(&Cid::of(b"none")), a, "0xa", &key).is_err());
    }

    #[test]
    fn reward_examples() {
        let single = chain(&[("0xa", 4), ("0xa", 6)]);
        let c = validate_lineage(&single.store, &single.keyring, &single.manifests[1]).unwrap();
        assert_eq!(
            apportion_rewards(&c, 77).unwrap(),
            vec![("0xa".to_string(), 77)]
        );

        let f = chain(&[("0xa", 50), ("0xb", 75), ("0xc", 75)]);
        let c = validate_lineage(&f.store, &f.keyring, &f.manifests[2]).unwrap();
        let r = apportion_rewards(&c, 1000).unwrap();
        assert_eq!(
            r,
            vec![
                ("0xa".into(), 250),
                ("0xb".into(), 375),
                ("0xc".into(), 375)
            ]
        );

        let even = chain(&[("0xa", 50), ("0xb", 50)]);
        let c = validate_lineage(&even.store, &even.keyring, &even.manifests[1]).unwrap();
        assert_eq!(
            apportion_rewards(&c, 100).unwrap(),
            vec![("0xa".into(), 50), ("0xb".into(), 50)]
        );
        assert_eq!(
            apportion_rewards(&c, 101).unwrap(),
            vec![("0xa".into(), 51), ("0xb".into(), 50)]
        );

        let idle = chain(&[("0xa", 0), ("0xb", 0)]);
        let c = validate_lineage(&idle.store, &idle.keyring, &idle.manifests[1]).unwrap();
        assert_eq!(apportion_rewards(&c, 9).unwrap(), vec![("0xb".into(), 9)]);
    }

    #[test]
    fn keyring_round_trip() {
        let mut ring = Keyring::default();
        ring.insert(SigningKey::seeded(3, "n0"));
        ring.insert(SigningKey::seeded(3, "n1"));
        assert_eq!(Keyring::from_json(&ring.to_json().unwrap()).unwrap(), ring);
        assert!(Keyring::from_json("{\"x\": \"00\"}").is_err());
    }
}
