use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::Cid;
use crate::error::{Error, Result};

/// In-memory content-addressed blob store with directory persistence, one
/// file per blob named by its CID.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContentStore {
    blobs: BTreeMap<Cid, Vec<u8>>,
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `bytes` and returns their CID; storing the same bytes twice is a no-op.
    pub fn put(&mut self, bytes: &[u8]) -> Cid {
        let cid = Cid::of(bytes);
        self.blobs
            .entry(cid.clone())
            .or_insert_with(|| bytes.to_vec());
        cid
    }

    /// Returns the blob after checking that it still hashes to `cid`.
    pub fn get(&self, cid: &Cid) -> Result<&[u8]> {
        let bytes = self
            .blobs
            .get(cid)
            .ok_or_else(|| Error::NotFound(cid.clone()))?;
        if Cid::of(bytes) != *cid {
            return Err(Error::Corrupt(cid.clone()));
        }
        Ok(bytes)
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.blobs.contains_key(cid)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Replaces stored bytes without rehashing, as a damaged disk would.
    pub fn overwrite_unchecked(&mut self, cid: &Cid, bytes: Vec<u8>) -> Result<()> {
        let slot = self
            .blobs
            .get_mut(cid)
            .ok_or_else(|| Error::NotFound(cid.clone()))?;
        *slot = bytes;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Cid, &[u8])> {
        self.blobs.iter().map(|(c, b)| (c, b.as_slice()))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (cid, bytes) in &self.blobs {
            fs::write(dir.join(cid.as_str()), bytes)?;
        }
        Ok(())
    }

    /// Loads every blob in `dir`. Files must be named by a CID; content is
    /// checked lazily by [`ContentStore::get`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut store = ContentStore::new();
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            let expected = Cid::parse(&name).ok_or_else(|| Error::Format {
                path: path.clone(),
                reason: "file name is not a CID".into(),
            })?;
            store.blobs.insert(expected, fs::read(&path)?);
        }
        Ok(store)
    }
}
