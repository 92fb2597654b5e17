use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{Latent, Origin, SampleRecord};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub classes: usize,
    pub per_class: usize,
    pub latent_dim: usize,
    /// Standard deviation of class centres around the origin.
    pub center_sd: f64,
    /// Standard deviation of samples around their class centre.
    pub sample_sd: f64,
    pub duplicate_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            classes: 10,
            per_class: 400,
            latent_dim: 32,
            center_sd: 3.0,
            sample_sd: 1.0,
            duplicate_rate: 0.1,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self, nodes: usize) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("world.classes must be at least 2".into()));
        }
        if self.per_class < 4 {
            return Err(Error::Config("world.per_class must be at least 4".into()));
        }
        if !(0.0..1.0).contains(&self.duplicate_rate) {
            return Err(Error::Config(
                "world.duplicate_rate must lie in [0, 1)".into(),
            ));
        }
        if self.latent_dim == 0 || !(self.center_sd >= 0.0) || !(self.sample_sd > 0.0) {
            return Err(Error::Config(
                "world latent dimension and spreads must be positive".into(),
            ));
        }
        if nodes == 0 {
            return Err(Error::Config("a world needs at least one node".into()));
        }
        if self.per_class / nodes < 4 {
            return Err(Error::Config(format!(
                "world.per_class = {} cannot give each of {nodes} nodes at least 4 samples per class",
                self.per_class
            )));
        }
        Ok(())
    }
}

/// One node's private data, as indices into [`WorldDataset::records`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldDataset {
    pub config: WorldConfig,
    pub records: Vec<SampleRecord>,
    pub node_splits: Vec<NodeSplit>,
    /// Copy record id → id of the record whose latent it copies.
    pub duplicates: BTreeMap<String, String>,
    pub centers: Vec<Vec<f64>>,
}

impl WorldDataset {
    pub fn train_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.node_splits
            .iter()
            .flat_map(|s| s.train.iter().copied())
    }

    pub fn test_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.node_splits.iter().flat_map(|s| s.test.iter().copied())
    }
}

/// Gaussian class clusters split equally by class across `nodes`, each
/// node's share halved into train and test, then a fraction of training
/// latents per class overwritten with copies of other training latents.
pub fn generate_world(cfg: &WorldConfig, nodes: usize, world_seed: u64) -> Result<WorldDataset> {
    cfg.validate(nodes)?;
    let share = cfg.per_class / nodes;
    let n_train = share / 2;
    let mut records = Vec::with_capacity(cfg.classes * cfg.per_class);
    let mut node_splits = vec![NodeSplit::default(); nodes];
    let mut centers = Vec::with_capacity(cfg.classes);
    for class in 0..cfg.classes {
        let mut rng = seed::stream(world_seed, "world.class", class as u64);
        let center: Vec<f64> = (0..cfg.latent_dim)
            .map(|_| cfg.center_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let base = records.len();
        for i in 0..cfg.per_class {
            let values = center
                .iter()
                .map(|c| c + cfg.sample_sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let index = (class * cfg.per_class + i) as u64;
            records.push(SampleRecord {
                id: format!("c{class:03}-{i:05}"),
                latent: Latent::new(values, class as u32)?,
                origin: Origin::Test,
                owner: None,
                aug_seed: seed::derive(world_seed, "world.aug", index),
            });
        }
        let mut order: Vec<usize> = (base..base + cfg.per_class).collect();
        order.shuffle(&mut rng);
        for (node, chunk) in order.chunks_exact(share).take(nodes).enumerate() {
            for (j, &idx) in chunk.iter().enumerate() {
                records[idx].owner = Some(node as u32);
                if j < n_train {
                    records[idx].origin = Origin::Train;
                    node_splits[node].train.push(idx);
                } else {
                    node_splits[node].test.push(idx);
                }
            }
        }
        centers.push(center);
    }
    for s in &mut node_splits {
        s.train.sort_unstable();
        s.test.sort_unstable();
    }

    let mut duplicates = BTreeMap::new();
    if cfg.duplicate_rate > 0.0 {
        for class in 0..cfg.classes {
            let mut rng = seed::stream(world_seed, "world.duplicates", class as u64);
            let mut train: Vec<usize> = node_splits
                .iter()
                .flat_map(|s| s.train.iter().copied())
                .filter(|&i| records[i].class_id() == class as u32)
                .collect();
            train.sort_unstable();
            train.shuffle(&mut rng);
            let n_copies = (cfg.duplicate_rate * train.len() as f64).round() as usize;
            let (copies, sources) = train.split_at(n_copies.min(train.len() - 1));
            for &c in copies {
                let s = sources[rng.random_range(0..sources.len())];
                records[c].latent = records[s].latent.clone();
                duplicates.insert(records[c].id.clone(), records[s].id.clone());
            }
        }
    }
    Ok(WorldDataset {
        config: cfg.clone(),
        records,
        node_splits,
        duplicates,
        centers,
    })
}
