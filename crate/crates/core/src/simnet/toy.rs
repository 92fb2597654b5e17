//! Prototype generator standing in for a generative model. Training pulls
//! prototypes onto training latents, so memorization grows with epochs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{Latent, Origin, SampleRecord};
use crate::error::{Error, Result};
use crate::seed::SimRng;

const BLOB_MAGIC: &[u8; 8] = b"FMTOY\x00\x01\x00";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub prototypes_per_class: usize,
    /// Pull rate towards a training latent.
    pub eta: f64,
    /// Per-epoch decay of unused prototypes towards the class mean.
    pub forget_rate: f64,
    /// Initial prototype spread relative to the local class spread.
    pub init_spread: f64,
    pub noise_sigma: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            prototypes_per_class: 20,
            eta: 0.1,
            forget_rate: 0.02,
            init_spread: 1.0,
            noise_sigma: 0.05,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prototypes_per_class == 0 {
            return Err(Error::Config(
                "trainer.prototypes_per_class must be at least 1".into(),
            ));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) || !(0.0..=1.0).contains(&self.forget_rate) {
            return Err(Error::Config(
                "trainer.eta must lie in (0, 1] and forget_rate in [0, 1]".into(),
            ));
        }
        if !(self.noise_sigma > 0.0) || !(self.init_spread >= 0.0) {
            return Err(Error::Config("trainer.noise_sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub latent_dim: usize,
    /// `prototypes[class][m]`, classes numbered from 0.
    pub prototypes: Vec<Vec<Vec<f64>>>,
    pub noise_sigma: f64,
    pub trained_epochs: u64,
}

fn class_members<'a>(
    records: &'a [SampleRecord],
    indices: &[usize],
    class: usize,
) -> Vec<&'a [f64]> {
    indices
        .iter()
        .map(|&i| &records[i])
        .filter(|r| r.class_id() as usize == class)
        .map(|r| r.latent.values.as_slice())
        .collect()
}

fn mean_of(points: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for p in points {
        for (a, b) in m.iter_mut().zip(p.iter()) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= points.len() as f64);
    m
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ToyModel {
    /// Fresh model: prototypes scattered around each local class mean with
    /// `init_spread` times the mean per-dimension class spread.
    pub fn init(
        records: &[SampleRecord],
        train: &[usize],
        classes: usize,
        cfg: &ToyConfig,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.latent.dim())
            .ok_or_else(|| Error::domain("cannot initialize a model without data"))?;
        let mut prototypes = Vec::with_capacity(classes);
        for class in 0..classes {
            let pts = class_members(records, train, class);
            if pts.is_empty() {
                return Err(Error::domain(format!(
                    "no local training data for class {class}"
                )));
            }
            let mean = mean_of(&pts, dim);
            let sd = if pts.len() < 2 {
                0.0
            } else {
                (0..dim)
                    .map(|j| {
                        let v = pts.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>()
                            / pts.len() as f64;
                        v.sqrt()
                    })
                    .sum::<f64>()
                    / dim as f64
            };
            let spread = cfg.init_spread * sd;
            prototypes.push(
                (0..cfg.prototypes_per_class)
                    .map(|_| {
                        mean.iter()
                            .map(|m| m + spread * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect(),
            );
        }
        Ok(ToyModel {
            latent_dim: dim,
            prototypes,
            noise_sigma: cfg.noise_sigma,
            trained_epochs: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.prototypes.len()
    }

    /// Runs `epochs` passes over the non-excluded training records. Each
    /// record, in shuffled order, pulls its nearest same-class prototype by
    /// `eta`; prototypes nobody pulled decay towards the class mean of the
    /// non-excluded data by `forget_rate`.
    pub fn train_epochs(
        &mut self,
        records: &[SampleRecord],
        train: &[usize],
        excluded: &BTreeSet<String>,
        epochs: u64,
        cfg: &ToyConfig,
        rng: &mut SimRng,
    ) -> Result<()> {
        if epochs == 0 {
            return Err(Error::domain("epochs must be at least 1"));
        }
        let active: Vec<usize> = train
            .iter()
            .copied()
            .filter(|&i| !excluded.contains(&records[i].id))
            .collect();
        for r in active.iter().map(|&i| &records[i]) {
            if r.latent.dim() != self.latent_dim || r.class_id() as usize >= self.classes() {
                return Err(Error::shape(format!(
                    "record {} does not fit the model",
                    r.id
                )));
            }
        }
        let means: Vec<Option<Vec<f64>>> = (0..self.classes())
            .map(|c| {
                let pts = class_members(records, &active, c);
                (!pts.is_empty()).then(|| mean_of(&pts, self.latent_dim))
            })
            .collect();
        let mut order = active;
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut pulled: Vec<Vec<bool>> = self
                .prototypes
                .iter()
                .map(|p| vec![false; p.len()])
                .collect();
            for &i in &order {
                let r = &records[i];
                let class = r.class_id() as usize;
                let x = &r.latent.values;
                let protos = &mut self.prototypes[class];
                let mut best = (f64::INFINITY, 0);
                for (m, p) in protos.iter().enumerate() {
                    let d = sq_dist(p, x);
                    if d < best.0 {
                        best = (d, m);
                    }
                }
                for (p, xv) in protos[best.1].iter_mut().zip(x) {
                    *p += cfg.eta * (xv - *p);
                }
                pulled[class][best.1] = true;
            }
            if cfg.forget_rate > 0.0 {
                for (class, protos) in self.prototypes.iter_mut().enumerate() {
                    let Some(mean) = &means[class] else { continue };
                    for (p, used) in protos.iter_mut().zip(&pulled[class]) {
                        if !used {
                            for (pv, mv) in p.iter_mut().zip(mean) {
                                *pv += cfg.forget_rate * (mv - *pv);
                            }
                        }
                    }
                }
            }
            self.trained_epochs += 1;
        }
        Ok(())
    }

    /// `n` generated records spread equally over classes, each a uniformly
    /// chosen prototype of its class plus Gaussian noise.
    pub fn generate_samples(
        &self,
        n: usize,
        id_prefix: &str,
        rng: &mut SimRng,
    ) -> Result<Vec<SampleRecord>> {
        let classes = self.classes();
        if n < classes {
            return Err(Error::domain(format!(
                "cannot spread {n} samples over {classes} classes"
            )));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % classes;
            let protos = &self.prototypes[class];
            let p = &protos[rng.random_range(0..protos.len())];
            let values = p
                .iter()
                .map(|v| v + self.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            out.push(SampleRecord {
                id: format!("{id_prefix}{i:05}"),
                latent: Latent::new(values, class as u32)?,
                origin: Origin::Generated,
                owner: None,
                aug_seed: rng.random(),
            });
        }
        Ok(out)
    }

    /// Binary blob: magic, header integers and f64 values, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = self.prototypes.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(48 + self.classes() * m * self.latent_dim * 8);
        out.extend_from_slice(BLOB_MAGIC);
        for v in [
            self.classes() as u64,
            m as u64,
            self.latent_dim as u64,
            self.trained_epochs,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.noise_sigma.to_le_bytes());
        for p in self.prototypes.iter().flatten() {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::shape(format!("model blob: {m}"));
        if bytes.len() < 48 || &bytes[..8] != BLOB_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap() };
        let (classes, m, dim, epochs) = (
            u64::from_le_bytes(word(0)) as usize,
            u64::from_le_bytes(word(1)) as usize,
            u64::from_le_bytes(word(2)) as usize,
            u64::from_le_bytes(word(3)),
        );
        let noise_sigma = f64::from_le_bytes(word(4));
        let count = classes
            .checked_mul(m)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != 48 + count * 8 {
            return Err(bad("length does not match header"));
        }
        let values: Vec<f64> = bytes[48..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let prototypes = values
            .chunks(m * dim.max(1))
            .map(|class| class.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())
            .collect();
        Ok(ToyModel {
            latent_dim: dim,
            prototypes,
            noise_sigma,
            trained_epochs: epochs,
        })
    }
}
