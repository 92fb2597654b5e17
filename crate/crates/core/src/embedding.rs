//! The synthetic sample world as seen by the fingerprinter: latents, the
//! 256-dimensional fingerprint space, spatial feature maps, and the
//! exponentiated-cosine similarity kernel with its contrastive loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const EMBEDDING_DIM: usize = 256;

/// Ground-truth content of a sample. Stands in for raw image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub values: Vec<f64>,
    pub class_id: u32,
}

impl Latent {
    pub fn new(values: Vec<f64>, class_id: u32) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("latent has non-finite entries"));
        }
        Ok(Latent { values, class_id })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Little-endian encoding of the values; used by privacy scans.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::shape(format!(
                "embedding has {} entries, expected {EMBEDDING_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("embedding has non-finite entries"));
        }
        Ok(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn l2_distance(&self, other: &Embedding) -> f64 {
        squared_distance(&self.0, &other.0).sqrt()
    }
}

/// H×W×D spatial feature grid, stored row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(Error::shape("feature map dimensions must be at least 1"));
        }
        if data.len() != height * width * depth {
            return Err(Error::shape(format!(
                "feature map data has {} entries, expected {}",
                data.len(),
                height * width * depth
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("feature map has non-finite entries"));
        }
        Ok(FeatureMap {
            height,
            width,
            depth,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Channel vector at zero-based `(row, col)`.
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.depth;
        &self.data[start..start + self.depth]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Train,
    Test,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub latent: Latent,
    pub origin: Origin,
    /// Index of the owning node, if any.
    pub owner: Option<u32>,
    pub aug_seed: u64,
}

impl SampleRecord {
    pub fn class_id(&self) -> u32 {
        self.latent.class_id
    }
}

/// A sample reduced to what the memorization pipeline needs.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSample {
    pub id: String,
    pub class_id: u32,
    pub embedding: Embedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Temperature of the exponentiated cosine.
    pub lambda: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { lambda: 0.1 }
    }
}

impl KernelConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(KernelConfig { lambda })
    }
}

/// Four independent partial sums, so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine similarity of two nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cosine of {} vs {} entries",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine of a zero-norm vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn log_kernel(a: &Embedding, b: &Embedding, cfg: &KernelConfig) -> Result<f64> {
    Ok(cosine(a.as_slice(), b.as_slice())? / cfg.lambda)
}

/// `exp(cos(a, b) / lambda)`.
pub fn similarity_kernel(a: &Embedding, b: &Embedding, cfg: &KernelConfig) -> Result<f64> {
    Ok(log_kernel(a, b, cfg)?.exp())
}

/// Contrastive objective over `(anchor, augmented)` pairs: each anchor must
/// pick out its own augmentation against every other anchor in the batch.
/// Evaluated in log space.
pub fn contrastive_loss(batch: &[(Embedding, Embedding)], cfg: &KernelConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::domain("contrastive loss of an empty batch"));
    }
    let mut total = 0.0;
    for (i, (anchor, augmented)) in batch.iter().enumerate() {
        let positive = log_kernel(anchor, augmented, cfg)?;
        let mut terms = vec![positive];
        for (j, (other, _)) in batch.iter().enumerate() {
            if j != i {
                terms.push(log_kernel(anchor, other, cfg)?);
            }
        }
        total -= positive - log_sum_exp(&terms);
    }
    Ok(total)
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub latent_dim: usize,
    /// Pre-activation gain of the latent projection.
    pub gain: f64,
    /// Maximum L2 norm of augmentation noise.
    pub aug_noise: f64,
    pub map_height: usize,
    pub map_width: usize,
    pub map_depth: usize,
    /// Frequency of the random Fourier features that make up map cells.
    pub map_frequency: f64,
    /// Number of shared random projections map cells draw from.
    pub map_bank: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            latent_dim: 32,
            gain: 0.3,
            aug_noise: 0.05,
            map_height: 7,
            map_width: 7,
            map_depth: 64,
            map_frequency: 1.0,
            map_bank: 256,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config(
                "embedding.latent_dim must be at least 1".into(),
            ));
        }
        if self.map_height == 0 || self.map_width == 0 || self.map_depth < 4 {
            return Err(Error::Config(
                "feature map needs height, width >= 1 and depth >= 4".into(),
            ));
        }
        if self.map_depth % 4 != 0 {
            return Err(Error::Config(
                "embedding.map_depth must be divisible by 4".into(),
            ));
        }
        if self.map_bank == 0 {
            return Err(Error::Config("embedding.map_bank must be at least 1".into()));
        }
        if !(self.gain > 0.0 && self.map_frequency > 0.0 && self.aug_noise >= 0.0) {
            return Err(Error::Config("embedding gains must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed seeded maps from latents to fingerprints and from fingerprints to
/// spatial feature maps. Built once per world; all methods are pure.
#[derive(Clone, Debug)]
pub struct EmbeddingSpace {
    world_seed: u64,
    cfg: EmbeddingConfig,
    /// EMBEDDING_DIM × latent_dim, row-major.
    projection: Vec<f64>,
    /// `map_bank × EMBEDDING_DIM` Gaussian projections, row-major.
    bank: Vec<f64>,
    /// Per cell and channel: bank row, cosine and sine of the phase.
    cell_features: Vec<(usize, f64, f64)>,
}

impl EmbeddingSpace {
    pub fn new(world_seed: u64, cfg: EmbeddingConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::stream(world_seed, "embedding.projection", 0);
        let projection = (0..EMBEDDING_DIM * cfg.latent_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();

        let mut rng = seed::stream(world_seed, "embedding.map.bank", 0);
        let bank = (0..cfg.map_bank * EMBEDDING_DIM)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut rng = seed::stream(world_seed, "embedding.map.cells", 0);
        let cell_features = (0..cfg.map_height * cfg.map_width * cfg.map_depth)
            .map(|_| {
                let row = rng.random_range(0..cfg.map_bank);
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                (row, phase.cos(), phase.sin())
            })
            .collect();
        Ok(EmbeddingSpace {
            world_seed,
            cfg,
            projection,
            bank,
            cell_features,
        })
    }

    pub fn world_seed(&self) -> u64 {
        self.world_seed
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.cfg
    }

    /// Un-augmented fingerprint of a latent: `tanh(gain · P z / sqrt(L))`.
    pub fn embed_latent(&self, latent: &Latent) -> Result<Embedding> {
        let l = self.cfg.latent_dim;
        if latent.dim() != l {
            return Err(Error::shape(format!(
                "latent has {} entries, space expects {l}",
                latent.dim()
            )));
        }
        let scale = self.cfg.gain / (l as f64).sqrt();
        let values = self
            .projection
            .chunks_exact(l)
            .map(|row| (scale * dot(row, &latent.values)).tanh())
            .collect();
        Embedding::new(values)
    }

    /// Fingerprint of a record, optionally with bounded augmentation noise
    /// keyed by the record's `aug_seed`.
    pub fn extract_embedding(&self, record: &SampleRecord, augment: bool) -> Result<Embedding> {
        let clean = self.embed_latent(&record.latent)?;
        if !augment || self.cfg.aug_noise == 0.0 {
            return Ok(clean);
        }
        let mut rng = seed::stream(self.world_seed, "embedding.augment", record.aug_seed);
        let direction: Vec<f64> = (0..EMBEDDING_DIM)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let len = norm(&direction);
        let magnitude = self.cfg.aug_noise * rng.random::<f64>();
        let values = clean
            .as_slice()
            .iter()
            .zip(&direction)
            .map(|(c, d)| c + magnitude * d / len)
            .collect();
        Embedding::new(values)
    }

    /// Spatial feature map derived from a fingerprint. Each cell channel is
    /// a random Fourier feature `cos(ω a·e + b)` with `a` a bank row and `b`
    /// its own phase, so maps of two fingerprints correlate like a Gaussian
    /// kernel of their distance.
    pub fn feature_map(&self, embedding: &Embedding) -> FeatureMap {
        let w = self.cfg.map_frequency;
        let e = embedding.as_slice();
        let (cos, sin): (Vec<f64>, Vec<f64>) = self
            .bank
            .chunks_exact(EMBEDDING_DIM)
            .map(|row| (w * dot(row, e)).sin_cos())
            .map(|(s, c)| (c, s))
            .unzip();
        let data = self
            .cell_features
            .iter()
            .map(|&(row, cb, sb)| cos[row] * cb - sin[row] * sb)
            .collect();
        FeatureMap {
            height: self.cfg.map_height,
            width: self.cfg.map_width,
            depth: self.cfg.map_depth,
            data,
        }
    }

    pub fn feature_maps(&self, embeddings: &[&Embedding]) -> Vec<FeatureMap> {
        embeddings.iter().map(|e| self.feature_map(e)).collect()
    }

    /// Feature map of a record's un-augmented fingerprint.
    pub fn expand_feature_map(&self, record: &SampleRecord) -> Result<FeatureMap> {
        Ok(self.feature_map(&self.embed_latent(&record.latent)?))
    }

    pub fn embed_record(&self, record: &SampleRecord) -> Result<EmbeddedSample> {
        Ok(EmbeddedSample {
            id: record.id.clone(),
            class_id: record.class_id(),
            embedding: self.embed_latent(&record.latent)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(i: usize) -> Embedding {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[i] = 1.0;
        Embedding::new(v).unwrap()
    }

    fn scaled(e: &Embedding, s: f64) -> Embedding {
        Embedding::new(e.as_slice().iter().map(|x| x * s).collect()).unwrap()
    }

    fn record(id: &str, values: Vec<f64>, aug_seed: u64) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            latent: Latent::new(values, 0).unwrap(),
            origin: Origin::Train,
            owner: None,
            aug_seed,
        }
    }

    fn random_latent(seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        (0..32)
            .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn kernel_reference_values() {
        let one = KernelConfig::new(1.0).unwrap();
        assert_abs_diff_eq!(
            similarity_kernel(&unit(0), &unit(0), &one).unwrap(),
            std::f64::consts::E,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            similarity_kernel(&unit(0), &unit(1), &one).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let half = KernelConfig::new(0.5).unwrap();
        let neg = scaled(&unit(3), -1.0);
        assert_abs_diff_eq!(
            similarity_kernel(&unit(3), &neg, &half).unwrap(),
            (-2.0f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kernel_rejects_zero_vectors_and_bad_lambda() {
        let zero = Embedding::new(vec![0.0; EMBEDDING_DIM]).unwrap();
        assert!(matches!(
            similarity_kernel(&zero, &unit(0), &KernelConfig::default()),
            Err(Error::Domain(_))
        ));
        assert!(KernelConfig::new(0.0).is_err());
        assert!(KernelConfig::new(-1.0).is_err());
    }

    #[test]
    fn contrastive_loss_singleton_is_zero() {
        let a = unit(0);
        let b = scaled(&unit(1), 2.0);
        let loss = contrastive_loss(&[(a, b)], &KernelConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn contrastive_loss_orthogonal_pair() {
        let one = KernelConfig::new(1.0).unwrap();
        let batch = vec![(unit(0), unit(0)), (unit(1), unit(1))];
        let e = std::f64::consts::E;
        let expected = -2.0 * (e / (e + 1.0)).ln();
        assert_abs_diff_eq!(
            contrastive_loss(&batch, &one).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(expected, 0.626523, epsilon = 1e-6);
        assert!(contrastive_loss(&[], &one).is_err());
    }

    #[test]
    fn embedding_dimension_is_enforced() {
        assert!(matches!(Embedding::new(vec![1.0; 3]), Err(Error::Shape(_))));
        assert!(Embedding::new(vec![f64::NAN; EMBEDDING_DIM]).is_err());
    }

    #[test]
    fn embedding_is_a_function_of_latent() {
        let space = EmbeddingSpace::new(11, EmbeddingConfig::default()).unwrap();
        let z = random_latent(1);
        let a = record("a", z.clone(), 1);
        let b = record("b", z, 2);
        let ea = space.extract_embedding(&a, false).unwrap();
        assert_eq!(ea, space.extract_embedding(&a, false).unwrap());
        assert_eq!(ea, space.extract_embedding(&b, false).unwrap());
        assert_eq!(
            space.expand_feature_map(&a).unwrap(),
            space.expand_feature_map(&b).unwrap()
        );
    }

    #[test]
    fn augmentation_is_bounded() {
        let space = EmbeddingSpace::new(5, EmbeddingConfig::default()).unwrap();
        let z = random_latent(2);
        let clean = space
            .extract_embedding(&record("a", z.clone(), 0), false)
            .unwrap();
        let mut moved = 0;
        for aug_seed in 0..1000 {
            let r = record("a", z.clone(), aug_seed);
            let aug = space.extract_embedding(&r, true).unwrap();
            let dist = aug.l2_distance(&clean);
            assert!(dist <= 0.05 + 1e-12, "seed {aug_seed}: {dist}");
            if dist > 0.0 {
                moved += 1;
            }
            assert_eq!(aug, space.extract_embedding(&r, true).unwrap());
        }
        assert!(moved > 990);
    }

    #[test]
    fn distinct_latents_give_distinct_maps() {
        let space = EmbeddingSpace::new(3, EmbeddingConfig::default()).unwrap();
        for i in 0..100 {
            let a = record("a", random_latent(2 * i + 100), 0);
            let b = record("b", random_latent(2 * i + 101), 0);
            let ma = space.expand_feature_map(&a).unwrap();
            let mb = space.expand_feature_map(&b).unwrap();
            assert_eq!((ma.height(), ma.width(), ma.depth()), (7, 7, 64));
            assert!(ma.data().iter().zip(mb.data()).any(|(x, y)| x != y));
        }
    }

    #[test]
    fn wrong_latent_dimension_is_rejected() {
        let space = EmbeddingSpace::new(3, EmbeddingConfig::default()).unwrap();
        let r = record("a", vec![0.0; 5], 0);
        assert!(space.extract_embedding(&r, false).is_err());
    }
}
