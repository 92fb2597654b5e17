//! Memorization detection: per-class distance thresholds, nearest-neighbour
//! candidates, verifier confirmation with count-once bookkeeping, and the
//! exclusion set used for deduplicated training.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::{squared_distance, EmbeddedSample, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::verify::{PooledFeatures, Verifier};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdevMode {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassThreshold {
    pub threshold: f64,
    pub mean: f64,
    pub stdev: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub classes: BTreeMap<u32, ClassThreshold>,
}

impl ClassThresholds {
    pub fn get(&self, class: u32) -> Option<&ClassThreshold> {
        self.classes.get(&class)
    }

    /// Threshold from a list of nearest-neighbour distances.
    pub fn from_distances(distances: &[f64], mode: StdevMode) -> Result<ClassThreshold> {
        let n = distances.len();
        let denom = match mode {
            StdevMode::Population => n,
            StdevMode::Sample => n.saturating_sub(1),
        };
        if n == 0 || denom == 0 {
            return Err(Error::domain("not enough distances for a threshold"));
        }
        let mean = distances.iter().sum::<f64>() / n as f64;
        let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / denom as f64;
        let stdev = var.sqrt();
        Ok(ClassThreshold {
            threshold: mean - 0.5 * stdev,
            mean,
            stdev,
            n_pairs: n,
        })
    }
}

fn group_by_class(samples: &[EmbeddedSample]) -> BTreeMap<u32, Vec<&EmbeddedSample>> {
    let mut groups: BTreeMap<u32, Vec<&EmbeddedSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.class_id).or_default().push(s);
    }
    groups
}

/// Per-class `mean − 0.5·stdev` of each training sample's distance to its
/// nearest same-class neighbour.
pub fn intra_class_thresholds(
    train: &[EmbeddedSample],
    mode: StdevMode,
) -> Result<ClassThresholds> {
    let mut classes = BTreeMap::new();
    for (class, members) in group_by_class(train) {
        if members.len() < 2 {
            return Err(Error::SparseClass {
                class,
                count: members.len(),
            });
        }
        let nearest: Vec<f64> = members
            .iter()
            .enumerate()
            .map(|(i, a)| {
                members
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| squared_distance(a.embedding.as_slice(), b.embedding.as_slice()))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect();
        classes.insert(class, ClassThresholds::from_distances(&nearest, mode)?);
    }
    Ok(ClassThresholds { classes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub generated_id: String,
    pub train_id: String,
    pub l2_distance: f64,
    pub class_id: u32,
}

/// For every generated sample, its `k` nearest same-class training samples
/// closer than the class threshold. Ordered by distance, then generated id,
/// then train id.
pub fn knn_candidates(
    generated: &[EmbeddedSample],
    train: &[EmbeddedSample],
    thresholds: &ClassThresholds,
    k: usize,
) -> Result<Vec<CandidatePair>> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    let groups = group_by_class(train);
    let mut out = Vec::new();
    for g in generated {
        let (Some(members), Some(t)) = (groups.get(&g.class_id), thresholds.get(g.class_id)) else {
            continue;
        };
        let mut near: Vec<(f64, &str)> = members
            .iter()
            .map(|m| {
                let d = squared_distance(g.embedding.as_slice(), m.embedding.as_slice()).sqrt();
                (d, m.id.as_str())
            })
            .filter(|(d, _)| *d < t.threshold)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        out.extend(near.into_iter().take(k).map(|(d, id)| CandidatePair {
            generated_id: g.id.clone(),
            train_id: id.to_string(),
            l2_distance: d,
            class_id: g.class_id,
        }));
    }
    out.sort_by(|a, b| {
        a.l2_distance
            .total_cmp(&b.l2_distance)
            .then_with(|| a.generated_id.cmp(&b.generated_id))
            .then_with(|| a.train_id.cmp(&b.train_id))
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    #[serde(flatten)]
    pub pair: CandidatePair,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub v_a: f64,
    pub v_c: f64,
    pub r_c: f64,
    pub n_generated: usize,
    pub confirmed: Vec<ScoredPair>,
    pub checked: Vec<ScoredPair>,
    pub per_train_counts: BTreeMap<String, u64>,
    pub per_generated_counts: BTreeMap<String, u64>,
}

impl MemorizationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Confirmed pairs as CSV with header `generated_id,train_id,score,l2`.
    pub fn write_confirmed_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generated_id", "train_id", "score", "l2"])?;
        for c in &self.confirmed {
            w.write_record([
                c.pair.generated_id.as_str(),
                c.pair.train_id.as_str(),
                &c.score.to_string(),
                &c.pair.l2_distance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every candidate, then keeps confirmed pairs greedily by score
/// (descending), distance, and ids, so each generated and each training id
/// appears in at most one confirmed pair.
pub fn confirm_matches(
    candidates: &[CandidatePair],
    mut score: impl FnMut(&CandidatePair) -> Result<f64>,
    confirm_threshold: f64,
) -> Result<(Vec<ScoredPair>, Vec<ScoredPair>)> {
    if !(confirm_threshold > 0.0 && confirm_threshold < 1.0) {
        return Err(Error::domain(format!(
            "confirmation threshold must lie in (0, 1), got {confirm_threshold}"
        )));
    }
    let checked = candidates
        .iter()
        .map(|c| {
            let s = score(c)?;
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::domain(format!("verifier score {s} outside [0, 1]")));
            }
            Ok(ScoredPair {
                pair: c.clone(),
                score: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<&ScoredPair> = checked
        .iter()
        .filter(|p| p.score >= confirm_threshold)
        .collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.pair.l2_distance.total_cmp(&b.pair.l2_distance))
            .then_with(|| a.pair.generated_id.cmp(&b.pair.generated_id))
            .then_with(|| a.pair.train_id.cmp(&b.pair.train_id))
    });
    let mut used_gen = BTreeSet::new();
    let mut used_train = BTreeSet::new();
    let mut confirmed = Vec::new();
    for p in order {
        if used_gen.contains(&p.pair.generated_id) || used_train.contains(&p.pair.train_id) {
            continue;
        }
        used_gen.insert(p.pair.generated_id.clone());
        used_train.insert(p.pair.train_id.clone());
        confirmed.push(p.clone());
    }
    Ok((checked, confirmed))
}

fn mean(scores: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = scores.len();
    if n == 0 {
        0.0
    } else {
        scores.sum::<f64>() / n as f64
    }
}

pub fn aggregate_report(
    checked: Vec<ScoredPair>,
    confirmed: Vec<ScoredPair>,
    n_generated: usize,
) -> Result<MemorizationReport> {
    if n_generated == 0 {
        return Err(Error::domain("no generated samples"));
    }
    let checked_keys: BTreeSet<(&str, &str)> = checked
        .iter()
        .map(|p| (p.pair.generated_id.as_str(), p.pair.train_id.as_str()))
        .collect();
    if let Some(p) = confirmed
        .iter()
        .find(|p| !checked_keys.contains(&(p.pair.generated_id.as_str(), p.pair.train_id.as_str())))
    {
        return Err(Error::domain(format!(
            "confirmed pair ({}, {}) was never checked",
            p.pair.generated_id, p.pair.train_id
        )));
    }
    let mut per_train_counts = BTreeMap::new();
    let mut per_generated_counts = BTreeMap::new();
    for p in &confirmed {
        *per_train_counts.entry(p.pair.train_id.clone()).or_insert(0) += 1;
        *per_generated_counts
            .entry(p.pair.generated_id.clone())
            .or_insert(0) += 1;
    }
    let r_c = per_generated_counts.len() as f64 / n_generated as f64;
    if r_c > 1.0 {
        return Err(Error::domain(
            "more confirmed generated samples than generated",
        ));
    }
    Ok(MemorizationReport {
        v_a: mean(checked.iter().map(|p| p.score)),
        v_c: mean(confirmed.iter().map(|p| p.score)),
        r_c,
        n_generated,
        confirmed,
        checked,
        per_train_counts,
        per_generated_counts,
    })
}

/// Nearest-rank percentile of `values` (sorted in place).
pub fn nearest_rank(values: &mut [f64], percentile: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * values.len() as f64).ceil() as usize;
    Some(values[rank.clamp(1, values.len()) - 1])
}

/// Ids whose min-max normalized count is at or above the nearest-rank
/// percentile cutoff and strictly positive. Equal counts give an empty set.
pub fn exclusion_set(counts: &BTreeMap<String, u64>, percentile: f64) -> Result<BTreeSet<String>> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::domain(format!(
            "percentile must lie in (0, 100), got {percentile}"
        )));
    }
    let (Some(&min), Some(&max)) = (counts.values().min(), counts.values().max()) else {
        return Ok(BTreeSet::new());
    };
    if max == min {
        return Ok(BTreeSet::new());
    }
    let span = (max - min) as f64;
    let normalized: Vec<(&String, f64)> = counts
        .iter()
        .map(|(id, c)| (id, (c - min) as f64 / span))
        .collect();
    let mut values: Vec<f64> = normalized.iter().map(|(_, v)| *v).collect();
    let cutoff = nearest_rank(&mut values, percentile).unwrap_or(f64::INFINITY);
    Ok(normalized
        .into_iter()
        .filter(|(_, v)| *v >= cutoff && *v > 0.0)
        .map(|(id, _)| id.clone())
        .collect())
}

/// Cumulative memorization counts of one node's training set. Samples once
/// excluded stay excluded for the rest of training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionTracker {
    pub counts: BTreeMap<String, u64>,
    pub excluded: BTreeSet<String>,
}

impl ExclusionTracker {
    /// Starts with a zero count for every listed training id.
    pub fn new<'a>(train_ids: impl IntoIterator<Item = &'a str>) -> Self {
        ExclusionTracker {
            counts: train_ids
                .into_iter()
                .map(|id| (id.to_string(), 0))
                .collect(),
            excluded: BTreeSet::new(),
        }
    }

    /// Adds one report's counts for known ids and refreshes the exclusion set.
    pub fn record(&mut self, report: &MemorizationReport, percentile: f64) -> Result<()> {
        for (id, c) in &report.per_train_counts {
            if let Some(total) = self.counts.get_mut(id) {
                *total += c;
            }
        }
        let fresh = exclusion_set(&self.counts, percentile)?;
        self.excluded.extend(fresh);
        Ok(())
    }

    pub fn excluded_fraction(&self) -> f64 {
        if self.counts.is_empty() {
            0.0
        } else {
            self.excluded.len() as f64 / self.counts.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub knn_k: usize,
    pub confirm_threshold: f64,
    pub stdev_mode: StdevMode,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            knn_k: 5,
            confirm_threshold: 0.8,
            stdev_mode: StdevMode::Population,
        }
    }
}

/// Window-pooled verifier features of `samples`, keyed by id. Feature maps
/// are built in batches.
pub fn pool_samples<'s>(
    space: &EmbeddingSpace,
    verifier: &Verifier,
    samples: impl IntoIterator<Item = &'s EmbeddedSample>,
) -> Result<HashMap<String, PooledFeatures>> {
    const BATCH: usize = 256;
    let samples: Vec<&EmbeddedSample> = samples.into_iter().collect();
    let mut out = HashMap::with_capacity(samples.len());
    for chunk in samples.chunks(BATCH) {
        let embeddings: Vec<_> = chunk.iter().map(|s| &s.embedding).collect();
        for (s, map) in chunk.iter().zip(space.feature_maps(&embeddings)) {
            out.insert(s.id.clone(), verifier.pool(&map)?);
        }
    }
    Ok(out)
}

/// Verifier scores for candidate pairs. Only samples that occur in some
/// candidate are pooled; training features may be supplied pre-pooled.
pub struct PairScorer<'a> {
    verifier: &'a Verifier,
    generated: HashMap<String, PooledFeatures>,
    train: PooledTrain<'a>,
}

enum PooledTrain<'a> {
    Owned(HashMap<String, PooledFeatures>),
    Shared(&'a HashMap<String, PooledFeatures>),
}

fn referenced<'s>(samples: &'s [EmbeddedSample], ids: &BTreeSet<&str>) -> Vec<&'s EmbeddedSample> {
    samples
        .iter()
        .filter(|s| ids.contains(s.id.as_str()))
        .collect()
}

impl<'a> PairScorer<'a> {
    pub fn new(
        space: &EmbeddingSpace,
        verifier: &'a Verifier,
        generated: &[EmbeddedSample],
        train: &[EmbeddedSample],
        candidates: &[CandidatePair],
    ) -> Result<Self> {
        let ids: BTreeSet<&str> = candidates.iter().map(|p| p.train_id.as_str()).collect();
        let pooled = pool_samples(space, verifier, referenced(train, &ids))?;
        Self::build(
            space,
            verifier,
            generated,
            PooledTrain::Owned(pooled),
            candidates,
        )
    }

    pub fn with_pooled_train(
        space: &EmbeddingSpace,
        verifier: &'a Verifier,
        generated: &[EmbeddedSample],
        pooled_train: &'a HashMap<String, PooledFeatures>,
        candidates: &[CandidatePair],
    ) -> Result<Self> {
        Self::build(
            space,
            verifier,
            generated,
            PooledTrain::Shared(pooled_train),
            candidates,
        )
    }

    fn build(
        space: &EmbeddingSpace,
        verifier: &'a Verifier,
        generated: &[EmbeddedSample],
        train: PooledTrain<'a>,
        candidates: &[CandidatePair],
    ) -> Result<Self> {
        let ids: BTreeSet<&str> = candidates.iter().map(|p| p.generated_id.as_str()).collect();
        Ok(PairScorer {
            verifier,
            generated: pool_samples(space, verifier, referenced(generated, &ids))?,
            train,
        })
    }

    pub fn score(&mut self, pair: &CandidatePair) -> Result<f64> {
        let unknown = |id: &str| Error::domain(format!("unknown sample id {id}"));
        let train = match &self.train {
            PooledTrain::Owned(m) => m,
            PooledTrain::Shared(m) => *m,
        };
        let g = self
            .generated
            .get(&pair.generated_id)
            .ok_or_else(|| unknown(&pair.generated_id))?;
        let t = train
            .get(&pair.train_id)
            .ok_or_else(|| unknown(&pair.train_id))?;
        self.verifier.score_pooled(g, t)
    }
}

/// Runs the whole detection pipeline of `generated` against `train`.
pub fn detect(
    space: &EmbeddingSpace,
    verifier: &Verifier,
    train: &[EmbeddedSample],
    generated: &[EmbeddedSample],
    cfg: &DetectionConfig,
) -> Result<MemorizationReport> {
    let thresholds = intra_class_thresholds(train, cfg.stdev_mode)?;
    let candidates = knn_candidates(generated, train, &thresholds, cfg.knn_k)?;
    let mut scorer = PairScorer::new(space, verifier, generated, train, &candidates)?;
    let (checked, confirmed) =
        confirm_matches(&candidates, |p| scorer.score(p), cfg.confirm_threshold)?;
    aggregate_report(checked, confirmed, generated.len())
}
