//! Synthesized verifier weights. The MLP is wired so that its response is an
//! affine function of the mean diagonal correlation, with threshold and slope
//! fitted on seeded probe pairs drawn from the world's latent distribution.

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{DenseLayer, Mlp};
use super::weights::{VerifierGeometry, VerifierWeights, HIDDEN_SIZES};
use super::{PooledFeatures, Verifier};
use crate::embedding::{EmbeddingConfig, EmbeddingSpace, Latent, Origin, SampleRecord};
use crate::error::{Error, Result};
use crate::seed::{self, SimRng};

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub windows: usize,
    pub gem_p: f64,
    /// Latent distance under which a pair counts as a duplicate.
    pub dup_radius: f64,
    /// Latent distance range of near-miss negatives.
    pub near_miss: (f64, f64),
    pub center_sd: f64,
    pub sample_sd: f64,
    pub fit_pairs: usize,
    pub holdout_pairs: usize,
    /// Score given to the hardest fitted probes on either side of the threshold.
    pub margin_score: f64,
    pub min_duplicate_score: f64,
    pub max_random_score: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            windows: 55,
            gem_p: 3.0,
            dup_radius: 0.5,
            near_miss: (2.0, 4.0),
            center_sd: 3.0,
            sample_sd: 1.0,
            fit_pairs: 300,
            holdout_pairs: 200,
            margin_score: 0.95,
            min_duplicate_score: 0.9,
            max_random_score: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub threshold: f64,
    pub slope: f64,
    pub min_positive: f64,
    pub max_negative: f64,
    pub holdout_min_duplicate: f64,
    pub holdout_max_random: f64,
}

/// Mean of the diagonal of `C_qi`, i.e. the average same-window correlation.
pub(crate) fn mean_diagonal(q: &PooledFeatures, i: &PooledFeatures) -> f64 {
    let s: f64 = (0..q.rows)
        .map(|a| crate::embedding::dot(q.row(a), i.row(a)))
        .sum();
    s / q.rows as f64
}

struct Probes<'a> {
    space: &'a EmbeddingSpace,
    verifier: &'a Verifier,
    cfg: &'a CalibrationConfig,
    rng: SimRng,
}

impl Probes<'_> {
    fn gaussian(&mut self, sd: f64, center: Option<&[f64]>) -> Vec<f64> {
        let l = self.space.config().latent_dim;
        (0..l)
            .map(|j| center.map_or(0.0, |c| c[j]) + sd * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn sample(&mut self) -> Vec<f64> {
        let center = self.gaussian(self.cfg.center_sd, None);
        self.gaussian(self.cfg.sample_sd, Some(&center))
    }

    fn offset(&mut self, base: &[f64], distance: f64) -> Vec<f64> {
        let dir = self.gaussian(1.0, None);
        let n = crate::embedding::norm(&dir);
        base.iter()
            .zip(&dir)
            .map(|(b, d)| b + distance * d / n)
            .collect()
    }

    fn diag(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let pool = |v: &[f64]| -> Result<PooledFeatures> {
            let record = SampleRecord {
                id: String::new(),
                latent: Latent::new(v.to_vec(), 0)?,
                origin: Origin::Train,
                owner: None,
                aug_seed: 0,
            };
            self.verifier.pool(&self.space.expand_feature_map(&record)?)
        };
        Ok(mean_diagonal(&pool(a)?, &pool(b)?))
    }

    fn duplicate(&mut self, exact: bool) -> Result<f64> {
        let a = self.sample();
        let r = if exact {
            0.0
        } else {
            self.cfg.dup_radius * self.rng.random::<f64>()
        };
        let b = self.offset(&a, r);
        self.diag(&a, &b)
    }

    fn near_miss(&mut self) -> Result<f64> {
        let a = self.sample();
        let (lo, hi) = self.cfg.near_miss;
        let r = self.rng.random_range(lo..=hi);
        let b = self.offset(&a, r);
        self.diag(&a, &b)
    }

    fn same_class(&mut self) -> Result<f64> {
        let center = self.gaussian(self.cfg.center_sd, None);
        let a = self.gaussian(self.cfg.sample_sd, Some(&center));
        let b = self.gaussian(self.cfg.sample_sd, Some(&center));
        self.diag(&a, &b)
    }

    fn cross_class(&mut self) -> Result<f64> {
        let (a, b) = (self.sample(), self.sample());
        self.diag(&a, &b)
    }
}

/// Builds the MLP computing `slope/2 · (mean_diag(C) − threshold)`.
fn readout(geometry: &VerifierGeometry, threshold: f64, slope: f64) -> Result<Mlp> {
    let w = geometry.windows;
    let n = geometry.mlp_input();
    let k = slope / 2.0;
    let mut first = vec![0.0; n * HIDDEN_SIZES[0]];
    let mut bias = vec![0.0; HIDDEN_SIZES[0]];
    for a in 0..w {
        first[a * w + a] = k / w as f64;
        first[n + a * w + a] = -k / w as f64;
    }
    bias[0] = -k * threshold;
    bias[1] = k * threshold;
    let mut second = vec![0.0; HIDDEN_SIZES[0] * HIDDEN_SIZES[1]];
    second[0] = 1.0;
    second[HIDDEN_SIZES[0] + 1] = 1.0;
    let mut third = vec![0.0; HIDDEN_SIZES[1]];
    third[0] = 1.0;
    third[1] = -1.0;
    Mlp::new(vec![
        DenseLayer::new(n, HIDDEN_SIZES[0], first, bias)?,
        DenseLayer::new(
            HIDDEN_SIZES[0],
            HIDDEN_SIZES[1],
            second,
            vec![0.0; HIDDEN_SIZES[1]],
        )?,
        DenseLayer::new(HIDDEN_SIZES[1], 1, third, vec![0.0])?,
    ])
}

/// Fits verifier weights for `space` and checks them on held-out probes.
pub fn calibrate_weights(
    space: &EmbeddingSpace,
    cfg: &CalibrationConfig,
) -> Result<(VerifierWeights, CalibrationReport)> {
    let ec = space.config();
    let geometry = VerifierGeometry {
        map_height: ec.map_height,
        map_width: ec.map_width,
        map_depth: ec.map_depth,
        windows: cfg.windows,
    };
    let reduce = VerifierWeights::seeded_reduction(space.world_seed(), &geometry);
    let probe_verifier =
        Verifier::new(VerifierWeights::zeros(geometry, cfg.gem_p, reduce.clone())?)?;

    let mut fit = Probes {
        space,
        verifier: &probe_verifier,
        cfg,
        rng: seed::stream(space.world_seed(), "verifier.calibration.fit", 0),
    };
    let mut min_positive = f64::INFINITY;
    let mut max_negative = f64::NEG_INFINITY;
    for _ in 0..cfg.fit_pairs {
        min_positive = min_positive.min(fit.duplicate(false)?);
        for v in [fit.near_miss()?, fit.same_class()?, fit.cross_class()?] {
            max_negative = max_negative.max(v);
        }
    }
    let gap = min_positive - max_negative;
    if !(gap > 0.0) {
        return Err(Error::Calibration(format!(
            "duplicate and non-duplicate probes overlap: min duplicate correlation {min_positive:.6}, \
             max non-duplicate correlation {max_negative:.6}"
        )));
    }
    let threshold = (min_positive + max_negative) / 2.0;
    let logit = (cfg.margin_score / (1.0 - cfg.margin_score)).ln();
    let slope = 2.0 * logit / gap;
    let weights = VerifierWeights::new(
        geometry,
        cfg.gem_p,
        reduce,
        readout(&geometry, threshold, slope)?,
    )?;

    let verifier = Verifier::new(weights.clone())?;
    let mut held = Probes {
        space,
        verifier: &verifier,
        cfg,
        rng: seed::stream(space.world_seed(), "verifier.calibration.holdout", 0),
    };
    let score = |d: f64| super::sigmoid(slope * (d - threshold));
    let mut holdout_min_duplicate = f64::INFINITY;
    let mut holdout_max_random = f64::NEG_INFINITY;
    for i in 0..cfg.holdout_pairs {
        holdout_min_duplicate = holdout_min_duplicate.min(score(held.duplicate(i % 2 == 0)?));
        holdout_max_random = holdout_max_random.max(score(held.cross_class()?));
    }
    let report = CalibrationReport {
        threshold,
        slope,
        min_positive,
        max_negative,
        holdout_min_duplicate,
        holdout_max_random,
    };
    if holdout_min_duplicate < cfg.min_duplicate_score || holdout_max_random > cfg.max_random_score
    {
        return Err(Error::Calibration(format!(
            "held-out probes missed targets: {report:?}"
        )));
    }
    Ok((weights, report))
}

/// Calibrated weights for the default embedding space of `world_seed`.
pub fn calibrate_default_weights(world_seed: u64) -> Result<VerifierWeights> {
    let space = EmbeddingSpace::new(world_seed, EmbeddingConfig::default())?;
    Ok(calibrate_weights(&space, &CalibrationConfig::default())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_is_deterministic_and_meets_targets() {
        let space = EmbeddingSpace::new(42, EmbeddingConfig::default()).unwrap();
        let cfg = CalibrationConfig::default();
        let (a, report) = calibrate_weights(&space, &cfg).unwrap();
        let (b, _) = calibrate_weights(&space, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(report.holdout_min_duplicate >= 0.9, "{report:?}");
        assert!(report.holdout_max_random <= 0.2, "{report:?}");
    }

    #[test]
    fn readout_matches_closed_form() {
        let space = EmbeddingSpace::new(7, EmbeddingConfig::default()).unwrap();
        let (weights, report) = calibrate_weights(&space, &CalibrationConfig::default()).unwrap();
        let v = Verifier::new(weights).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..5 {
            let pooled: Vec<PooledFeatures> = (0..2)
                .map(|_| {
                    let z: Vec<f64> = (0..32)
                        .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let r = SampleRecord {
                        id: String::new(),
                        latent: Latent::new(z, 0).unwrap(),
                        origin: Origin::Generated,
                        owner: None,
                        aug_seed: 0,
                    };
                    v.pool(&space.expand_feature_map(&r).unwrap()).unwrap()
                })
                .collect();
            let d = mean_diagonal(&pooled[0], &pooled[1]);
            let expected = super::super::sigmoid(report.slope * (d - report.threshold));
            let got = v.score_pooled(&pooled[0], &pooled[1]).unwrap();
            assert!((got - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn impossible_targets_fail_with_diagnostics() {
        let space = EmbeddingSpace::new(1, EmbeddingConfig::default()).unwrap();
        let cfg = CalibrationConfig {
            near_miss: (0.0, 0.1),
            ..CalibrationConfig::default()
        };
        match calibrate_weights(&space, &cfg) {
            Err(Error::Calibration(msg)) => assert!(msg.contains("overlap"), "{msg}"),
            other => panic!("expected calibration error, got {other:?}"),
        }
    }
}
