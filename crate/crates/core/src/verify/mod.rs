//! Pairwise copy verification: window pooling of reduced feature maps, a
//! window-by-window correlation matrix and a symmetric MLP readout.

mod calibrate;
mod mlp;
mod pooling;
mod weights;
mod windows;

pub use calibrate::{
    calibrate_default_weights, calibrate_weights, CalibrationConfig, CalibrationReport,
};
pub use mlp::{DenseLayer, Mlp};
pub use pooling::{
    correlation_matrix, gem_pool, generalized_mean, pool_windows, reduce_channels, Pooled,
    PooledFeatures,
};
pub use weights::{
    VerifierGeometry, VerifierWeights, HIDDEN_SIZES, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
pub use windows::{distinct_window_count, generate_windows, Window, WindowSet};

use crate::embedding::{dot, EmbeddingSpace, FeatureMap, SampleRecord};
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights bundled with their window layout.
#[derive(Clone, Debug)]
pub struct Verifier {
    weights: VerifierWeights,
    windows: WindowSet,
}

impl Verifier {
    pub fn new(weights: VerifierWeights) -> Result<Self> {
        let g = weights.geometry();
        let windows = generate_windows(g.map_height, g.map_width, g.windows)?;
        Ok(Verifier { weights, windows })
    }

    pub fn weights(&self) -> &VerifierWeights {
        &self.weights
    }

    pub fn windows(&self) -> &WindowSet {
        &self.windows
    }

    /// Reduces a feature map to a quarter of its depth and pools every window.
    pub fn pool(&self, map: &FeatureMap) -> Result<PooledFeatures> {
        let g = self.weights.geometry();
        if map.depth() != g.map_depth {
            return Err(Error::shape(format!(
                "feature map depth {} but weights expect {}",
                map.depth(),
                g.map_depth
            )));
        }
        let reduced = reduce_channels(map, self.weights.reduce(), g.reduced_depth())?;
        pool_windows(&reduced, &self.windows, self.weights.gem_p())
    }

    /// Raw MLP response to the flattened correlation of `q` against `i`.
    pub fn logit(&self, q: &PooledFeatures, i: &PooledFeatures) -> Result<f64> {
        if q.rows != i.rows || q.cols != i.cols {
            return Err(Error::shape(format!(
                "correlation of {}×{} with {}×{}",
                q.rows, q.cols, i.rows, i.cols
            )));
        }
        // Row-major flattening of C = Q Iᵀ.
        let n = q.rows * i.rows;
        let mlp = self.weights.mlp();
        let support = mlp.input_support();
        let mut flat;
        if mlp.input_dim() == n && support.len() < n {
            flat = vec![0.0; n];
            for &k in support {
                flat[k] = dot(q.row(k / i.rows), i.row(k % i.rows));
            }
        } else {
            flat = Vec::with_capacity(n);
            for a in 0..q.rows {
                flat.extend((0..i.rows).map(|b| dot(q.row(a), i.row(b))));
            }
        }
        Ok(mlp.forward(&flat)?[0])
    }

    /// `σ(MLP(C_qi) + MLP(C_iq))`.
    pub fn score_pooled(&self, q: &PooledFeatures, i: &PooledFeatures) -> Result<f64> {
        let a = self.logit(q, i)?;
        let b = self.logit(i, q)?;
        Ok(sigmoid(a + b))
    }

    pub fn score_maps(&self, q: &FeatureMap, i: &FeatureMap) -> Result<f64> {
        self.score_pooled(&self.pool(q)?, &self.pool(i)?)
    }

    pub fn score_records(
        &self,
        space: &EmbeddingSpace,
        q: &SampleRecord,
        i: &SampleRecord,
    ) -> Result<f64> {
        self.score_maps(&space.expand_feature_map(q)?, &space.expand_feature_map(i)?)
    }
}

/// Verification score of one pair of records in `space`.
pub fn verify_pair(
    space: &EmbeddingSpace,
    q: &SampleRecord,
    i: &SampleRecord,
    weights: &VerifierWeights,
) -> Result<f64> {
    Verifier::new(weights.clone())?.score_records(space, q, i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingConfig, Latent, Origin};
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn record(id: &str, values: Vec<f64>, class: u32) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            latent: Latent::new(values, class).unwrap(),
            origin: Origin::Train,
            owner: None,
            aug_seed: 0,
        }
    }

    fn random_record(rng: &mut impl Rng, id: &str) -> SampleRecord {
        record(
            id,
            (0..32)
                .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            0,
        )
    }

    #[test]
    fn zero_mlp_scores_one_half() {
        let space = EmbeddingSpace::new(3, EmbeddingConfig::default()).unwrap();
        let g = VerifierGeometry::default();
        let w = VerifierWeights::zeros(g, 3.0, VerifierWeights::seeded_reduction(3, &g)).unwrap();
        let mut rng = seed::rng(1);
        let (a, b) = (random_record(&mut rng, "a"), random_record(&mut rng, "b"));
        assert_eq!(verify_pair(&space, &a, &b, &w).unwrap(), 0.5);
    }

    #[test]
    fn scores_are_symmetric_and_in_range() {
        let space = EmbeddingSpace::new(11, EmbeddingConfig::default()).unwrap();
        let v = Verifier::new(VerifierWeights::random(11, VerifierGeometry::default()).unwrap())
            .unwrap();
        let mut rng = seed::rng(2);
        for _ in 0..10 {
            let a = random_record(&mut rng, "a");
            let b = random_record(&mut rng, "b");
            let ab = v.score_records(&space, &a, &b).unwrap();
            let ba = v.score_records(&space, &b, &a).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits());
            assert!(ab > 0.0 && ab < 1.0);
        }
    }

    #[test]
    fn logit_reads_row_major_correlation() {
        // A first layer that picks out entry (0, 1) exposes the flattening order.
        let g = VerifierGeometry {
            map_height: 2,
            map_width: 2,
            map_depth: 4,
            windows: 2,
        };
        let mut w = vec![0.0; 4];
        w[1] = 1.0;
        let mlp = Mlp::new(vec![DenseLayer::new(4, 1, w, vec![0.0]).unwrap()]).unwrap();
        let v = Verifier::new(VerifierWeights::new(g, 1.0, vec![1.0; 4], mlp).unwrap()).unwrap();
        let q = PooledFeatures::from_rows(vec![
            Pooled {
                vector: vec![1.0],
                degenerate: false,
            },
            Pooled {
                vector: vec![0.5],
                degenerate: false,
            },
        ])
        .unwrap();
        let i = PooledFeatures::from_rows(vec![
            Pooled {
                vector: vec![0.25],
                degenerate: false,
            },
            Pooled {
                vector: vec![-1.0],
                degenerate: false,
            },
        ])
        .unwrap();
        assert_eq!(v.logit(&q, &i).unwrap(), -1.0);
        assert_eq!(v.logit(&i, &q).unwrap(), 0.125);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
