use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

const EIGEN_EPS: f64 = 1e-10;
const EIGEN_MAX_ITER: usize = 10_000;
/// Largest tolerated relative residual of a computed square root.
const SQRT_RESIDUAL_TOL: f64 = 1e-6;

/// Sample mean and unbiased covariance of a set of embeddings.
#[derive(Clone, Debug)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub n: usize,
}

impl GaussianSummary {
    pub fn fit(samples: &[Embedding]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::domain(format!(
                "FID needs at least 2 samples, got {n}"
            )));
        }
        let d = samples[0].as_slice().len();
        if samples.iter().any(|s| s.as_slice().len() != d) {
            return Err(Error::shape("embeddings of different dimension"));
        }
        let x = DMatrix::from_fn(n, d, |i, j| samples[i].as_slice()[j]);
        let mean = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut covariance = centered.transpose() * &centered / (n - 1) as f64;
        symmetrize(&mut covariance);
        Ok(GaussianSummary {
            mean,
            covariance,
            n,
        })
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical(format!("eigendecomposition of {what} did not converge")))
}

/// PSD square root by eigendecomposition, negative eigenvalues clamped to 0.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = eigen(m.clone(), "covariance")?;
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut root = &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose();
    symmetrize(&mut root);
    let residual = (&root * &root - m).norm();
    let scale = m.norm().max(1.0);
    let clamped: f64 = e
        .eigenvalues
        .iter()
        .filter(|v| **v < 0.0)
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if residual > SQRT_RESIDUAL_TOL * scale + clamped {
        return Err(Error::Numerical(format!(
            "matrix square root residual {residual:.3e} exceeds tolerance (norm {scale:.3e}, clamped {clamped:.3e})"
        )));
    }
    Ok(root)
}

/// A reference Gaussian with its covariance square root precomputed, for
/// repeated distances against the same set.
#[derive(Clone, Debug)]
pub struct FidReference {
    pub summary: GaussianSummary,
    sqrt_cov: DMatrix<f64>,
}

impl FidReference {
    pub fn new(summary: GaussianSummary) -> Result<Self> {
        let sqrt_cov = psd_sqrt(&summary.covariance)?;
        Ok(FidReference { summary, sqrt_cov })
    }

    pub fn from_samples(samples: &[Embedding]) -> Result<Self> {
        Self::new(GaussianSummary::fit(samples)?)
    }

    pub fn distance(&self, other: &GaussianSummary) -> Result<f64> {
        let a = &self.summary;
        if a.mean.len() != other.mean.len() {
            return Err(Error::shape("summaries of different dimension"));
        }
        let mean_term = (&a.mean - &other.mean).norm_squared();
        let mut inner = &self.sqrt_cov * &other.covariance * &self.sqrt_cov;
        symmetrize(&mut inner);
        let trace_sqrt: f64 = eigen(inner, "covariance product")?
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .sum();
        let value = mean_term + a.covariance.trace() + other.covariance.trace() - 2.0 * trace_sqrt;
        Ok(value.max(0.0))
    }
}

/// Fréchet distance between Gaussians fitted to `a` and `b`.
pub fn fid(a: &[Embedding], b: &[Embedding]) -> Result<f64> {
    FidReference::from_samples(a)?.distance(&GaussianSummary::fit(b)?)
}
