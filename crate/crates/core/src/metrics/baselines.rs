use crate::embedding::{log_sum_exp, squared_distance, Embedding};
use crate::error::{Error, Result};

use super::stats::{kmeans, mann_whitney_z};

const KMEANS_SEED: u64 = 0x0C7;
const KMEANS_MAX_ITER: usize = 100;

fn nearest(point: &[f64], set: &[Embedding], skip: Option<usize>) -> (f64, Vec<usize>) {
    let mut best = f64::INFINITY;
    let mut ties = Vec::new();
    for (i, s) in set.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let d = squared_distance(point, s.as_slice());
        if d < best {
            best = d;
            ties.clear();
            ties.push(i);
        } else if d == best {
            ties.push(i);
        }
    }
    (best.sqrt(), ties)
}

/// Percentage of generated samples that are authentic: a sample is
/// inauthentic when it lies closer to its nearest training sample than that
/// training sample lies to its own nearest training neighbour. When several
/// training samples are equally near, the largest neighbour distance applies.
pub fn authpct(train: &[Embedding], generated: &[Embedding]) -> Result<f64> {
    if train.len() < 2 || generated.is_empty() {
        return Err(Error::domain(
            "authpct needs >= 2 training and >= 1 generated samples",
        ));
    }
    let train_nn: Vec<f64> = (0..train.len())
        .map(|i| nearest(train[i].as_slice(), train, Some(i)).0)
        .collect();
    let authentic = generated
        .iter()
        .filter(|g| {
            let (d, ties) = nearest(g.as_slice(), train, None);
            let radius = ties
                .iter()
                .map(|t| train_nn[*t])
                .fold(f64::NEG_INFINITY, f64::max);
            !(d < radius)
        })
        .count();
    Ok(100.0 * authentic as f64 / generated.len() as f64)
}

/// Default number of cells: `max(1, ⌊√n / 2⌋)`.
pub fn default_k_cells(n_train: usize) -> usize {
    (((n_train as f64).sqrt() / 2.0).floor() as usize).max(1)
}

fn canonical_order(set: &[Embedding]) -> Vec<&[f64]> {
    let mut rows: Vec<&[f64]> = set.iter().map(|e| e.as_slice()).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

/// Mean over k-means cells of the train set of the Mann-Whitney z comparing
/// each training sample's nearest generated distance with its nearest test
/// distance. Higher means less memorization; cells with fewer than two
/// training samples are skipped.
pub fn ct_score(
    train: &[Embedding],
    test: &[Embedding],
    generated: &[Embedding],
    k_cells: usize,
) -> Result<f64> {
    if train.is_empty() || test.is_empty() || generated.is_empty() {
        return Err(Error::domain(
            "ct_score needs nonempty train, test and generated sets",
        ));
    }
    if k_cells == 0 {
        return Err(Error::domain("k_cells must be at least 1"));
    }
    let rows = canonical_order(train);
    let labels = kmeans(&rows, k_cells, KMEANS_SEED, KMEANS_MAX_ITER)?;
    let mut zs = Vec::new();
    for cell in 0..k_cells.min(rows.len()) {
        let members: Vec<&[f64]> = rows
            .iter()
            .zip(&labels)
            .filter(|(_, l)| **l == cell)
            .map(|(r, _)| *r)
            .collect();
        if members.len() < 2 {
            continue;
        }
        let to_gen: Vec<f64> = members
            .iter()
            .map(|m| nearest(m, generated, None).0)
            .collect();
        let to_test: Vec<f64> = members.iter().map(|m| nearest(m, test, None).0).collect();
        zs.push(mann_whitney_z(&to_gen, &to_test)?);
    }
    if zs.is_empty() {
        return Err(Error::domain(
            "every C_T cell has fewer than two training samples",
        ));
    }
    Ok(zs.iter().sum::<f64>() / zs.len() as f64)
}

/// Scott's rule bandwidth: mean per-dimension standard deviation times
/// `n^(-1/(d+4))`.
pub fn scott_bandwidth(set: &[Embedding]) -> Result<f64> {
    let n = set.len();
    if n < 2 {
        return Err(Error::domain("bandwidth needs at least 2 samples"));
    }
    let d = set[0].as_slice().len();
    let mut sd_sum = 0.0;
    for j in 0..d {
        let mean = set.iter().map(|e| e.as_slice()[j]).sum::<f64>() / n as f64;
        let var = set
            .iter()
            .map(|e| (e.as_slice()[j] - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        sd_sum += var.sqrt();
    }
    let h = sd_sum / d as f64 * (n as f64).powf(-1.0 / (d as f64 + 4.0));
    if !(h > 0.0) {
        return Err(Error::domain("degenerate set gives zero bandwidth"));
    }
    Ok(h)
}

/// Unnormalized Gaussian KDE log-likelihood; the normalizing constant is
/// shared by every set with the same bandwidth and dimension.
fn kde_log_likelihood(x: &[f64], set: &[Embedding], bandwidth: f64) -> f64 {
    let inv = -0.5 / (bandwidth * bandwidth);
    let mut terms: Vec<f64> = set
        .iter()
        .map(|s| inv * squared_distance(x, s.as_slice()))
        .collect();
    terms.sort_by(f64::total_cmp);
    log_sum_exp(&terms) - (set.len() as f64).ln()
}

/// Percentage of generated samples whose KDE log-likelihood under the train
/// set strictly exceeds that under the test set.
pub fn fld_lite(
    train: &[Embedding],
    test: &[Embedding],
    generated: &[Embedding],
    bandwidth: f64,
) -> Result<f64> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::domain(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if train.is_empty() || test.is_empty() || generated.is_empty() {
        return Err(Error::domain(
            "fld_lite needs nonempty train, test and generated sets",
        ));
    }
    let higher = generated
        .iter()
        .filter(|g| {
            kde_log_likelihood(g.as_slice(), train, bandwidth)
                > kde_log_likelihood(g.as_slice(), test, bandwidth)
        })
        .count();
    Ok(100.0 * higher as f64 / generated.len() as f64)
}
