use rand::Rng;

use crate::embedding::squared_distance;
use crate::error::{Error, Result};
use crate::seed;

/// Standardized Mann-Whitney statistic of `x` against `y` under the normal
/// approximation with tie correction. Positive when `x` tends to be larger.
/// Returns 0 when every value is tied.
pub fn mann_whitney_z(x: &[f64], y: &[f64]) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m == 0 || n == 0 {
        return Err(Error::domain(
            "Mann-Whitney test needs two nonempty samples",
        ));
    }
    let mut all: Vec<(f64, bool)> = x
        .iter()
        .map(|v| (*v, true))
        .chain(y.iter().map(|v| (*v, false)))
        .collect();
    if all.iter().any(|(v, _)| !v.is_finite()) {
        return Err(Error::domain("Mann-Whitney input must be finite"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = all.len();
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        // Ranks are 1-based; a tie group shares the mean of its ranks.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_x += rank * all[i..=j].iter().filter(|(_, is_x)| *is_x).count() as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (mf, nf, nt) = (m as f64, n as f64, total as f64);
    let u = rank_sum_x - mf * (mf + 1.0) / 2.0;
    let mean = mf * nf / 2.0;
    let var = mf * nf / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)).max(1.0));
    if var <= 0.0 {
        return Ok(0.0);
    }
    Ok((u - mean) / var.sqrt())
}

/// Lloyd's k-means with k-means++ seeding. Returns the cluster index of every
/// point; the result depends only on the point order and `seed_value`.
pub fn kmeans(points: &[&[f64]], k: usize, seed_value: u64, max_iter: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || n == 0 {
        return Err(Error::domain("k-means needs k >= 1 and at least one point"));
    }
    let k = k.min(n);
    let mut rng = seed::stream(seed_value, "metrics.kmeans", 0);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].to_vec()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].to_vec());
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(squared_distance(p, &centers[centers.len() - 1]));
        }
    }
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let mut best = (f64::INFINITY, 0);
                for (c, center) in centers.iter().enumerate() {
                    let d = squared_distance(p, center);
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..max_iter {
        let dim = points[0].len();
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&&[f64]> = points
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            *center = (0..dim)
                .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                .collect();
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels)
}
