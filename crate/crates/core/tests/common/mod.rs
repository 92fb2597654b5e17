//! Helpers shared by the integration tests: seeded point clouds, and
//! brute-force or textbook reimplementations of the metrics that do not call
//! into the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

use fedmem::embedding::{EmbeddedSample, Embedding, EMBEDDING_DIM};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// `n` points `center + sd·z` in the full embedding dimension.
pub fn cloud(rng: &mut ChaCha8Rng, n: usize, center: &[f64], sd: f64) -> Vec<Embedding> {
    (0..n)
        .map(|_| {
            Embedding::new(
                (0..EMBEDDING_DIM)
                    .map(|j| center.get(j).copied().unwrap_or(0.0) + sd * gaussian(rng))
                    .collect(),
            )
            .unwrap()
        })
        .collect()
}

/// Points `mean + M z` for a random mixing matrix `M`, so the covariance is
/// full rank and anisotropic.
pub fn correlated_cloud(seed: u64, n: usize, shift: f64) -> Vec<Embedding> {
    let d = EMBEDDING_DIM;
    let mut r = rng(seed);
    let mix: Vec<f64> = (0..d * d).map(|_| gaussian(&mut r) / (d as f64).sqrt()).collect();
    let mean: Vec<f64> = (0..d).map(|_| shift * gaussian(&mut r)).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| gaussian(&mut r)).collect();
            let v = (0..d)
                .map(|i| mean[i] + (0..d).map(|k| mix[i * d + k] * z[k]).sum::<f64>())
                .collect();
            Embedding::new(v).unwrap()
        })
        .collect()
}

pub fn labelled(prefix: &str, class: u32, points: Vec<Embedding>) -> Vec<EmbeddedSample> {
    points
        .into_iter()
        .enumerate()
        .map(|(i, embedding)| EmbeddedSample {
            id: format!("{prefix}{class}-{i:04}"),
            class_id: class,
            embedding,
        })
        .collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- linear algebra

pub type Dense = Vec<Vec<f64>>;

pub fn mean_vector(points: &[Embedding]) -> Vec<f64> {
    let d = points[0].as_slice().len();
    let mut m = vec![0.0; d];
    for p in points {
        for (acc, v) in m.iter_mut().zip(p.as_slice()) {
            *acc += v;
        }
    }
    m.iter().map(|v| v / points.len() as f64).collect()
}

/// Unbiased sample covariance, entry by entry.
pub fn covariance(points: &[Embedding]) -> Dense {
    let mu = mean_vector(points);
    let d = mu.len();
    let n = points.len() as f64;
    let mut c = vec![vec![0.0; d]; d];
    for p in points {
        let x = p.as_slice();
        for i in 0..d {
            let xi = x[i] - mu[i];
            for j in i..d {
                c[i][j] += xi * (x[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            c[i][j] /= n - 1.0;
            c[j][i] = c[i][j];
        }
    }
    c
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for k in 0..m {
            let aik = a[i][k];
            for j in 0..p {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix. Returns the
/// eigenvalues and the eigenvectors as columns.
pub fn jacobi_eigen(mut a: Dense) -> (Vec<f64>, Dense) {
    let n = a.len();
    let mut v: Dense = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Principal square root of a symmetric PSD matrix through its eigenbasis.
pub fn sqrt_psd(a: &Dense) -> Dense {
    let (vals, vecs) = jacobi_eigen(a.clone());
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for (k, lambda) in vals.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            let vik = vecs[i][k] * s;
            for j in 0..n {
                out[i][j] += vik * vecs[j][k];
            }
        }
    }
    out
}

/// Fréchet distance between Gaussian fits of `a` and `b`.
pub fn fid_oracle(a: &[Embedding], b: &[Embedding]) -> f64 {
    let (ma, mb) = (mean_vector(a), mean_vector(b));
    let (ca, cb) = (covariance(a), covariance(b));
    let root = sqrt_psd(&ca);
    let mut inner = matmul(&matmul(&root, &cb), &root);
    let n = inner.len();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (inner[i][j] + inner[j][i]);
            inner[i][j] = avg;
            inner[j][i] = avg;
        }
    }
    let (vals, _) = jacobi_eigen(inner);
    let mean_term: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    let trace = |c: &Dense| (0..c.len()).map(|i| c[i][i]).sum::<f64>();
    let cross: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    (mean_term + trace(&ca) + trace(&cb) - 2.0 * cross).max(0.0)
}

// ---------------------------------------------------------------- baselines

fn nn_distance(x: &[f64], set: &[Embedding], skip: Option<usize>) -> f64 {
    set.iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, s)| dist(x, s.as_slice()))
        .fold(f64::INFINITY, f64::min)
}

/// Percentage of generated points at least as far from their nearest
/// training point as that point is from its own nearest training neighbour
/// (largest such radius among equidistant training points).
pub fn authpct_oracle(train: &[Embedding], generated: &[Embedding]) -> f64 {
    let radius: Vec<f64> = (0..train.len())
        .map(|i| nn_distance(train[i].as_slice(), train, Some(i)))
        .collect();
    let mut authentic = 0;
    for g in generated {
        let d: Vec<f64> = train.iter().map(|t| dist(g.as_slice(), t.as_slice())).collect();
        let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let r = (0..train.len())
            .filter(|i| d[*i] == best)
            .map(|i| radius[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if best >= r {
            authentic += 1;
        }
    }
    100.0 * authentic as f64 / generated.len() as f64
}

/// Mann-Whitney z from pairwise comparisons, tie-corrected variance.
pub fn mann_whitney_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut u = 0.0;
    for a in x {
        for b in y {
            if a > b {
                u += 1.0;
            } else if a == b {
                u += 0.5;
            }
        }
    }
    let mut groups: BTreeMap<u64, f64> = BTreeMap::new();
    for v in x.iter().chain(y) {
        *groups.entry(v.to_bits()).or_insert(0.0) += 1.0;
    }
    let big_n = m + n;
    let ties: f64 = groups.values().map(|t| t * t * t - t).sum();
    let var = m * n / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return 0.0;
    }
    (u - m * n / 2.0) / var.sqrt()
}

/// C_T over a caller-supplied partition of the train set.
pub fn ct_oracle(
    cells: &[Vec<&Embedding>],
    test: &[Embedding],
    generated: &[Embedding],
) -> f64 {
    let zs: Vec<f64> = cells
        .iter()
        .filter(|c| c.len() >= 2)
        .map(|c| {
            let to_gen: Vec<f64> = c.iter().map(|t| nn_distance(t.as_slice(), generated, None)).collect();
            let to_test: Vec<f64> = c.iter().map(|t| nn_distance(t.as_slice(), test, None)).collect();
            mann_whitney_oracle(&to_gen, &to_test)
        })
        .collect();
    zs.iter().sum::<f64>() / zs.len() as f64
}

/// Log of the mean Gaussian kernel value, up to a shared constant.
fn kde(x: &[f64], set: &[Embedding], h: f64) -> f64 {
    let logs: Vec<f64> = set
        .iter()
        .map(|s| -dist(x, s.as_slice()).powi(2) / (2.0 * h * h))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + (logs.iter().map(|l| (l - max).exp()).sum::<f64>() / set.len() as f64).ln()
}

pub fn fld_oracle(train: &[Embedding], test: &[Embedding], generated: &[Embedding], h: f64) -> f64 {
    let over = generated
        .iter()
        .filter(|g| kde(g.as_slice(), train, h) > kde(g.as_slice(), test, h))
        .count();
    100.0 * over as f64 / generated.len() as f64
}

// ---------------------------------------------------------------- detection

/// Per-class `mean − 0.5·sd` (population sd) of nearest same-class
/// neighbour distances.
pub fn thresholds_oracle(train: &[EmbeddedSample]) -> BTreeMap<u32, f64> {
    let mut by_class: BTreeMap<u32, Vec<&EmbeddedSample>> = BTreeMap::new();
    for s in train {
        by_class.entry(s.class_id).or_default().push(s);
    }
    by_class
        .into_iter()
        .map(|(c, members)| {
            let nn: Vec<f64> = members
                .iter()
                .map(|a| {
                    members
                        .iter()
                        .filter(|b| b.id != a.id)
                        .map(|b| dist(a.embedding.as_slice(), b.embedding.as_slice()))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let n = nn.len() as f64;
            let mean = nn.iter().sum::<f64>() / n;
            let sd = (nn.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
            (c, mean - 0.5 * sd)
        })
        .collect()
}

/// `(generated id, train id)` for the `k` nearest same-class train points of
/// each generated point that lie under the class threshold.
pub fn knn_oracle(
    generated: &[EmbeddedSample],
    train: &[EmbeddedSample],
    thresholds: &BTreeMap<u32, f64>,
    k: usize,
) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for g in generated {
        let Some(t) = thresholds.get(&g.class_id) else { continue };
        let mut near: Vec<(f64, &str)> = train
            .iter()
            .filter(|s| s.class_id == g.class_id)
            .map(|s| (dist(g.embedding.as_slice(), s.embedding.as_slice()), s.id.as_str()))
            .filter(|(d, _)| d < t)
            .collect();
        near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
        out.extend(near.into_iter().take(k).map(|(_, id)| (g.id.clone(), id.to_string())));
    }
    out.sort();
    out
}

// ---------------------------------------------------------------- statistics

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].partial_cmp(&v[*b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    if sx == 0.0 || sy == 0.0 {
        return 0.0;
    }
    cov / (sx * sy)
}
