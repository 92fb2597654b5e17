use nalgebra::DMatrix;

use super::windows::{Window, WindowSet};
use crate::embedding::{dot, FeatureMap};
use crate::error::{Error, Result};

/// Result of pooling one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub vector: Vec<f64>,
    /// Set when every pooled channel was zero; `vector` is then all zeros.
    pub degenerate: bool,
}

/// Generalized mean `((1/n) Σ |x|^p)^(1/p)`, scaled by the maximum so large
/// exponents do not underflow.
pub fn generalized_mean(values: impl Iterator<Item = f64> + Clone, p: f64) -> f64 {
    let max = values.clone().map(f64::abs).fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let pow = |x: f64| {
        if p.fract() == 0.0 && p <= 64.0 {
            x.powi(p as i32)
        } else {
            x.powf(p)
        }
    };
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + pow(v.abs() / max), n + 1));
    max * (sum / n as f64).powf(1.0 / p)
}

/// Channel-wise GeM pooling over `window` followed by L2 normalization.
pub fn gem_pool(map: &FeatureMap, window: &Window, p: f64) -> Result<Pooled> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::domain(format!("GeM exponent must be >= 1, got {p}")));
    }
    if window.row0 == 0
        || window.col0 == 0
        || window.row0 > window.row1
        || window.col0 > window.col1
        || window.row1 > map.height()
        || window.col1 > map.width()
    {
        return Err(Error::domain(format!(
            "window {window:?} outside the feature map"
        )));
    }
    let depth = map.depth();
    let cells: Vec<&[f64]> = (window.row0 - 1..window.row1)
        .flat_map(|r| (window.col0 - 1..window.col1).map(move |c| (r, c)))
        .map(|(r, c)| map.cell(r, c))
        .collect();
    let mut max = vec![0.0f64; depth];
    for cell in &cells {
        for (m, v) in max.iter_mut().zip(cell.iter()) {
            *m = m.max(v.abs());
        }
    }
    let integer_p = p.fract() == 0.0 && p <= 64.0;
    let mut sum = vec![0.0f64; depth];
    for cell in &cells {
        for ((s, v), m) in sum.iter_mut().zip(cell.iter()).zip(&max) {
            if *m > 0.0 {
                let x = v.abs() / m;
                *s += if integer_p { x.powi(p as i32) } else { x.powf(p) };
            }
        }
    }
    let n = cells.len() as f64;
    let mut vector: Vec<f64> = sum
        .iter()
        .zip(&max)
        .map(|(s, m)| if *m > 0.0 { m * (s / n).powf(1.0 / p) } else { 0.0 })
        .collect();
    let len = dot(&vector, &vector).sqrt();
    if len == 0.0 {
        return Ok(Pooled {
            vector,
            degenerate: true,
        });
    }
    vector.iter_mut().for_each(|v| *v /= len);
    Ok(Pooled {
        vector,
        degenerate: false,
    })
}

/// Window-pooled descriptors of one feature map: one row per window,
/// unit-normalized except for flagged degenerate rows, which are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledFeatures {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl PooledFeatures {
    pub fn from_rows(rows: Vec<Pooled>) -> Result<Self> {
        let cols = rows.first().map(|r| r.vector.len()).unwrap_or(0);
        if rows.iter().any(|r| r.vector.len() != cols) {
            return Err(Error::shape("pooled rows have different lengths"));
        }
        Ok(PooledFeatures {
            rows: rows.len(),
            cols,
            degenerate: rows.iter().map(|r| r.degenerate).collect(),
            data: rows.into_iter().flat_map(|r| r.vector).collect(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Applies a 1×1 convolution (`depth × out` matrix, row-major) to every cell.
pub fn reduce_channels(map: &FeatureMap, reduce: &[f64], out: usize) -> Result<FeatureMap> {
    let depth = map.depth();
    if reduce.len() != depth * out {
        return Err(Error::shape(format!(
            "reduction matrix has {} entries, expected {depth}×{out}",
            reduce.len()
        )));
    }
    let mut data = Vec::with_capacity(map.height() * map.width() * out);
    for cell in map.data().chunks_exact(depth) {
        let start = data.len();
        data.resize(start + out, 0.0);
        for (x, row) in cell.iter().zip(reduce.chunks_exact(out)) {
            for (acc, w) in data[start..].iter_mut().zip(row) {
                *acc += x * w;
            }
        }
    }
    FeatureMap::new(map.height(), map.width(), out, data)
}

pub fn pool_windows(map: &FeatureMap, windows: &WindowSet, p: f64) -> Result<PooledFeatures> {
    if windows.height != map.height() || windows.width != map.width() {
        return Err(Error::shape(format!(
            "windows laid out for {}×{} but map is {}×{}",
            windows.height,
            windows.width,
            map.height(),
            map.width()
        )));
    }
    if p.fract() == 0.0 && (1.0..=8.0).contains(&p) {
        return pool_windows_integral(map, windows, p as i32);
    }
    let rows = windows
        .iter()
        .map(|w| gem_pool(map, w, p))
        .collect::<Result<Vec<_>>>()?;
    PooledFeatures::from_rows(rows)
}

/// Same result as [`gem_pool`] per window for small integer exponents, from
/// per-channel summed-area tables of `|x|^p`.
fn pool_windows_integral(map: &FeatureMap, windows: &WindowSet, p: i32) -> Result<PooledFeatures> {
    let (h, w, d) = (map.height(), map.width(), map.depth());
    let stride = (w + 1) * d;
    let mut table = vec![0.0f64; (h + 1) * stride];
    for r in 0..h {
        for c in 0..w {
            let cell = map.cell(r, c);
            let base = (r + 1) * stride + (c + 1) * d;
            for k in 0..d {
                table[base + k] = cell[k].abs().powi(p) + table[base - d + k] + table[base - stride + k]
                    - table[base - stride - d + k];
            }
        }
    }
    let at = |r: usize, c: usize, k: usize| table[r * stride + c * d + k];
    let mut rows = Vec::with_capacity(windows.len());
    for win in windows.iter() {
        if win.row0 == 0 || win.col0 == 0 || win.row0 > win.row1 || win.col0 > win.col1 || win.row1 > h || win.col1 > w {
            return Err(Error::domain(format!("window {win:?} outside the feature map")));
        }
        let n = ((win.row1 - win.row0 + 1) * (win.col1 - win.col0 + 1)) as f64;
        let mut vector: Vec<f64> = (0..d)
            .map(|k| {
                let s = at(win.row1, win.col1, k) - at(win.row0 - 1, win.col1, k) - at(win.row1, win.col0 - 1, k)
                    + at(win.row0 - 1, win.col0 - 1, k);
                let mean = (s / n).max(0.0);
                match p {
                    1 => mean,
                    2 => mean.sqrt(),
                    3 => mean.cbrt(),
                    _ => mean.powf(1.0 / p as f64),
                }
            })
            .collect();
        let len = dot(&vector, &vector).sqrt();
        let degenerate = len == 0.0;
        if !degenerate {
            vector.iter_mut().for_each(|v| *v /= len);
        }
        rows.push(Pooled { vector, degenerate });
    }
    PooledFeatures::from_rows(rows)
}

/// `C = Q Iᵀ`: entry `(a, b)` is the dot product of query row `a` with
/// candidate row `b`.
pub fn correlation_matrix(q: &PooledFeatures, i: &PooledFeatures) -> Result<DMatrix<f64>> {
    if q.rows != i.rows || q.cols != i.cols {
        return Err(Error::shape(format!(
            "correlation of {}×{} with {}×{}",
            q.rows, q.cols, i.rows, i.cols
        )));
    }
    Ok(DMatrix::from_fn(q.rows, i.rows, |a, b| {
        dot(q.row(a), i.row(b))
    }))
}
