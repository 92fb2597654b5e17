//! Verifier parameters and their text file format.
//!
//! ```text
//! fedmem-verifier-weights 1
//! geometry <height> <width> <depth> <windows>
//! gem_p <p>
//! reduce <depth> <depth/4>
//! <one line of depth/4 values per input channel>
//! layer <inputs> <outputs>
//! <one line of inputs values per output unit>
//! <one line of outputs biases>
//! ... further layers ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces the weights bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{DenseLayer, Mlp};
use crate::error::{Error, Result};
use crate::seed;

pub const WEIGHTS_MAGIC: &str = "fedmem-verifier-weights";
pub const WEIGHTS_VERSION: u32 = 1;
pub const HIDDEN_SIZES: [usize; 2] = [256, 64];

/// Shape of the feature maps and window layout the weights were built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifierGeometry {
    pub map_height: usize,
    pub map_width: usize,
    pub map_depth: usize,
    pub windows: usize,
}

impl Default for VerifierGeometry {
    fn default() -> Self {
        VerifierGeometry {
            map_height: 7,
            map_width: 7,
            map_depth: 64,
            windows: 55,
        }
    }
}

impl VerifierGeometry {
    pub fn reduced_depth(&self) -> usize {
        self.map_depth / 4
    }

    pub fn mlp_input(&self) -> usize {
        self.windows * self.windows
    }

    fn validate(&self) -> Result<()> {
        if self.map_height == 0 || self.map_width == 0 || self.windows == 0 {
            return Err(Error::shape("geometry dimensions must be positive"));
        }
        if self.map_depth < 4 || self.map_depth % 4 != 0 {
            return Err(Error::shape(format!(
                "map depth {} is not a positive multiple of 4",
                self.map_depth
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifierWeights {
    geometry: VerifierGeometry,
    gem_p: f64,
    /// `depth × depth/4`, row-major.
    reduce: Vec<f64>,
    mlp: Mlp,
}

impl VerifierWeights {
    pub fn new(geometry: VerifierGeometry, gem_p: f64, reduce: Vec<f64>, mlp: Mlp) -> Result<Self> {
        geometry.validate()?;
        if !(gem_p >= 1.0 && gem_p.is_finite()) {
            return Err(Error::domain(format!(
                "GeM exponent must be >= 1, got {gem_p}"
            )));
        }
        if reduce.len() != geometry.map_depth * geometry.reduced_depth() {
            return Err(Error::shape(format!(
                "reduction has {} entries, expected {}×{}",
                reduce.len(),
                geometry.map_depth,
                geometry.reduced_depth()
            )));
        }
        if reduce.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain("reduction weights must be finite"));
        }
        if mlp.input_dim() != geometry.mlp_input() || mlp.output_dim() != 1 {
            return Err(Error::shape(format!(
                "MLP maps {}→{}, expected {}→1",
                mlp.input_dim(),
                mlp.output_dim(),
                geometry.mlp_input()
            )));
        }
        Ok(VerifierWeights {
            geometry,
            gem_p,
            reduce,
            mlp,
        })
    }

    /// Seeded Gaussian reduction scaled by `1/sqrt(depth)`.
    pub fn seeded_reduction(seed_value: u64, geometry: &VerifierGeometry) -> Vec<f64> {
        let mut rng = seed::stream(seed_value, "verifier.reduce", 0);
        let scale = 1.0 / (geometry.map_depth as f64).sqrt();
        (0..geometry.map_depth * geometry.reduced_depth())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// All-zero MLP of the default hidden sizes; every pair scores 0.5.
    pub fn zeros(geometry: VerifierGeometry, gem_p: f64, reduce: Vec<f64>) -> Result<Self> {
        let sizes = [geometry.mlp_input(), HIDDEN_SIZES[0], HIDDEN_SIZES[1], 1];
        let layers = sizes
            .windows(2)
            .map(|s| DenseLayer::zeros(s[0], s[1]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(geometry, gem_p, reduce, Mlp::new(layers)?)
    }

    /// Untrained weights with He-scaled Gaussian layers.
    pub fn random(seed_value: u64, geometry: VerifierGeometry) -> Result<Self> {
        geometry.validate()?;
        let reduce = Self::seeded_reduction(seed_value, &geometry);
        let sizes = [geometry.mlp_input(), HIDDEN_SIZES[0], HIDDEN_SIZES[1], 1];
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, s)| {
                let mut rng = seed::stream(seed_value, "verifier.mlp", i as u64);
                let scale = (2.0 / s[0] as f64).sqrt();
                let w = (0..s[0] * s[1])
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                DenseLayer::new(s[0], s[1], w, vec![0.0; s[1]])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(geometry, 3.0, reduce, Mlp::new(layers)?)
    }

    pub fn geometry(&self) -> &VerifierGeometry {
        &self.geometry
    }

    pub fn gem_p(&self) -> f64 {
        self.gem_p
    }

    pub fn reduce(&self) -> &[f64] {
        &self.reduce
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut out = String::new();
        let line = |out: &mut String, values: &[f64]| {
            let mut first = true;
            for v in values {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:?}").unwrap();
            }
            out.push('\n');
        };
        writeln!(out, "{WEIGHTS_MAGIC} {WEIGHTS_VERSION}").unwrap();
        writeln!(
            out,
            "geometry {} {} {} {}",
            g.map_height, g.map_width, g.map_depth, g.windows
        )
        .unwrap();
        writeln!(out, "gem_p {:?}", self.gem_p).unwrap();
        writeln!(out, "reduce {} {}", g.map_depth, g.reduced_depth()).unwrap();
        for row in self.reduce.chunks_exact(g.reduced_depth()) {
            line(&mut out, row);
        }
        for layer in self.mlp.layers() {
            writeln!(out, "layer {} {}", layer.inputs(), layer.outputs()).unwrap();
            for row in layer.weights().chunks_exact(layer.inputs()) {
                line(&mut out, row);
            }
            line(&mut out, layer.biases());
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Parser::new(text);
        p.keyword(WEIGHTS_MAGIC)?;
        let version: u32 = p.number()?;
        if version != WEIGHTS_VERSION {
            return Err(p.fail(format!("unsupported weights version {version}")));
        }
        p.keyword("geometry")?;
        let geometry = VerifierGeometry {
            map_height: p.number()?,
            map_width: p.number()?,
            map_depth: p.number()?,
            windows: p.number()?,
        };
        geometry.validate()?;
        p.keyword("gem_p")?;
        let gem_p: f64 = p.number()?;
        p.keyword("reduce")?;
        let (rows, cols): (usize, usize) = (p.number()?, p.number()?);
        if rows != geometry.map_depth || cols != geometry.reduced_depth() {
            return Err(p.fail(format!(
                "reduce header {rows}×{cols} disagrees with geometry"
            )));
        }
        let reduce = p.values(rows * cols)?;
        let mut layers = Vec::new();
        loop {
            match p.token()? {
                "end" => break,
                "layer" => {
                    let (i, o): (usize, usize) = (p.number()?, p.number()?);
                    let w = p.values(i.checked_mul(o).ok_or_else(|| p.fail("layer too large"))?)?;
                    let b = p.values(o)?;
                    layers.push(DenseLayer::new(i, o, w, b)?);
                }
                other => return Err(p.fail(format!("unexpected token {other:?}"))),
            }
        }
        if p.tokens.next().is_some() {
            return Err(p.fail("trailing data after end"));
        }
        Self::new(geometry, gem_p, reduce, Mlp::new(layers)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

struct Parser<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            tokens: text.split_ascii_whitespace(),
        }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::shape(format!("weights file: {}", reason.into()))
    }

    fn token(&mut self) -> Result<&'a str> {
        self.tokens
            .next()
            .ok_or_else(|| self.fail("unexpected end of input"))
    }

    fn keyword(&mut self, expected: &str) -> Result<()> {
        let t = self.token()?;
        if t != expected {
            return Err(self.fail(format!("expected {expected:?}, found {t:?}")));
        }
        Ok(())
    }

    fn number<T: std::str::FromStr>(&mut self) -> Result<T> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| self.fail(format!("bad number {t:?}")))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.number()).collect()
    }
}
