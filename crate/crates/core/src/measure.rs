//! Discrete probability measures with finite support.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Number of 8-bit intensity levels.
pub const INTENSITY_LEVELS: usize = 256;

/// Weights below this are raised to it (and the vector renormalized) before
/// any Sinkhorn-style solve; scaling iterations need strictly positive mass.
pub const MASS_FLOOR: f64 = 1e-12;

/// Tolerance on the weight-vector sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// The shared intensity grid `{0/255, ..., 255/255}`.
pub fn intensity_grid() -> &'static [f64] {
    static GRID: OnceLock<Vec<f64>> = OnceLock::new();
    GRID.get_or_init(|| level_grid(INTENSITY_LEVELS))
}

/// A uniform grid of `bins` points spanning `[0, 1]`.
pub fn level_grid(bins: usize) -> Vec<f64> {
    assert!(bins >= 2, "grid needs at least 2 bins");
    (0..bins).map(|i| i as f64 / (bins - 1) as f64).collect()
}

/// A probability measure on finitely many points of `R^k`.
///
/// Support points are stored row-major in a flat buffer (`len * dim`); almost
/// everything in this crate uses `dim == 1` (intensities on `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// General constructor; `points` holds `weights.len() * dim` coordinates.
    pub fn new(points: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("measure dimension must be at least 1"));
        }
        if weights.is_empty() {
            return Err(Error::validation("measure must have at least one support point"));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::validation(format!(
                "support/weight length mismatch: {} coordinates for {} weights of dim {}",
                points.len(),
                weights.len(),
                dim
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("support points must be finite"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::validation(format!(
                "weights must sum to 1 within {WEIGHT_SUM_TOL:e}, got {sum}"
            )));
        }
        Ok(Self { points, dim, weights })
    }

    /// A 1D measure.
    pub fn from_1d(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::new(support, 1, weights)
    }

    /// Unit mass at a single 1D point.
    pub fn dirac(x: f64) -> Result<Self> {
        Self::from_1d(vec![x], vec![1.0])
    }

    /// Uniform weights over the given 1D support.
    pub fn uniform_on(support: Vec<f64>) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(Error::validation("measure must have at least one support point"));
        }
        let w = 1.0 / n as f64;
        let mut weights = vec![w; n];
        // Nudge the last weight so the sum is exactly 1 in f64.
        let sum: f64 = weights.iter().sum();
        weights[n - 1] += 1.0 - sum;
        Self::from_1d(support, weights)
    }

    /// Normalize a nonnegative histogram into a measure on `grid`.
    pub fn from_counts(grid: &[f64], counts: &[f64]) -> Result<Self> {
        if grid.len() != counts.len() {
            return Err(Error::validation("grid/count length mismatch"));
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::validation("histogram must have positive finite total mass"));
        }
        if counts.iter().any(|c| *c < 0.0 || !c.is_finite()) {
            return Err(Error::validation("histogram counts must be finite and nonnegative"));
        }
        let weights = counts.iter().map(|c| c / total).collect();
        Self::from_1d(grid.to_vec(), weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Flat row-major coordinates (`len * dim`).
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// The support as a plain slice; errors unless `dim == 1`.
    pub fn support_1d(&self) -> Result<&[f64]> {
        if self.dim != 1 {
            return Err(Error::validation(format!(
                "operation requires 1D support, got dim {}",
                self.dim
            )));
        }
        Ok(&self.points)
    }

    /// True when the support equals `grid` pointwise (bit-exact).
    pub fn is_on_grid(&self, grid: &[f64]) -> bool {
        self.dim == 1 && self.points.len() == grid.len() && self.points == grid
    }

    /// Re-express this 1D measure on `grid`, summing weights of coinciding
    /// atoms. Every support point must be a grid point (bit-exact match).
    pub fn on_grid(&self, grid: &[f64]) -> Result<Self> {
        let support = self.support_1d()?;
        if self.is_on_grid(grid) {
            return Ok(self.clone());
        }
        let mut weights = vec![0.0; grid.len()];
        for (x, w) in support.iter().zip(&self.weights) {
            let idx = grid
                .binary_search_by(|g| g.total_cmp(x))
                .map_err(|_| Error::validation(format!("support point {x} is not on the target grid")))?;
            weights[idx] += w;
        }
        Self::from_1d(grid.to_vec(), weights)
    }

    /// Raise every weight to at least `floor` and renormalize.
    ///
    /// Two clamp/renormalize rounds: after the first renormalization the
    /// smallest weights can sit a hair below `floor`; the second round's
    /// normalizer is 1.0 in f64, so the floor then holds exactly.
    pub fn floored(&self, floor: f64) -> Self {
        let mut weights = self.weights.clone();
        for _ in 0..2 {
            for w in &mut weights {
                if *w < floor {
                    *w = floor;
                }
            }
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
        }
        Self {
            points: self.points.clone(),
            dim: self.dim,
            weights,
        }
    }

    /// Canonical text form: one `point,weight` line per atom (k coordinates
    /// then the weight), shortest round-trip decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            for c in self.point(i) {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!("{}\n", self.weights[i]));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 2 {
                return Err(Error::format(format!(
                    "measure line {}: expected `point,weight`, got {line:?}",
                    lineno + 1
                )));
            }
            let d = fields.len() - 1;
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::format(format!(
                        "measure line {}: inconsistent dimension {} (expected {})",
                        lineno + 1,
                        d,
                        prev
                    )))
                }
                _ => {}
            }
            for f in &fields[..d] {
                points.push(parse_f64(f, lineno)?);
            }
            weights.push(parse_f64(fields[d], lineno)?);
        }
        let dim = dim.ok_or_else(|| Error::format("empty measure file"))?;
        Self::new(points, dim, weights)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_f64(s: &str, lineno: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::format(format!("measure line {}: bad number {s:?}", lineno + 1)))
}
