//! Ground cost matrices: Euclidean distance raised to an exponent `p >= 1`.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Pairwise transport costs `entries[i][j] = |x_i - y_j|^p`.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    entries: Array2<f64>,
    exponent: f64,
    metric: bool,
}

impl CostMatrix {
    /// Costs between two 1D supports.
    pub fn from_supports_1d(a: &[f64], b: &[f64], p: f64) -> Result<Self> {
        Self::from_points(a, b, 1, p)
    }

    /// Costs between two point sets in `R^dim` (flat row-major coordinates).
    ///
    /// The p-th root of the entries is the Euclidean distance, a metric, so
    /// the metric flag is always set for matrices built here.
    pub fn from_points(a: &[f64], b: &[f64], dim: usize, p: f64) -> Result<Self> {
        if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 {
            return Err(Error::validation("point buffers must be a multiple of dim"));
        }
        if a.is_empty() || b.is_empty() {
            return Err(Error::validation("cost matrix needs non-empty supports"));
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::validation(format!("cost exponent must satisfy p >= 1, got {p}")));
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::validation("support points must be finite"));
        }
        let n = a.len() / dim;
        let m = b.len() / dim;
        let mut entries = Array2::zeros((n, m));
        for i in 0..n {
            let pa = &a[i * dim..(i + 1) * dim];
            for j in 0..m {
                let pb = &b[j * dim..(j + 1) * dim];
                let dist = if dim == 1 {
                    (pa[0] - pb[0]).abs()
                } else {
                    pa.iter()
                        .zip(pb)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                };
                entries[[i, j]] = pow_cost(dist, p);
            }
        }
        Ok(Self {
            entries,
            exponent: p,
            metric: true,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.entries.dim();
        (s.0, s.1)
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Whether entries are `D^p` for a metric `D`.
    pub fn is_metric_derived(&self) -> bool {
        self.metric
    }

    /// The underlying distance `D[i][j] = entries[i][j]^(1/p)`.
    pub fn base_distance(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]].powf(1.0 / self.exponent)
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

fn pow_cost(d: f64, p: f64) -> f64 {
    if p == 1.0 {
        d
    } else if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}
