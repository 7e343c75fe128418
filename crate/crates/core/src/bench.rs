//! Empirical complexity benchmark for the solver kernels.
//!
//! Times Sinkhorn and the Bregman barycenter on random measures across
//! support sizes, fits a log-log slope per kernel, and checks the direction
//! of the barycenter's epsilon dependence on a fixed problem.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;

use crate::barycenter::{bregman_barycenter, BarycenterConfig};
use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::measure::{level_grid, DiscreteMeasure};
use crate::seed::{self, stream};
use crate::sinkhorn::{sinkhorn, SinkhornConfig};

const RUNS_PER_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub d: usize,
    pub sinkhorn_seconds: f64,
    pub barycenter_seconds: f64,
}

/// Paired barycenter timings at two regularizations on one fixed problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsDirection {
    pub d: usize,
    pub coarse_epsilon: f64,
    pub coarse_seconds: f64,
    pub fine_epsilon: f64,
    pub fine_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub sinkhorn_slope: f64,
    pub barycenter_slope: f64,
    pub eps_direction: EpsDirection,
}

impl BenchReport {
    /// CSV rows `d,sinkhorn_seconds,barycenter_seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,sinkhorn_seconds,barycenter_seconds\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                row.d, row.sinkhorn_seconds, row.barycenter_seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        format!(
            "sinkhorn log-log slope: {:.3}\nbarycenter log-log slope: {:.3}\nbarycenter at d={}: eps={:.0e} -> {:.4}s, eps={:.0e} -> {:.4}s\n",
            self.sinkhorn_slope,
            self.barycenter_slope,
            self.eps_direction.d,
            self.eps_direction.coarse_epsilon,
            self.eps_direction.coarse_seconds,
            self.eps_direction.fine_epsilon,
            self.eps_direction.fine_seconds,
        )
    }
}

fn random_measure(grid: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> DiscreteMeasure {
    // Dirichlet(1) weights via normalized exponentials.
    let counts: Vec<f64> = grid
        .iter()
        .map(|_| -rng.random::<f64>().max(1e-12).ln())
        .collect();
    DiscreteMeasure::from_counts(grid, &counts).expect("positive counts")
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn fit_loglog_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(d, _)| (*d as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, t)| t.max(1e-12).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn time_sinkhorn(d: usize, seed: u64) -> Result<f64> {
    let grid = level_grid(d);
    let mut rng = seed::rng(seed);
    let a = random_measure(&grid, &mut rng);
    let b = random_measure(&grid, &mut rng);
    let cost = CostMatrix::from_supports_1d(&grid, &grid, 2.0)?;
    let cfg = SinkhornConfig::with_epsilon(1e-1);
    // Warm-up solve, then timed runs.
    sinkhorn(&a, &b, &cost, &cfg)?;
    let mut times = Vec::with_capacity(RUNS_PER_SIZE);
    for _ in 0..RUNS_PER_SIZE {
        let t0 = Instant::now();
        let res = sinkhorn(&a, &b, &cost, &cfg)?;
        times.push(t0.elapsed().as_secs_f64());
        debug_assert!(res.converged);
    }
    Ok(median(times))
}

fn time_barycenter(d: usize, epsilon: f64, seed: u64) -> Result<f64> {
    let grid = level_grid(d);
    let mut rng = seed::rng(seed);
    let inputs: Vec<DiscreteMeasure> = (0..3).map(|_| random_measure(&grid, &mut rng)).collect();
    let cfg = BarycenterConfig::with_epsilon(epsilon);
    bregman_barycenter(&inputs, &cfg)?;
    let mut times = Vec::with_capacity(RUNS_PER_SIZE);
    for _ in 0..RUNS_PER_SIZE {
        let t0 = Instant::now();
        bregman_barycenter(&inputs, &cfg)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Median-of-5 solver timings per support size plus fitted log-log slopes.
///
/// `sizes` must be strictly ascending with at least two entries.
pub fn bench_scaling(sizes: &[usize], seed: u64) -> Result<BenchReport> {
    if sizes.len() < 2 {
        return Err(Error::validation("bench needs at least two support sizes"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(
            "bench sizes must be strictly ascending (distinct sizes are needed for a slope)",
        ));
    }
    if sizes[0] < 2 {
        return Err(Error::validation("support sizes must be at least 2"));
    }

    let mut rows = Vec::with_capacity(sizes.len());
    for &d in sizes {
        let s = seed::derive(seed, &[stream::BENCH, d as u64]);
        rows.push(BenchRow {
            d,
            sinkhorn_seconds: time_sinkhorn(d, s)?,
            barycenter_seconds: time_barycenter(d, 1e-1, seed::derive(s, &[1]))?,
        });
    }
    let sinkhorn_slope =
        fit_loglog_slope(&rows.iter().map(|r| (r.d, r.sinkhorn_seconds)).collect::<Vec<_>>());
    let barycenter_slope =
        fit_loglog_slope(&rows.iter().map(|r| (r.d, r.barycenter_seconds)).collect::<Vec<_>>());

    let d_fixed = *sizes.last().unwrap();
    let eps_seed = seed::derive(seed, &[stream::BENCH, u64::MAX]);
    let eps_direction = EpsDirection {
        d: d_fixed,
        coarse_epsilon: 1e-1,
        coarse_seconds: time_barycenter(d_fixed, 1e-1, eps_seed)?,
        fine_epsilon: 1e-2,
        fine_seconds: time_barycenter(d_fixed, 1e-2, eps_seed)?,
    };

    Ok(BenchReport {
        rows,
        sinkhorn_slope,
        barycenter_slope,
        eps_direction,
    })
}
