//! Entropic Wasserstein barycenters on a fixed shared support.
//!
//! `bregman_barycenter` runs iterative Bregman projections for the
//! regularized barycenter objective `min_a Σ_s λ_s W_reg(a, b_s)` with
//! squared-distance ground cost on the common grid. `quantile_barycenter_1d`
//! is the closed-form 1D oracle (the W2 barycenter averages quantile
//! functions) used to validate it.

use ndarray::{Array1, Array2};

use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::exact1d::sorted_atoms;
use crate::measure::{DiscreteMeasure, MASS_FLOOR};
use crate::sinkhorn::LOG_DOMAIN_THRESHOLD;

#[derive(Debug, Clone)]
pub struct BarycenterConfig {
    /// Regularization strength of each `W_reg` term.
    pub epsilon: f64,
    /// Input weights `λ_s`; `None` means uniform.
    pub weights: Option<Vec<f64>>,
    /// Total iteration budget.
    pub max_iterations: usize,
    /// Stop when the barycenter iterate changes by at most this (max-norm).
    pub tolerance: f64,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-1,
            weights: None,
            max_iterations: 10_000,
            tolerance: 1e-7,
        }
    }
}

impl BarycenterConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_inputs: usize) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::validation("barycenter epsilon must be positive and finite"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::validation("tolerance must be positive"));
        }
        if let Some(w) = &self.weights {
            if w.len() != n_inputs {
                return Err(Error::validation(format!(
                    "{} barycenter weights for {} inputs",
                    w.len(),
                    n_inputs
                )));
            }
            if w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::validation("barycenter weights must be finite and nonnegative"));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "barycenter weights must sum to 1, got {sum}"
                )));
            }
        }
        Ok(())
    }

    fn resolved_weights(&self, n_inputs: usize) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / n_inputs as f64; n_inputs],
        }
    }
}

/// Output of the fixed-point iteration; `converged == false` flags runs that
/// hit the iteration budget first.
#[derive(Debug, Clone)]
pub struct BarycenterOutput {
    pub measure: DiscreteMeasure,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm change of the final iterate.
    pub last_change: f64,
}

/// Entropic-regularized barycenter of measures sharing one 1D support grid.
pub fn bregman_barycenter(
    inputs: &[DiscreteMeasure],
    cfg: &BarycenterConfig,
) -> Result<BarycenterOutput> {
    if inputs.is_empty() {
        return Err(Error::validation("barycenter needs at least one input"));
    }
    cfg.validate(inputs.len())?;
    let grid = inputs[0].support_1d()?.to_vec();
    for (s, m) in inputs.iter().enumerate() {
        if !m.is_on_grid(&grid) {
            return Err(Error::validation(format!(
                "barycenter input {s} is not on the shared support grid"
            )));
        }
    }
    let lambdas = cfg.resolved_weights(inputs.len());
    // Inputs with zero weight do not influence the geometric mean; drop them
    // so `0 * ln(r)` never produces NaN.
    let active: Vec<(usize, f64)> = lambdas
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, l)| *l > 0.0)
        .collect();
    if active.is_empty() {
        return Err(Error::validation("barycenter weights must not all be zero"));
    }

    let floored: Vec<DiscreteMeasure> =
        inputs.iter().map(|m| m.floored(MASS_FLOOR)).collect();
    let cost = CostMatrix::from_supports_1d(&grid, &grid, 2.0)?;

    let (weights, iterations, last_change) = if cfg.epsilon < LOG_DOMAIN_THRESHOLD {
        iterate_log(&floored, &active, &cost, cfg)
    } else {
        match iterate_plain(&floored, &active, &cost, cfg) {
            Some(out) => out,
            // Plain scaling left the representable range; the log path
            // handles the same problem unconditionally.
            None => iterate_log(&floored, &active, &cost, cfg),
        }
    };

    let converged = last_change <= cfg.tolerance;
    let total: f64 = weights.iter().sum();
    let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
    Ok(BarycenterOutput {
        measure: DiscreteMeasure::from_1d(grid, normalized)?,
        iterations,
        converged,
        last_change,
    })
}

/// Geometric mean `exp(Σ λ_s ln r_s[i])` with the terms summed in sorted
/// order, so jointly permuting (inputs, weights) is bit-exact invariant.
fn sorted_weighted_sum(terms: &mut Vec<f64>) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

fn iterate_plain(
    inputs: &[DiscreteMeasure],
    active: &[(usize, f64)],
    cost: &CostMatrix,
    cfg: &BarycenterConfig,
) -> Option<(Vec<f64>, usize, f64)> {
    let n = inputs[0].len();
    let eps = cfg.epsilon;
    let kernel = cost.entries().mapv(|c| (-c / eps).exp());

    let mut u: Vec<Array1<f64>> = vec![Array1::ones(n); active.len()];
    let mut kv: Vec<Array1<f64>> = vec![Array1::zeros(n); active.len()];
    let mut prev_a: Array1<f64> = Array1::from_elem(n, 1.0 / n as f64);
    let mut a = prev_a.clone();
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    let mut terms = Vec::with_capacity(active.len());

    while iterations < cfg.max_iterations {
        for (k, &(s, _)) in active.iter().enumerate() {
            let ktu = kernel.t().dot(&u[k]);
            let bw = inputs[s].weights();
            let v = Array1::from_shape_fn(n, |j| bw[j] / ktu[j]);
            kv[k] = kernel.dot(&v);
        }
        for i in 0..n {
            terms.clear();
            for (k, &(_, lambda)) in active.iter().enumerate() {
                terms.push(lambda * (u[k][i] * kv[k][i]).ln());
            }
            a[i] = sorted_weighted_sum(&mut terms).exp();
        }
        if a.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return None;
        }
        for k in 0..active.len() {
            for i in 0..n {
                u[k][i] = a[i] / kv[k][i];
            }
            if u[k].iter().any(|x| !x.is_finite()) {
                return None;
            }
        }
        iterations += 1;
        change = a
            .iter()
            .zip(prev_a.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        if change <= cfg.tolerance {
            return Some((a.to_vec(), iterations, change));
        }
        prev_a.assign(&a);
    }
    Some((a.to_vec(), iterations, change))
}

fn iterate_log(
    inputs: &[DiscreteMeasure],
    active: &[(usize, f64)],
    cost: &CostMatrix,
    cfg: &BarycenterConfig,
) -> (Vec<f64>, usize, f64) {
    let n = inputs[0].len();
    let s_count = active.len();
    let c = cost.entries();
    let ln_b: Vec<Vec<f64>> = active
        .iter()
        .map(|&(s, _)| inputs[s].weights().iter().map(|w| w.ln()).collect())
        .collect();

    let mut f = vec![vec![0.0f64; n]; s_count];
    let mut g = vec![vec![0.0f64; n]; s_count];
    // Per-input row log-sum-exp terms, reused between the marginal and the
    // potential update.
    let mut lse = Array2::<f64>::zeros((s_count, n));
    let mut ln_a = vec![0.0f64; n];
    let mut prev_a = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    let mut terms = Vec::with_capacity(s_count);

    let stages = crate::sinkhorn::epsilon_ladder(cfg.epsilon);
    let last_stage = stages.len() - 1;

    for (si, &eps) in stages.iter().enumerate() {
        let is_final = si == last_stage;
        let stage_tol = if is_final {
            cfg.tolerance
        } else {
            cfg.tolerance.max(1e-5)
        };
        let stage_cap = if is_final {
            cfg.max_iterations.saturating_sub(iterations)
        } else {
            200.min(cfg.max_iterations.saturating_sub(iterations))
        };

        let mut stage_iters = 0usize;
        while stage_iters < stage_cap {
            // Match each coupling's column marginal to its input.
            for k in 0..s_count {
                for j in 0..n {
                    let mut max = f64::NEG_INFINITY;
                    for i in 0..n {
                        let x = (f[k][i] - c[[i, j]]) / eps;
                        if x > max {
                            max = x;
                        }
                    }
                    let mut sum = 0.0;
                    for i in 0..n {
                        sum += (((f[k][i] - c[[i, j]]) / eps) - max).exp();
                    }
                    g[k][j] = eps * (ln_b[k][j] - (max + sum.ln()));
                }
            }
            // Row marginals and their geometric mean.
            for k in 0..s_count {
                for i in 0..n {
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..n {
                        let x = (g[k][j] - c[[i, j]]) / eps;
                        if x > max {
                            max = x;
                        }
                    }
                    let mut sum = 0.0;
                    for j in 0..n {
                        sum += (((g[k][j] - c[[i, j]]) / eps) - max).exp();
                    }
                    lse[[k, i]] = max + sum.ln();
                }
            }
            for i in 0..n {
                terms.clear();
                for (k, &(_, lambda)) in active.iter().enumerate() {
                    terms.push(lambda * (f[k][i] / eps + lse[[k, i]]));
                }
                ln_a[i] = sorted_weighted_sum(&mut terms);
            }
            // Match each coupling's row marginal to the barycenter.
            for k in 0..s_count {
                for i in 0..n {
                    f[k][i] = eps * (ln_a[i] - lse[[k, i]]);
                }
            }
            iterations += 1;
            stage_iters += 1;

            let mut max_change = 0.0f64;
            for i in 0..n {
                let ai = ln_a[i].exp();
                max_change = max_change.max((ai - prev_a[i]).abs());
                prev_a[i] = ai;
            }
            change = max_change;
            if stage_iters > 1 && change <= stage_tol {
                break;
            }
        }
    }

    (prev_a.clone(), iterations, change)
}

/// Closed-form 1D barycenter: the weighted average of quantile functions,
/// mass-preservingly binned back onto the shared grid.
pub fn quantile_barycenter_1d(
    inputs: &[DiscreteMeasure],
    weights: Option<&[f64]>,
) -> Result<DiscreteMeasure> {
    if inputs.is_empty() {
        return Err(Error::validation("barycenter needs at least one input"));
    }
    let grid = inputs[0].support_1d()?.to_vec();
    for (s, m) in inputs.iter().enumerate() {
        if !m.is_on_grid(&grid) {
            return Err(Error::validation(format!(
                "quantile barycenter input {s} is not on the shared support grid"
            )));
        }
    }
    let lambdas: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != inputs.len() {
                return Err(Error::validation("weight/input length mismatch"));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || w.iter().any(|x| *x < 0.0) {
                return Err(Error::validation("weights must form a probability simplex"));
            }
            w.to_vec()
        }
        None => vec![1.0 / inputs.len() as f64; inputs.len()],
    };

    let atoms: Vec<_> = inputs.iter().map(sorted_atoms).collect::<Result<_>>()?;
    let mut ptr = vec![0usize; inputs.len()];
    // Sorted grid order for binning (the grid is ascending in practice, but
    // binning only needs sortedness).
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| grid[i].total_cmp(&grid[j]));
    let sorted_grid: Vec<f64> = order.iter().map(|&i| grid[i]).collect();
    let mut sorted_weights = vec![0.0f64; grid.len()];

    let mut t = 0.0f64;
    loop {
        let mut next = f64::INFINITY;
        let mut value = 0.0;
        let mut exhausted = false;
        for (s, at) in atoms.iter().enumerate() {
            if ptr[s] >= at.positions.len() {
                exhausted = true;
                break;
            }
            value += lambdas[s] * at.positions[ptr[s]];
            next = next.min(at.cum[ptr[s]]);
        }
        if exhausted {
            break;
        }
        let seg = next - t;
        if seg > 0.0 {
            deposit(&sorted_grid, &mut sorted_weights, value, seg);
        }
        t = next;
        for (s, at) in atoms.iter().enumerate() {
            while ptr[s] < at.positions.len() && at.cum[ptr[s]] <= t {
                ptr[s] += 1;
            }
        }
        if t >= 1.0 {
            break;
        }
    }

    let total: f64 = sorted_weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::validation("quantile barycenter accumulated no mass"));
    }
    let mut weights_out = vec![0.0f64; grid.len()];
    for (k, &i) in order.iter().enumerate() {
        weights_out[i] = sorted_weights[k] / total;
    }
    DiscreteMeasure::from_1d(grid, weights_out)
}

/// Mass-preserving linear split of `mass` at position `x` onto the two
/// bracketing grid points (clamped at the ends).
fn deposit(grid: &[f64], weights: &mut [f64], x: f64, mass: f64) {
    let n = grid.len();
    if x <= grid[0] {
        weights[0] += mass;
        return;
    }
    if x >= grid[n - 1] {
        weights[n - 1] += mass;
        return;
    }
    let hi = grid.partition_point(|g| *g < x);
    let lo = hi - 1;
    if grid[hi] == x {
        weights[hi] += mass;
        return;
    }
    let span = grid[hi] - grid[lo];
    let frac_hi = (x - grid[lo]) / span;
    weights[lo] += mass * (1.0 - frac_hi);
    weights[hi] += mass * frac_hi;
}
