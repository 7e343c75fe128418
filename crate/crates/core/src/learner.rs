//! Desk-scale FedAvg reference learner.
//!
//! A small softmax classifier (optional single 64-unit hidden layer) over
//! 8x8 box-downsampled RGB features, trained with mini-batch Adam. The
//! learner exists to measure the effect of alignment on federated
//! convergence, not to chase benchmark accuracy.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::align::AgentState;
use crate::dataset::AgentDataset;
use crate::error::{Error, Result, ResultExt};
use crate::image::{ChannelTriplet, MeasureSpec, RgbImage};
use crate::projection::project_image;
use crate::seed::{self, stream};
use crate::sinkhorn::SinkhornConfig;

/// Downsampled feature grid side; features are `POOL_SIDE^2 * 3` values.
pub const POOL_SIDE: usize = 8;
pub const FEATURE_DIM: usize = POOL_SIDE * POOL_SIDE * 3;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Named parameter segments; all agents in a run share one layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<(String, usize)>,
}

impl Layout {
    pub fn new(segments: Vec<(String, usize)>) -> Self {
        Self { segments }
    }

    pub fn total(&self) -> usize {
        self.segments.iter().map(|(_, n)| n).sum()
    }

    pub fn segments(&self) -> &[(String, usize)] {
        &self.segments
    }

    fn header(&self) -> String {
        self.segments
            .iter()
            .map(|(name, n)| format!("{name}:{n}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    fn parse_header(s: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for part in s.split(',') {
            let (name, n) = part
                .split_once(':')
                .ok_or_else(|| Error::format(format!("bad layout segment {part:?}")))?;
            let n: usize = n
                .parse()
                .map_err(|_| Error::format(format!("bad segment length in {part:?}")))?;
            segments.push((name.to_string(), n));
        }
        if segments.is_empty() {
            return Err(Error::format("empty layout header"));
        }
        Ok(Self { segments })
    }
}

/// A flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
    layout: Layout,
}

impl ModelParams {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::validation(format!(
                "{} values for layout of {}",
                values.len(),
                layout.total()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("parameters must be finite"));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Binary checkpoint: a text header naming the layout, then the raw
    /// little-endian f64 values.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"fedalign-checkpoint v1\n");
        bytes.extend_from_slice(format!("layout: {}\n", self.layout.header()).as_bytes());
        bytes.extend_from_slice(format!("values: {}\n", self.values.len()).as_bytes());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut lines_end = 0usize;
        let mut header_lines = Vec::new();
        for _ in 0..3 {
            let rest = &bytes[lines_end..];
            let nl = rest
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| Error::format("checkpoint header truncated"))?;
            header_lines.push(String::from_utf8_lossy(&rest[..nl]).into_owned());
            lines_end += nl + 1;
        }
        if header_lines[0] != "fedalign-checkpoint v1" {
            return Err(Error::format(format!(
                "not a checkpoint: first line {:?}",
                header_lines[0]
            )));
        }
        let layout = Layout::parse_header(
            header_lines[1]
                .strip_prefix("layout: ")
                .ok_or_else(|| Error::format("missing layout header"))?,
        )?;
        let count: usize = header_lines[2]
            .strip_prefix("values: ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("missing values header"))?;
        let body = &bytes[lines_end..];
        if body.len() != count * 8 {
            return Err(Error::format(format!(
                "checkpoint body has {} bytes, expected {}",
                body.len(),
                count * 8
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(values, layout)
    }
}

/// Architecture: `hidden_units == 0` is plain multinomial logistic
/// regression; otherwise one ReLU hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub n_classes: usize,
}

impl ModelSpec {
    pub fn layout(&self) -> Layout {
        if self.hidden_units == 0 {
            Layout::new(vec![
                ("w".into(), self.input_dim * self.n_classes),
                ("b".into(), self.n_classes),
            ])
        } else {
            Layout::new(vec![
                ("w1".into(), self.input_dim * self.hidden_units),
                ("b1".into(), self.hidden_units),
                ("w2".into(), self.hidden_units * self.n_classes),
                ("b2".into(), self.n_classes),
            ])
        }
    }

    pub fn logits(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let (d, h, k) = (self.input_dim, self.hidden_units, self.n_classes);
        if h == 0 {
            let w = &values[..d * k];
            let b = &values[d * k..];
            let mut z = b.to_vec();
            for (i, xi) in x.iter().enumerate() {
                if *xi == 0.0 {
                    continue;
                }
                let row = &w[i * k..(i + 1) * k];
                for (zk, wk) in z.iter_mut().zip(row) {
                    *zk += xi * wk;
                }
            }
            z
        } else {
            let w1 = &values[..d * h];
            let b1 = &values[d * h..d * h + h];
            let w2 = &values[d * h + h..d * h + h + h * k];
            let b2 = &values[d * h + h + h * k..];
            let mut hidden = b1.to_vec();
            for (i, xi) in x.iter().enumerate() {
                if *xi == 0.0 {
                    continue;
                }
                let row = &w1[i * h..(i + 1) * h];
                for (hj, wj) in hidden.iter_mut().zip(row) {
                    *hj += xi * wj;
                }
            }
            for hj in hidden.iter_mut() {
                if *hj < 0.0 {
                    *hj = 0.0;
                }
            }
            let mut z = b2.to_vec();
            for (j, hj) in hidden.iter().enumerate() {
                if *hj == 0.0 {
                    continue;
                }
                let row = &w2[j * k..(j + 1) * k];
                for (zk, wk) in z.iter_mut().zip(row) {
                    *zk += hj * wk;
                }
            }
            z
        }
    }

    pub fn predict(&self, values: &[f64], x: &[f64]) -> u8 {
        let z = self.logits(values, x);
        let mut best = 0usize;
        for (k, zk) in z.iter().enumerate() {
            if *zk > z[best] {
                best = k;
            }
        }
        best as u8
    }

    /// Mean softmax cross-entropy and its gradient over a batch.
    pub fn loss_and_grad(
        &self,
        values: &[f64],
        xs: &[&[f64]],
        ys: &[u8],
    ) -> (f64, Vec<f64>) {
        let (d, h, k) = (self.input_dim, self.hidden_units, self.n_classes);
        let mut grad = vec![0.0f64; values.len()];
        let mut loss = 0.0f64;
        let inv = 1.0 / xs.len() as f64;

        for (x, y) in xs.iter().zip(ys) {
            let y = *y as usize;
            if h == 0 {
                let z = self.logits(values, x);
                let (l, dz) = softmax_ce(&z, y);
                loss += l * inv;
                let (gw, gb) = grad.split_at_mut(d * k);
                for (i, xi) in x.iter().enumerate() {
                    if *xi == 0.0 {
                        continue;
                    }
                    let row = &mut gw[i * k..(i + 1) * k];
                    for (g, dzk) in row.iter_mut().zip(&dz) {
                        *g += xi * dzk * inv;
                    }
                }
                for (g, dzk) in gb.iter_mut().zip(&dz) {
                    *g += dzk * inv;
                }
            } else {
                let w1 = &values[..d * h];
                let b1 = &values[d * h..d * h + h];
                let w2 = &values[d * h + h..d * h + h + h * k];
                let b2 = &values[d * h + h + h * k..];
                // Forward, keeping the hidden activations.
                let mut hidden = b1.to_vec();
                for (i, xi) in x.iter().enumerate() {
                    if *xi == 0.0 {
                        continue;
                    }
                    let row = &w1[i * h..(i + 1) * h];
                    for (hj, wj) in hidden.iter_mut().zip(row) {
                        *hj += xi * wj;
                    }
                }
                let active: Vec<bool> = hidden.iter().map(|v| *v > 0.0).collect();
                for hj in hidden.iter_mut() {
                    if *hj < 0.0 {
                        *hj = 0.0;
                    }
                }
                let mut z = b2.to_vec();
                for (j, hj) in hidden.iter().enumerate() {
                    if *hj == 0.0 {
                        continue;
                    }
                    let row = &w2[j * k..(j + 1) * k];
                    for (zk, wk) in z.iter_mut().zip(row) {
                        *zk += hj * wk;
                    }
                }
                let (l, dz) = softmax_ce(&z, y);
                loss += l * inv;
                // Backward.
                let mut dh = vec![0.0f64; h];
                for (j, dhj) in dh.iter_mut().enumerate() {
                    if !active[j] {
                        continue;
                    }
                    let row = &w2[j * k..(j + 1) * k];
                    *dhj = row.iter().zip(&dz).map(|(w, dzk)| w * dzk).sum();
                }
                let (g1, rest) = grad.split_at_mut(d * h);
                let (gb1, rest) = rest.split_at_mut(h);
                let (g2, gb2) = rest.split_at_mut(h * k);
                for (j, hj) in hidden.iter().enumerate() {
                    if *hj == 0.0 {
                        continue;
                    }
                    let row = &mut g2[j * k..(j + 1) * k];
                    for (g, dzk) in row.iter_mut().zip(&dz) {
                        *g += hj * dzk * inv;
                    }
                }
                for (g, dzk) in gb2.iter_mut().zip(&dz) {
                    *g += dzk * inv;
                }
                for (i, xi) in x.iter().enumerate() {
                    if *xi == 0.0 {
                        continue;
                    }
                    let row = &mut g1[i * h..(i + 1) * h];
                    for (g, dhj) in row.iter_mut().zip(&dh) {
                        *g += xi * dhj * inv;
                    }
                }
                for (g, dhj) in gb1.iter_mut().zip(&dh) {
                    *g += dhj * inv;
                }
            }
        }
        (loss, grad)
    }
}

fn softmax_ce(z: &[f64], y: usize) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - z[y];
    let mut dz: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    dz[y] -= 1.0;
    (loss, dz)
}

/// 8x8 box-downsampled RGB features in `[0, 1]`.
pub fn image_features(img: &RgbImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for c in 0..3 {
        let plane = img.plane(c);
        for by in 0..POOL_SIDE {
            let y0 = by * h / POOL_SIDE;
            let y1 = ((by + 1) * h / POOL_SIDE).max(y0 + 1).min(h);
            for bx in 0..POOL_SIDE {
                let x0 = bx * w / POOL_SIDE;
                let x1 = ((bx + 1) * w / POOL_SIDE).max(x0 + 1).min(w);
                let mut sum = 0.0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += plane[y * w + x] as f64;
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                out.push(sum / (count * 255.0));
            }
        }
    }
    out
}

/// Training configuration (defaults: batch 16, Adam at 1e-3).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub n_agents: usize,
    pub participants_per_round: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_units: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_agents: 1,
            participants_per_round: 1,
            local_epochs: 2,
            rounds: 1,
            batch_size: 16,
            learning_rate: 1e-3,
            hidden_units: 64,
            n_classes: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Config for an `N/P` network with the conventional epoch rule: two
    /// local epochs when every agent participates, five otherwise.
    pub fn for_network(n_agents: usize, participants: usize) -> Self {
        Self {
            n_agents,
            participants_per_round: participants,
            local_epochs: if participants == n_agents { 2 } else { 5 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.participants_per_round == 0 || self.participants_per_round > self.n_agents {
            return Err(Error::validation(format!(
                "participants_per_round must satisfy 1 <= P <= N, got P={} N={}",
                self.participants_per_round, self.n_agents
            )));
        }
        if self.rounds == 0 {
            return Err(Error::validation("rounds must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::validation("learning_rate must be positive and finite"));
        }
        if self.n_classes < 2 {
            return Err(Error::validation("need at least 2 classes"));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            input_dim: FEATURE_DIM,
            hidden_units: self.hidden_units,
            n_classes: self.n_classes,
        }
    }
}

/// Seeded initial parameters, identical for every agent: Glorot-uniform
/// hidden weights, small-uniform classifier weights (near-zero initial
/// logits), zero biases.
pub fn init_model(spec: &ModelSpec, seed: u64) -> ModelParams {
    use rand::Rng;
    let mut rng = seed::rng(seed);
    let layout = spec.layout();
    let mut values = vec![0.0f64; layout.total()];
    const HEAD_SCALE: f64 = 0.01;
    if spec.hidden_units == 0 {
        let len = spec.input_dim * spec.n_classes;
        for v in values.iter_mut().take(len) {
            *v = rng.random_range(-HEAD_SCALE..HEAD_SCALE);
        }
    } else {
        let (d, h, k) = (spec.input_dim, spec.hidden_units, spec.n_classes);
        let limit = (6.0 / (d + h) as f64).sqrt();
        for v in values.iter_mut().take(d * h) {
            *v = rng.random_range(-limit..limit);
        }
        for v in values.iter_mut().skip(d * h + h).take(h * k) {
            *v = rng.random_range(-HEAD_SCALE..HEAD_SCALE);
        }
    }
    ModelParams::new(values, layout).expect("finite init")
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, values: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..values.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            values[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn train_on_features(
    params: &ModelParams,
    spec: &ModelSpec,
    features: &[Vec<f64>],
    labels: &[u8],
    cfg: &TrainConfig,
    batch_seed: u64,
) -> Result<(ModelParams, f64)> {
    if features.is_empty() {
        return Err(Error::validation("cannot train on an empty shard"));
    }
    if labels.iter().any(|y| (*y as usize) >= spec.n_classes) {
        return Err(Error::validation("label out of range for the model"));
    }
    let mut values = params.values().to_vec();
    let mut adam = AdamState::new(values.len());
    let mut epoch_loss = 0.0f64;

    if cfg.local_epochs == 0 {
        let xs: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
        let (loss, _) = spec.loss_and_grad(&values, &xs, labels);
        return Ok((params.clone(), loss));
    }

    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..features.len()).collect();
        let mut rng = seed::rng(seed::derive(batch_seed, &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| features[i].as_slice()).collect();
            let ys: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = spec.loss_and_grad(&values, &xs, &ys);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch}"
                )));
            }
            adam.step(&mut values, &grad, cfg.learning_rate);
            loss_sum += loss * batch.len() as f64;
        }
        epoch_loss = loss_sum / features.len() as f64;
    }
    Ok((ModelParams::new(values, params.layout().clone())?, epoch_loss))
}

/// Local mini-batch Adam on the shard; deterministic in
/// `(params, shard, batch_seed)`. Returns the updated parameters and the
/// mean training loss of the final epoch (with zero epochs: the evaluated
/// loss, parameters unchanged).
pub fn local_train(
    params: &ModelParams,
    shard: &AgentDataset,
    cfg: &TrainConfig,
    batch_seed: u64,
) -> Result<(ModelParams, f64)> {
    let spec = ModelSpec {
        input_dim: FEATURE_DIM,
        hidden_units: cfg.hidden_units,
        n_classes: cfg.n_classes,
    };
    let features: Vec<Vec<f64>> = shard.images.iter().map(image_features).collect();
    train_on_features(params, &spec, &features, &shard.labels, cfg, batch_seed)
}

/// Sample-count-weighted parameter mean (`p_a = n_a / Σ n_a`).
///
/// Per-coordinate terms are summed in sorted order, so the result is
/// bit-exactly invariant under permutations of the update list, and each
/// coordinate is clamped into the convex hull of the inputs.
pub fn fedavg_aggregate(updates: &[(ModelParams, usize)]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::validation("no updates to aggregate"));
    }
    let layout = updates[0].0.layout().clone();
    for (p, count) in updates {
        if p.layout() != &layout {
            return Err(Error::validation("all updates must share one layout"));
        }
        if *count == 0 {
            return Err(Error::validation("sample counts must be at least 1"));
        }
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    let dim = layout.total();
    let mut values = vec![0.0f64; dim];
    let mut terms = vec![0.0f64; updates.len()];
    for i in 0..dim {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (k, (p, n)) in updates.iter().enumerate() {
            let v = p.values()[i];
            lo = lo.min(v);
            hi = hi.max(v);
            terms[k] = v * (*n as f64 / total as f64);
        }
        terms.sort_unstable_by(f64::total_cmp);
        values[i] = terms.iter().sum::<f64>().clamp(lo, hi);
    }
    ModelParams::new(values, layout)
}

/// Per-round record of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub test_accuracy: f64,
    pub mean_local_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<RoundRecord>,
    pub final_params: ModelParams,
}

/// How to evaluate when training on aligned data: project the held-out test
/// set with the same global triplet the agents were aligned to.
#[derive(Debug, Clone)]
pub struct AlignedEval<'a> {
    pub global_triplet: &'a ChannelTriplet,
    pub measure: MeasureSpec,
    pub sinkhorn: &'a SinkhornConfig,
    pub seed: u64,
}

/// Federated training over the simulated network.
///
/// Per round: sample `P` of `N` agents without replacement, broadcast the
/// global parameters, train locally in parallel, aggregate by sample count,
/// and evaluate on the test set. With `aligned` present, agents train on
/// their aligned shards and the test set is projected onto the same global
/// triplet. `rounds == 0` yields an empty history and the initial model.
pub fn run_federated_training(
    agents: &[AgentState],
    test_set: &AgentDataset,
    cfg: &TrainConfig,
    aligned: Option<AlignedEval<'_>>,
) -> Result<TrainOutcome> {
    if agents.len() != cfg.n_agents {
        return Err(Error::validation(format!(
            "config says {} agents but network has {}",
            cfg.n_agents,
            agents.len()
        )));
    }
    if cfg.participants_per_round == 0 || cfg.participants_per_round > cfg.n_agents {
        return Err(Error::validation("participants_per_round must satisfy 1 <= P <= N"));
    }
    if test_set.is_empty() {
        return Err(Error::validation("test set must be non-empty"));
    }
    let spec = cfg.model_spec();

    let shards: Vec<&AgentDataset> = if aligned.is_some() {
        agents
            .iter()
            .map(|a| {
                a.aligned.as_ref().ok_or_else(|| {
                    Error::validation(format!("agent {} is not aligned", a.agent_id))
                })
            })
            .collect::<Result<_>>()?
    } else {
        agents.iter().map(|a| &a.dataset).collect()
    };

    let features: Vec<Vec<Vec<f64>>> = shards
        .par_iter()
        .map(|s| s.images.iter().map(image_features).collect())
        .collect();

    let test_features: Vec<Vec<f64>> = match &aligned {
        Some(ctx) => test_set
            .images
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let mode = ctx.measure.for_image(ctx.seed, stream::TEST_SET, i as u64);
                project_image(img, ctx.global_triplet, &mode, ctx.sinkhorn)
                    .map(|p| image_features(&p.image))
                    .context(format!("test-set projection, image {i}"))
            })
            .collect::<Result<_>>()?,
        None => test_set.images.par_iter().map(image_features).collect(),
    };

    let mut params = init_model(&spec, seed::derive(cfg.seed, &[stream::MODEL_INIT]));
    let mut history = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let t0 = Instant::now();
        let participants: Vec<usize> = if cfg.participants_per_round == cfg.n_agents {
            (0..cfg.n_agents).collect()
        } else {
            let mut rng = seed::rng(seed::derive(
                cfg.seed,
                &[stream::PARTICIPANTS, round as u64],
            ));
            let mut picked: Vec<usize> =
                sample(&mut rng, cfg.n_agents, cfg.participants_per_round).into_vec();
            picked.sort_unstable();
            picked
        };
        // One batch stream per round, shared across agents: with identical
        // shards everywhere, a round is then exactly centralized training.
        let batch_seed = seed::derive(cfg.seed, &[stream::BATCH_ORDER, round as u64]);

        let results: Vec<((ModelParams, usize), f64)> = participants
            .par_iter()
            .map(|&a| {
                train_on_features(
                    &params,
                    &spec,
                    &features[a],
                    &shards[a].labels,
                    cfg,
                    batch_seed,
                )
                .map(|(p, loss)| ((p, shards[a].len()), loss))
                .context(format!("round {round}, agent {a}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_local_loss =
            results.iter().map(|(_, loss)| loss).sum::<f64>() / results.len() as f64;
        let updates: Vec<(ModelParams, usize)> =
            results.into_iter().map(|(update, _)| update).collect();

        params = fedavg_aggregate(&updates).context(format!("round {round}"))?;
        let test_accuracy = evaluate_accuracy(&spec, &params, &test_features, &test_set.labels);
        history.push(RoundRecord {
            round,
            test_accuracy,
            mean_local_loss,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutcome {
        history,
        final_params: params,
    })
}

/// Fraction of correct argmax predictions.
pub fn evaluate_accuracy(
    spec: &ModelSpec,
    params: &ModelParams,
    features: &[Vec<f64>],
    labels: &[u8],
) -> f64 {
    let correct: usize = features
        .iter()
        .zip(labels)
        .filter(|(x, y)| spec.predict(params.values(), x) == **y)
        .count();
    correct as f64 / labels.len() as f64
}

/// History CSV: `round,test_accuracy,mean_local_loss,seconds`.
pub fn write_history(history: &[RoundRecord], path: &Path) -> Result<()> {
    let mut out = String::from("round,test_accuracy,mean_local_loss,seconds\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.round, r.test_accuracy, r.mean_local_loss, r.seconds
        ));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "round,test_accuracy,mean_local_loss,seconds" {
        return Err(Error::format(format!("unexpected history header {header:?}")));
    }
    let mut records = Vec::new();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format(format!("history line {}: bad field count", k + 2)));
        }
        records.push(RoundRecord {
            round: fields[0]
                .parse()
                .map_err(|_| Error::format(format!("history line {}: bad round", k + 2)))?,
            test_accuracy: fields[1]
                .parse()
                .map_err(|_| Error::format(format!("history line {}: bad accuracy", k + 2)))?,
            mean_local_loss: fields[2]
                .parse()
                .map_err(|_| Error::format(format!("history line {}: bad loss", k + 2)))?,
            seconds: fields[3]
                .parse()
                .map_err(|_| Error::format(format!("history line {}: bad seconds", k + 2)))?,
        });
    }
    Ok(records)
}
