//! Simulated-network orchestration of the alignment pipeline.
//!
//! Agents compute channel-wise barycenter triplets locally, the server
//! aggregates a global triplet from collected triplets only (no raw images
//! cross the agent/server boundary), and every local image is projected onto
//! the global target. Alignment is non-destructive: originals stay alongside
//! the aligned copies for paired pre/post evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::barycenter::{bregman_barycenter, BarycenterConfig};
use crate::dataset::AgentDataset;
use crate::error::{Error, Result, ResultExt};
use crate::exact1d::exact_1d_wasserstein;
use crate::image::{
    image_to_channel_measures, pooled_histograms, ChannelTriplet, MeasureSpec, CHANNELS,
    CHANNEL_NAMES,
};
use crate::measure::DiscreteMeasure;
use crate::projection::project_image;
use crate::seed::{self, stream};
use crate::sinkhorn::SinkhornConfig;

/// One agent of the simulated network.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub agent_id: usize,
    pub dataset: AgentDataset,
    /// Local barycenter triplet, present after the local phase.
    pub local_triplet: Option<ChannelTriplet>,
    /// Aligned copy of the dataset, present after projection.
    pub aligned: Option<AgentDataset>,
}

impl AgentState {
    pub fn new(agent_id: usize, dataset: AgentDataset) -> Self {
        Self {
            agent_id,
            dataset,
            local_triplet: None,
            aligned: None,
        }
    }

    pub fn is_aligned(&self) -> bool {
        self.aligned.is_some()
    }
}

/// The central server. Its only ingress is [`ServerState::collect`], which
/// accepts channel triplets and sample counts — never images.
#[derive(Debug, Clone, Default)]
pub struct ServerState {
    collected: BTreeMap<usize, (ChannelTriplet, usize)>,
    pub global_triplet: Option<ChannelTriplet>,
}

impl ServerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn collect(&mut self, agent_id: usize, triplet: ChannelTriplet, sample_count: usize) {
        self.collected.insert(agent_id, (triplet, sample_count));
    }

    pub fn collected_ids(&self) -> Vec<usize> {
        self.collected.keys().copied().collect()
    }
}

/// Orchestration knobs for [`align_network`].
#[derive(Debug, Clone)]
pub struct AlignConfig {
    pub measure: MeasureSpec,
    pub sinkhorn: SinkhornConfig,
    pub barycenter: BarycenterConfig,
    /// Weight agents by shard size in the global barycenter (default: uniform).
    pub weight_agents_by_size: bool,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            measure: MeasureSpec::default(),
            sinkhorn: SinkhornConfig::default(),
            barycenter: BarycenterConfig::default(),
            weight_agents_by_size: false,
            seed: 0,
        }
    }
}

/// Pairwise per-channel W1 distances between agents' pooled histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyMatrix {
    n_agents: usize,
    /// Row-major `[i][j][c]`.
    values: Vec<f64>,
}

impl DiscrepancyMatrix {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn get(&self, i: usize, j: usize, channel: usize) -> f64 {
        self.values[(i * self.n_agents + j) * CHANNELS + channel]
    }

    /// Mean of the off-diagonal entries over all channels.
    pub fn mean_off_diagonal(&self) -> f64 {
        if self.n_agents < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.n_agents {
            for j in 0..self.n_agents {
                if i == j {
                    continue;
                }
                for c in 0..CHANNELS {
                    sum += self.get(i, j, c);
                    count += 1;
                }
            }
        }
        sum / count as f64
    }
}

/// Wall-clock seconds per pipeline phase.
#[derive(Debug, Clone, Default)]
pub struct PhaseTimings {
    pub local_seconds: f64,
    pub aggregate_seconds: f64,
    pub project_seconds: f64,
    pub metrics_seconds: f64,
}

/// Pre/post discrepancy matrices plus phase timings.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    pub pre: DiscrepancyMatrix,
    pub post: DiscrepancyMatrix,
    pub timings: PhaseTimings,
}

impl AlignmentReport {
    /// CSV rows `agent_i,agent_j,channel,pre_w1,post_w1` for unordered pairs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent_i,agent_j,channel,pre_w1,post_w1\n");
        let n = self.pre.n_agents();
        for i in 0..n {
            for j in (i + 1)..n {
                for c in 0..CHANNELS {
                    out.push_str(&format!(
                        "{i},{j},{},{},{}\n",
                        CHANNEL_NAMES[c],
                        self.pre.get(i, j, c),
                        self.post.get(i, j, c)
                    ));
                }
            }
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
            "agents: {}\nmean pairwise W1 before: {:.6}\nmean pairwise W1 after:  {:.6}\nphases (s): local {:.3}, aggregate {:.3}, project {:.3}, metrics {:.3}\n",
            self.pre.n_agents(),
            self.pre.mean_off_diagonal(),
            self.post.mean_off_diagonal(),
            self.timings.local_seconds,
            self.timings.aggregate_seconds,
            self.timings.project_seconds,
            self.timings.metrics_seconds,
        )
    }
}

/// Shard a labeled dataset into near-equal disjoint parts by uniform
/// sampling without replacement; deterministic in `seed`.
pub fn partition_dataset(
    dataset: &AgentDataset,
    n_agents: usize,
    seed: u64,
) -> Result<Vec<AgentDataset>> {
    let n = dataset.len();
    if n_agents == 0 {
        return Err(Error::validation("need at least one agent"));
    }
    if n_agents > n {
        return Err(Error::validation(format!(
            "cannot split {n} samples across {n_agents} agents"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::derive(seed, &[stream::PARTITION]));
    indices.shuffle(&mut rng);

    let base = n / n_agents;
    let extra = n % n_agents;
    let mut shards = Vec::with_capacity(n_agents);
    let mut offset = 0;
    for a in 0..n_agents {
        let size = base + usize::from(a < extra);
        let slice = &indices[offset..offset + size];
        offset += size;
        let images = slice.iter().map(|&i| dataset.images[i].clone()).collect();
        let labels = slice.iter().map(|&i| dataset.labels[i]).collect();
        shards.push(AgentDataset::new(images, labels)?);
    }
    Ok(shards)
}

/// Channel-wise barycenter of the agent's per-image channel measures.
pub fn compute_local_triplet(
    agent: &AgentState,
    measure: &MeasureSpec,
    cfg: &BarycenterConfig,
    global_seed: u64,
) -> Result<ChannelTriplet> {
    if agent.dataset.images.is_empty() {
        return Err(Error::validation(format!(
            "agent {} has no images",
            agent.agent_id
        )));
    }
    let grid = measure.grid();
    let mut per_channel: Vec<Vec<DiscreteMeasure>> = vec![Vec::new(); CHANNELS];
    for (idx, img) in agent.dataset.images.iter().enumerate() {
        let mode = measure.for_image(global_seed, agent.agent_id as u64, idx as u64);
        let triplet = image_to_channel_measures(img, &mode)?;
        for c in 0..CHANNELS {
            per_channel[c].push(triplet.channel(c).on_grid(&grid)?);
        }
    }
    let mut channels = Vec::with_capacity(CHANNELS);
    for (c, inputs) in per_channel.iter().enumerate() {
        let out = bregman_barycenter(inputs, cfg)
            .context(format!("agent {}, {} channel", agent.agent_id, CHANNEL_NAMES[c]))?;
        if !out.converged {
            return Err(Error::BarycenterNotConverged {
                change: out.last_change,
                iterations: out.iterations,
            }
            .in_context(format!(
                "agent {}, {} channel",
                agent.agent_id, CHANNEL_NAMES[c]
            )));
        }
        channels.push(out.measure);
    }
    let blue = channels.pop().unwrap();
    let green = channels.pop().unwrap();
    let red = channels.pop().unwrap();
    ChannelTriplet::new(red, green, blue)
}

/// Barycenter-of-barycenters over every collected local triplet.
///
/// Requires a triplet from each expected agent; the result is also stored in
/// `server.global_triplet`.
pub fn aggregate_global_triplet(
    server: &mut ServerState,
    expected_agents: &[usize],
    cfg: &BarycenterConfig,
    weight_by_size: bool,
) -> Result<ChannelTriplet> {
    for id in expected_agents {
        if !server.collected.contains_key(id) {
            return Err(Error::validation(format!(
                "missing local triplet from agent {id}"
            )));
        }
    }
    let entries: Vec<(&ChannelTriplet, usize)> = server
        .collected
        .values()
        .map(|(t, n)| (t, *n))
        .collect();
    let weights = if weight_by_size {
        let total: usize = entries.iter().map(|(_, n)| n).sum();
        if total == 0 {
            return Err(Error::validation("agents reported zero total samples"));
        }
        let mut w: Vec<f64> = entries
            .iter()
            .map(|(_, n)| *n as f64 / total as f64)
            .collect();
        let sum: f64 = w.iter().sum();
        let last = w.len() - 1;
        w[last] += 1.0 - sum;
        Some(w)
    } else {
        None
    };
    let cfg = BarycenterConfig {
        weights,
        ..cfg.clone()
    };

    let mut channels = Vec::with_capacity(CHANNELS);
    for c in 0..CHANNELS {
        let inputs: Vec<DiscreteMeasure> =
            entries.iter().map(|(t, _)| t.channel(c).clone()).collect();
        let out = bregman_barycenter(&inputs, &cfg)
            .context(format!("global {} channel", CHANNEL_NAMES[c]))?;
        if !out.converged {
            return Err(Error::BarycenterNotConverged {
                change: out.last_change,
                iterations: out.iterations,
            }
            .in_context(format!("global {} channel", CHANNEL_NAMES[c])));
        }
        channels.push(out.measure);
    }
    let blue = channels.pop().unwrap();
    let green = channels.pop().unwrap();
    let red = channels.pop().unwrap();
    let triplet = ChannelTriplet::new(red, green, blue)?;
    server.global_triplet = Some(triplet.clone());
    Ok(triplet)
}

/// Run the full pipeline: local triplets, server aggregation, broadcast,
/// per-image projection, and pre/post discrepancy metrics.
pub fn align_network(
    agents: &mut [AgentState],
    server: &mut ServerState,
    cfg: &AlignConfig,
) -> Result<AlignmentReport> {
    if agents.is_empty() {
        return Err(Error::validation("network has no agents"));
    }
    {
        let mut ids: Vec<usize> = agents.iter().map(|a| a.agent_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != agents.len() {
            return Err(Error::validation("agent ids must be unique"));
        }
    }
    cfg.measure.validate()?;

    // Local phase: per-agent barycenter triplets, in parallel.
    let t0 = Instant::now();
    let triplets: Vec<ChannelTriplet> = agents
        .par_iter()
        .map(|agent| compute_local_triplet(agent, &cfg.measure, &cfg.barycenter, cfg.seed))
        .collect::<Result<_>>()?;
    let local_seconds = t0.elapsed().as_secs_f64();

    for (agent, triplet) in agents.iter_mut().zip(&triplets) {
        agent.local_triplet = Some(triplet.clone());
        server.collect(agent.agent_id, triplet.clone(), agent.dataset.len());
    }

    // Global phase at the server.
    let t0 = Instant::now();
    let expected: Vec<usize> = agents.iter().map(|a| a.agent_id).collect();
    let global = aggregate_global_triplet(
        server,
        &expected,
        &cfg.barycenter,
        cfg.weight_agents_by_size,
    )?;
    let aggregate_seconds = t0.elapsed().as_secs_f64();

    // Broadcast and project every image, in parallel across (agent, image).
    let t0 = Instant::now();
    let jobs: Vec<(usize, usize)> = agents
        .iter()
        .enumerate()
        .flat_map(|(ai, a)| (0..a.dataset.images.len()).map(move |i| (ai, i)))
        .collect();
    let projected: Vec<crate::image::RgbImage> = jobs
        .par_iter()
        .map(|&(ai, i)| {
            let agent = &agents[ai];
            let mode = cfg
                .measure
                .for_image(cfg.seed, agent.agent_id as u64, i as u64);
            project_image(&agent.dataset.images[i], &global, &mode, &cfg.sinkhorn)
                .map(|p| p.image)
                .context(format!("projection: agent {}, image {i}", agent.agent_id))
        })
        .collect::<Result<_>>()?;
    let mut cursor = 0usize;
    for agent in agents.iter_mut() {
        let n = agent.dataset.images.len();
        let images = projected[cursor..cursor + n].to_vec();
        cursor += n;
        agent.aligned = Some(AgentDataset::new(images, agent.dataset.labels.clone())?);
    }
    let project_seconds = t0.elapsed().as_secs_f64();

    // Discrepancy metrics.
    let t0 = Instant::now();
    let pre = discrepancy_matrix(agents, false)?;
    let post = discrepancy_matrix(agents, true)?;
    let metrics_seconds = t0.elapsed().as_secs_f64();

    Ok(AlignmentReport {
        pre,
        post,
        timings: PhaseTimings {
            local_seconds,
            aggregate_seconds,
            project_seconds,
            metrics_seconds,
        },
    })
}

/// Pairwise exact W1 (p=1) between pooled 256-bin channel histograms.
pub fn discrepancy_matrix(agents: &[AgentState], use_aligned: bool) -> Result<DiscrepancyMatrix> {
    let n = agents.len();
    let histograms: Vec<ChannelTriplet> = agents
        .par_iter()
        .map(|a| {
            let data = if use_aligned {
                a.aligned.as_ref().ok_or_else(|| {
                    Error::validation(format!("agent {} has no aligned dataset", a.agent_id))
                })?
            } else {
                &a.dataset
            };
            pooled_histograms(&data.images)
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0.0f64; n * n * CHANNELS];
    for i in 0..n {
        for j in (i + 1)..n {
            for c in 0..CHANNELS {
                let d = exact_1d_wasserstein(histograms[i].channel(c), histograms[j].channel(c), 1.0)?;
                values[(i * n + j) * CHANNELS + c] = d;
                values[(j * n + i) * CHANNELS + c] = d;
            }
        }
    }
    Ok(DiscrepancyMatrix { n_agents: n, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RgbImage;

    fn tiny_dataset(n: usize, seed: u64) -> AgentDataset {
        let mut rng = seed::rng(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for k in 0..n {
            let mut planes: [Vec<u8>; 3] = [vec![], vec![], vec![]];
            for i in 0..64usize {
                use rand::Rng;
                let base: u8 = rng.random_range(60..=190);
                planes[0].push(base.wrapping_add((i % 7) as u8));
                planes[1].push(base.wrapping_add((i % 5) as u8));
                planes[2].push(base);
            }
            images.push(RgbImage::new(8, 8, planes).unwrap());
            labels.push((k % 10) as u8);
        }
        AgentDataset::new(images, labels).unwrap()
    }

    #[test]
    fn partition_is_disjoint_covering_and_balanced() {
        let data = tiny_dataset(10, 1);
        let shards = partition_dataset(&data, 2, 7).unwrap();
        assert_eq!(shards.len(), 2);
        assert_eq!(shards[0].len(), 5);
        assert_eq!(shards[1].len(), 5);
        // Union matches the dataset as a multiset of (image, label) pairs.
        let mut all: Vec<(Vec<u8>, u8)> = shards
            .iter()
            .flat_map(|s| {
                s.images
                    .iter()
                    .zip(&s.labels)
                    .map(|(img, l)| (img.to_interleaved(), *l))
            })
            .collect();
        let mut orig: Vec<(Vec<u8>, u8)> = data
            .images
            .iter()
            .zip(&data.labels)
            .map(|(img, l)| (img.to_interleaved(), *l))
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn partition_single_agent_is_identity_sized() {
        let data = tiny_dataset(7, 2);
        let shards = partition_dataset(&data, 1, 3).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].len(), 7);
    }

    #[test]
    fn partition_deterministic_in_seed() {
        let data = tiny_dataset(9, 3);
        let a = partition_dataset(&data, 3, 11).unwrap();
        let b = partition_dataset(&data, 3, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.images, y.images);
        }
        let c = partition_dataset(&data, 3, 12).unwrap();
        let same = a
            .iter()
            .zip(&c)
            .all(|(x, y)| x.images == y.images && x.labels == y.labels);
        assert!(!same, "different seeds should permute differently");
        assert_eq!(c.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![3, 3, 3]);
    }

    #[test]
    fn partition_rejects_oversized_networks() {
        let data = tiny_dataset(3, 4);
        assert!(partition_dataset(&data, 4, 0).is_err());
        assert!(partition_dataset(&data, 0, 0).is_err());
    }

    #[test]
    fn aggregate_requires_every_agent() {
        let mut server = ServerState::new();
        let data = tiny_dataset(2, 5);
        let agent = AgentState::new(0, data);
        let t = compute_local_triplet(
            &agent,
            &MeasureSpec::Histogram { bins: 64 },
            &BarycenterConfig::default(),
            0,
        )
        .unwrap();
        server.collect(0, t, 2);
        let err =
            aggregate_global_triplet(&mut server, &[0, 1], &BarycenterConfig::default(), false)
                .unwrap_err();
        assert!(err.to_string().contains("agent 1"), "{err}");
    }

    #[test]
    fn aggregate_is_agent_order_invariant() {
        let d0 = tiny_dataset(2, 6);
        let d1 = tiny_dataset(2, 7);
        let mk = |id: usize, data: &AgentDataset| {
            compute_local_triplet(
                &AgentState::new(id, data.clone()),
                &MeasureSpec::Histogram { bins: 64 },
                &BarycenterConfig::default(),
                9,
            )
            .unwrap()
        };
        let t0 = mk(0, &d0);
        let t1 = mk(1, &d1);
        let mut s1 = ServerState::new();
        s1.collect(0, t0.clone(), 2);
        s1.collect(1, t1.clone(), 2);
        let g1 =
            aggregate_global_triplet(&mut s1, &[0, 1], &BarycenterConfig::default(), false)
                .unwrap();
        let mut s2 = ServerState::new();
        s2.collect(1, t1, 2);
        s2.collect(0, t0, 2);
        let g2 =
            aggregate_global_triplet(&mut s2, &[0, 1], &BarycenterConfig::default(), false)
                .unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn discrepancy_identical_agents_is_zero() {
        let data = tiny_dataset(3, 8);
        let agents = vec![
            AgentState::new(0, data.clone()),
            AgentState::new(1, data),
        ];
        let m = discrepancy_matrix(&agents, false).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for c in 0..CHANNELS {
                    assert_eq!(m.get(i, j, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn discrepancy_detects_single_channel_shift() {
        let base = tiny_dataset(4, 9);
        let shifted_images: Vec<RgbImage> = base
            .images
            .iter()
            .map(|img| {
                let mut planes = img.planes().clone();
                for l in planes[0].iter_mut() {
                    *l = l.saturating_add(64).min(255);
                }
                RgbImage::new(img.width(), img.height(), planes).unwrap()
            })
            .collect();
        let shifted = AgentDataset::new(shifted_images, base.labels.clone()).unwrap();
        let agents = vec![AgentState::new(0, base), AgentState::new(1, shifted)];
        let m = discrepancy_matrix(&agents, false).unwrap();
        // Red shifted by 64 levels = 0.25 in intensity units.
        assert!((m.get(0, 1, 0) - 0.25).abs() <= 0.01, "red {}", m.get(0, 1, 0));
        assert!(m.get(0, 1, 1) < 0.01, "green {}", m.get(0, 1, 1));
        assert!(m.get(0, 1, 2) < 0.01, "blue {}", m.get(0, 1, 2));
        // Symmetry is exact.
        for c in 0..CHANNELS {
            assert_eq!(m.get(0, 1, c), m.get(1, 0, c));
        }
    }

    #[test]
    fn report_csv_schema() {
        let pre = DiscrepancyMatrix {
            n_agents: 2,
            values: vec![0.0; 12],
        };
        let post = pre.clone();
        let report = AlignmentReport {
            pre,
            post,
            timings: PhaseTimings::default(),
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "agent_i,agent_j,channel,pre_w1,post_w1");
        assert_eq!(csv.lines().count(), 1 + 3);
    }
}
