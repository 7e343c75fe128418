//! Seeded generators for synthetic networks and datasets.
//!
//! Two families: textured images with per-agent channel shifts (exercises
//! the alignment pipeline), and a 3-class shape dataset whose spatial class
//! patterns are confounded by agent-specific color tints (exercises the
//! federated learner with and without alignment).

use rand::Rng;

use crate::align::AgentState;
use crate::dataset::AgentDataset;
use crate::error::Result;
use crate::image::RgbImage;
use crate::seed::{self, stream};

/// Standard-normal draw via Box-Muller.
fn gaussian(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn clamp_level(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// A mid-range textured image: smooth random blobs plus pixel noise, levels
/// kept away from 0/255 so channel shifts stay monotone (no clipping).
fn textured_image(side: usize, rng: &mut rand_chacha::ChaCha8Rng) -> RgbImage {
    let n = side * side;
    let cx = rng.random_range(0.2..0.8);
    let cy = rng.random_range(0.2..0.8);
    let scale = rng.random_range(0.15..0.5);
    let amp = rng.random_range(20.0..40.0);
    let base = rng.random_range(110.0..146.0);
    let mut planes: [Vec<u8>; 3] = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for y in 0..side {
        for x in 0..side {
            let fx = x as f64 / side as f64;
            let fy = y as f64 / side as f64;
            let d2 = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy);
            let blob = amp * (-d2 / (2.0 * scale * scale)).exp();
            for plane in planes.iter_mut() {
                let noise = 6.0 * gaussian(rng);
                plane.push(clamp_level(base + blob + noise));
            }
        }
    }
    RgbImage::new(side, side, planes).expect("plane sizes match")
}

fn shift_image(img: &RgbImage, shift_levels: [i16; 3]) -> RgbImage {
    let planes: Vec<Vec<u8>> = (0..3)
        .map(|c| {
            img.plane(c)
                .iter()
                .map(|&l| (l as i16 + shift_levels[c]).clamp(0, 255) as u8)
                .collect()
        })
        .collect();
    RgbImage::new(img.width(), img.height(), planes.try_into().unwrap()).unwrap()
}

/// A network whose agents hold the same image family under per-agent
/// channel shifts (in intensity units, `-1.0..=1.0`, applied to all three
/// channels of every image).
pub fn shifted_network(
    n_agents: usize,
    images_per_agent: usize,
    side: usize,
    shifts: &[f64],
    seed: u64,
) -> Result<Vec<AgentState>> {
    assert_eq!(shifts.len(), n_agents, "one shift per agent");
    let mut agents = Vec::with_capacity(n_agents);
    for a in 0..n_agents {
        let mut rng = seed::rng(seed::derive(seed, &[stream::SYNTHETIC, a as u64]));
        let shift = (shifts[a] * 255.0).round() as i16;
        let mut images = Vec::with_capacity(images_per_agent);
        let mut labels = Vec::with_capacity(images_per_agent);
        for k in 0..images_per_agent {
            let img = textured_image(side, &mut rng);
            images.push(shift_image(&img, [shift, shift, shift]));
            labels.push((k % 10) as u8);
        }
        agents.push(AgentState::new(a, AgentDataset::new(images, labels)?));
    }
    Ok(agents)
}

/// Knobs of the class/color confound dataset.
#[derive(Debug, Clone)]
pub struct ClassColorConfig {
    pub n_agents: usize,
    pub images_per_agent: usize,
    pub test_size: usize,
    pub side: usize,
    /// Foreground-over-background luminance contrast of the class shape.
    pub shape_contrast: f64,
    /// Magnitude of the per-(agent, class) channel tint.
    pub tint: f64,
    /// Per-pixel gaussian noise, in levels.
    pub noise: f64,
    /// Magnitude of the per-agent all-channel brightness shift, in levels;
    /// agent `a` is shifted by `agent_shift * (a - (N-1)/2) / max(1, (N-1)/2)`.
    pub agent_shift: f64,
    pub seed: u64,
}

impl Default for ClassColorConfig {
    fn default() -> Self {
        Self {
            n_agents: 5,
            images_per_agent: 200,
            test_size: 500,
            side: 32,
            shape_contrast: 20.0,
            tint: 60.0,
            noise: 25.0,
            agent_shift: 30.0,
            seed: 0,
        }
    }
}

pub const N_SHAPE_CLASSES: usize = 3;

/// Class shape mask: 0 = left/right split, 1 = top/bottom split,
/// 2 = centered square.
fn shape_mask(class: usize, x: usize, y: usize, side: usize) -> bool {
    match class {
        0 => x < side / 2,
        1 => y < side / 2,
        _ => {
            let q = side / 4;
            (q..side - q).contains(&x) && (q..side - q).contains(&y)
        }
    }
}

/// Channel tint directions; index `t` boosts channel `t` and damps the rest.
fn tint_vector(t: usize, magnitude: f64) -> [f64; 3] {
    let mut v = [-0.5 * magnitude; 3];
    v[t] = magnitude;
    v
}

fn class_color_image(
    class: usize,
    tint_idx: usize,
    base_shift: f64,
    cfg: &ClassColorConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> RgbImage {
    let side = cfg.side;
    let n = side * side;
    let tint = tint_vector(tint_idx, cfg.tint);
    let base = 110.0 + base_shift;
    let mut planes: [Vec<u8>; 3] = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for y in 0..side {
        for x in 0..side {
            let fg = shape_mask(class, x, y, side);
            let level = base + if fg { cfg.shape_contrast } else { 0.0 };
            for (c, plane) in planes.iter_mut().enumerate() {
                let noise = cfg.noise * gaussian(rng);
                plane.push(clamp_level(level + tint[c] + noise));
            }
        }
    }
    RgbImage::new(side, side, planes).expect("plane sizes match")
}

/// 3-class shape dataset with a class/color confound that conflicts across
/// agents.
///
/// Agent `a` tints class `c` with color `(a + c) mod 3`, so within any agent
/// color predicts class perfectly while the association disagrees between
/// agents. Test images draw their tint uniformly at random, independent of
/// class: color carries no class signal at test time, the shape does.
pub fn class_color_network(cfg: &ClassColorConfig) -> Result<(Vec<AgentState>, AgentDataset)> {
    let mut agents = Vec::with_capacity(cfg.n_agents);
    let half = ((cfg.n_agents.saturating_sub(1)) as f64 / 2.0).max(1.0);
    for a in 0..cfg.n_agents {
        let mut rng = seed::rng(seed::derive(cfg.seed, &[stream::SYNTHETIC, a as u64]));
        let base_shift = cfg.agent_shift * (a as f64 - (cfg.n_agents - 1) as f64 / 2.0) / half;
        let mut images = Vec::with_capacity(cfg.images_per_agent);
        let mut labels = Vec::with_capacity(cfg.images_per_agent);
        for k in 0..cfg.images_per_agent {
            let class = k % N_SHAPE_CLASSES;
            let tint_idx = (a + class) % 3;
            images.push(class_color_image(class, tint_idx, base_shift, cfg, &mut rng));
            labels.push(class as u8);
        }
        agents.push(AgentState::new(a, AgentDataset::new(images, labels)?));
    }

    let mut rng = seed::rng(seed::derive(cfg.seed, &[stream::SYNTHETIC, stream::TEST_SET]));
    let mut images = Vec::with_capacity(cfg.test_size);
    let mut labels = Vec::with_capacity(cfg.test_size);
    for k in 0..cfg.test_size {
        let class = k % N_SHAPE_CLASSES;
        let tint_idx = rng.random_range(0..3usize);
        images.push(class_color_image(class, tint_idx, 0.0, cfg, &mut rng));
        labels.push(class as u8);
    }
    let test = AgentDataset::new(images, labels)?;
    Ok((agents, test))
}
