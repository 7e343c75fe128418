//! Per-image projection onto a target channel triplet.
//!
//! Each channel is an independent 1D transport problem: solve Sinkhorn from
//! the image's channel measure to the target channel, take the barycentric
//! projection of the plan at the source atoms, extend it to all 256 levels
//! by monotone piecewise-linear interpolation (identity outside the support
//! range, capped where identity would break monotonicity), and requantize.

use std::fs;
use std::path::Path;

use crate::cost::CostMatrix;
use crate::error::{Error, Result, ResultExt};
use crate::image::{image_to_channel_measures, ChannelTriplet, MeasureMode, RgbImage, CHANNELS, CHANNEL_NAMES};
use crate::measure::{DiscreteMeasure, INTENSITY_LEVELS};
use crate::sinkhorn::{sinkhorn, SinkhornConfig, TransportPlan};

/// Ground-cost exponent for projection transport.
const PROJECTION_EXPONENT: f64 = 2.0;

/// Barycentric projection of a plan: `T(x_i) = (Σ_j P_ij y_j) / a_i`,
/// clamped into the convex hull of the target support.
pub fn barycentric_map(
    plan: &TransportPlan,
    source: &DiscreteMeasure,
    target_support: &[f64],
) -> Result<Vec<f64>> {
    let (n, m) = plan.entries().dim();
    if n != source.len() || m != target_support.len() {
        return Err(Error::validation(format!(
            "plan shape ({n}, {m}) does not match source size {} and target size {}",
            source.len(),
            target_support.len()
        )));
    }
    if source.weights().iter().any(|a| *a <= 0.0) {
        return Err(Error::validation(
            "barycentric map needs strictly positive source weights (mass flooring)",
        ));
    }
    let (lo, hi) = target_support
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
            (lo.min(*y), hi.max(*y))
        });
    let mut mapped = Vec::with_capacity(n);
    for i in 0..n {
        let mut num = 0.0;
        for j in 0..m {
            num += plan.entries()[[i, j]] * target_support[j];
        }
        mapped.push((num / source.weights()[i]).clamp(lo, hi));
    }
    Ok(mapped)
}

/// A per-channel intensity remap: one continuous mapped value per input
/// level, plus its 8-bit quantization (round-half-even, clamped).
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityLut {
    mapped: Vec<f64>,
}

impl IntensityLut {
    fn from_mapped(mapped: Vec<f64>) -> Self {
        debug_assert_eq!(mapped.len(), INTENSITY_LEVELS);
        Self { mapped }
    }

    /// Continuous mapped intensity for an input level.
    pub fn mapped(&self, level: u8) -> f64 {
        self.mapped[level as usize]
    }

    /// Quantized output level for an input level.
    pub fn apply(&self, level: u8) -> u8 {
        let v = (self.mapped[level as usize] * 255.0).round_ties_even();
        v.clamp(0.0, 255.0) as u8
    }

    /// The full map is non-decreasing.
    pub fn is_monotone(&self) -> bool {
        self.mapped.windows(2).all(|w| w[0] <= w[1])
    }

    /// `level,mapped_level` rows for all 256 levels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,mapped_level\n");
        for level in 0..INTENSITY_LEVELS {
            out.push_str(&format!("{},{}\n", level, self.apply(level as u8)));
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
}

/// Build the 256-level intensity map sending `source` onto `target`.
pub fn build_intensity_lut(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<(IntensityLut, bool)> {
    let src = source.support_1d()?;
    let tgt = target.support_1d()?;
    let cost = CostMatrix::from_supports_1d(src, tgt, PROJECTION_EXPONENT)?;
    let res = sinkhorn(source, target, &cost, cfg)?;
    if !res.converged {
        return Err(Error::SinkhornNotConverged {
            violation: res.plan.marginal_violation(),
            iterations: res.iterations,
        });
    }
    // Row marginals of the plan are the floored source weights; use them so
    // the division is by the masses the plan actually couples.
    let mapped_atoms = barycentric_map(&res.plan, res.plan.row_marginal(), tgt)?;

    // Knots sorted by source position; equal positions share one knot (their
    // barycentric images coincide). Tiny float inversions are flattened so
    // the interpolated map is non-decreasing by construction.
    let mut idx: Vec<usize> = (0..src.len()).collect();
    idx.sort_by(|&i, &j| src[i].total_cmp(&src[j]));
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(src.len());
    let mut running_max = f64::NEG_INFINITY;
    for &i in &idx {
        let t = mapped_atoms[i].max(running_max);
        running_max = t;
        match knots.last_mut() {
            Some(last) if last.0 == src[i] => last.1 = t,
            _ => knots.push((src[i], t)),
        }
    }

    let first = knots[0];
    let last = *knots.last().unwrap();
    let mut mapped = Vec::with_capacity(INTENSITY_LEVELS);
    let mut k = 0usize;
    for level in 0..INTENSITY_LEVELS {
        let x = level as f64 / 255.0;
        let y = if x < first.0 {
            // Identity below the support, capped so the map stays monotone
            // when the first knot maps downward.
            x.min(first.1)
        } else if x > last.0 {
            x.max(last.1)
        } else {
            while k + 1 < knots.len() && knots[k + 1].0 < x {
                k += 1;
            }
            if knots[k].0 == x || k + 1 == knots.len() {
                knots[k].1
            } else {
                let (x0, y0) = knots[k];
                let (x1, y1) = knots[k + 1];
                if x1 == x0 {
                    y0
                } else {
                    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                }
            }
        };
        mapped.push(y);
    }
    Ok((IntensityLut::from_mapped(mapped), res.converged))
}

/// A projected image with the per-channel maps that produced it.
#[derive(Debug, Clone)]
pub struct ProjectedImage {
    pub image: RgbImage,
    pub luts: [IntensityLut; CHANNELS],
}

/// Project an image onto the target triplet channel by channel.
///
/// The image's own measure (per `mode`) is the transport source; output
/// dimensions equal input dimensions and solver failures carry the channel
/// name.
pub fn project_image(
    img: &RgbImage,
    target: &ChannelTriplet,
    mode: &MeasureMode,
    cfg: &SinkhornConfig,
) -> Result<ProjectedImage> {
    let sources = image_to_channel_measures(img, mode)?;
    let mut luts = Vec::with_capacity(CHANNELS);
    for c in 0..CHANNELS {
        let (lut, _) = build_intensity_lut(sources.channel(c), target.channel(c), cfg)
            .context(format!("{} channel", CHANNEL_NAMES[c]))?;
        luts.push(lut);
    }
    let planes: Vec<Vec<u8>> = (0..CHANNELS)
        .map(|c| img.plane(c).iter().map(|&l| luts[c].apply(l)).collect())
        .collect();
    let image = RgbImage::new(
        img.width(),
        img.height(),
        planes.try_into().expect("three planes"),
    )?;
    let luts: [IntensityLut; CHANNELS] = luts.try_into().expect("three luts");
    Ok(ProjectedImage { image, luts })
}
