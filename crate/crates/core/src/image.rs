//! RGB images and their per-channel discrete measures.

use std::path::Path;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::measure::{intensity_grid, level_grid, DiscreteMeasure, INTENSITY_LEVELS};
use crate::seed;

pub const CHANNELS: usize = 3;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["red", "green", "blue"];

/// An 8-bit RGB image stored as three planes; levels live on the normalized
/// grid `{0/255, ..., 255/255}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    planes: [Vec<u8>; CHANNELS],
}

impl RgbImage {
    pub fn new(width: usize, height: usize, planes: [Vec<u8>; CHANNELS]) -> Result<Self> {
        let expected = width * height;
        if expected == 0 {
            return Err(Error::validation("image must have at least one pixel"));
        }
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != expected {
                return Err(Error::validation(format!(
                    "{} plane has {} entries, expected {expected}",
                    CHANNEL_NAMES[c],
                    plane.len()
                )));
            }
        }
        Ok(Self {
            width,
            height,
            planes,
        })
    }

    pub fn constant(width: usize, height: usize, rgb: [u8; CHANNELS]) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            planes: [vec![rgb[0]; n], vec![rgb[1]; n], vec![rgb[2]; n]],
        }
    }

    /// Build from interleaved `RGBRGB...` bytes.
    pub fn from_interleaved(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        let n = width * height;
        if data.len() != n * CHANNELS {
            return Err(Error::validation(format!(
                "interleaved buffer has {} bytes, expected {}",
                data.len(),
                n * CHANNELS
            )));
        }
        let mut planes = [vec![0u8; n], vec![0u8; n], vec![0u8; n]];
        for i in 0..n {
            for c in 0..CHANNELS {
                planes[c][i] = data[i * CHANNELS + c];
            }
        }
        Self::new(width, height, planes)
    }

    pub fn to_interleaved(&self) -> Vec<u8> {
        let n = self.pixel_count();
        let mut out = vec![0u8; n * CHANNELS];
        for i in 0..n {
            for c in 0..CHANNELS {
                out[i * CHANNELS + c] = self.planes[c][i];
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        &self.planes[channel]
    }

    pub fn planes(&self) -> &[Vec<u8>; CHANNELS] {
        &self.planes
    }
}

/// An RGB triplet of channel measures on one shared support grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTriplet {
    pub red: DiscreteMeasure,
    pub green: DiscreteMeasure,
    pub blue: DiscreteMeasure,
}

impl ChannelTriplet {
    /// The channels must live on one shared grid: either their supports are
    /// identical (histogram/barycenter triplets) or every support point lies
    /// on the canonical 256-level lattice (sampled triplets).
    pub fn new(red: DiscreteMeasure, green: DiscreteMeasure, blue: DiscreteMeasure) -> Result<Self> {
        let grid = red.support_1d()?;
        let identical = green.is_on_grid(grid) && blue.is_on_grid(grid);
        let on_lattice = [&red, &green, &blue]
            .iter()
            .all(|m| on_intensity_lattice(m));
        if !identical && !on_lattice {
            return Err(Error::validation(
                "triplet channels must share one support grid",
            ));
        }
        Ok(Self { red, green, blue })
    }

    pub fn channel(&self, c: usize) -> &DiscreteMeasure {
        match c {
            0 => &self.red,
            1 => &self.green,
            2 => &self.blue,
            _ => panic!("channel index out of range"),
        }
    }

    pub fn channels(&self) -> [&DiscreteMeasure; CHANNELS] {
        [&self.red, &self.green, &self.blue]
    }

    /// Write as `red.txt`, `green.txt`, `blue.txt` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for (name, m) in CHANNEL_NAMES.iter().zip(self.channels()) {
            m.write_to(&dir.join(format!("{name}.txt")))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| DiscreteMeasure::read_from(&dir.join(format!("{name}.txt")));
        Self::new(read("red")?, read("green")?, read("blue")?)
    }
}

/// How an image becomes a channel measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureMode {
    /// Normalized intensity histogram on a `bins`-level grid.
    Histogram { bins: usize },
    /// Uniform pixel sample without replacement, snapped to the intensity
    /// grid; `count` clamps to the pixel count.
    Subsample { count: usize, seed: u64 },
}

impl MeasureMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            MeasureMode::Histogram { bins } if *bins < 2 => {
                Err(Error::validation("histogram needs at least 2 bins"))
            }
            MeasureMode::Subsample { count, .. } if *count == 0 => {
                Err(Error::validation("subsample count must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// The support grid measures of this mode live on.
    pub fn grid(&self) -> Vec<f64> {
        match self {
            MeasureMode::Histogram { bins } => level_grid(*bins),
            MeasureMode::Subsample { .. } => intensity_grid().to_vec(),
        }
    }
}

/// A seed-free measure-mode descriptor for configuration; orchestration
/// derives per-image seeds and instantiates [`MeasureMode`] from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureSpec {
    Histogram { bins: usize },
    Subsample { count: usize },
}

impl Default for MeasureSpec {
    fn default() -> Self {
        // 250-pixel subsets keep barycenter and projection inputs small.
        MeasureSpec::Subsample { count: 250 }
    }
}

impl MeasureSpec {
    pub fn with_seed(&self, seed: u64) -> MeasureMode {
        match *self {
            MeasureSpec::Histogram { bins } => MeasureMode::Histogram { bins },
            MeasureSpec::Subsample { count } => MeasureMode::Subsample { count, seed },
        }
    }

    /// Mode for image `image_idx` of agent `agent_id` under the global seed.
    pub fn for_image(&self, global_seed: u64, agent_id: u64, image_idx: u64) -> MeasureMode {
        self.with_seed(seed::derive(
            global_seed,
            &[seed::stream::SUBSAMPLE, agent_id, image_idx],
        ))
    }

    pub fn grid(&self) -> Vec<f64> {
        self.with_seed(0).grid()
    }

    pub fn validate(&self) -> Result<()> {
        self.with_seed(0).validate()
    }
}

fn on_intensity_lattice(m: &DiscreteMeasure) -> bool {
    let grid = intensity_grid();
    m.support_1d().is_ok_and(|s| {
        s.iter().all(|x| {
            let idx = (x * 255.0).round();
            (0.0..=255.0).contains(&idx) && grid[idx as usize] == *x
        })
    })
}

fn histogram_measure(levels: impl Iterator<Item = u8>, bins: usize) -> Result<DiscreteMeasure> {
    let grid = level_grid(bins);
    let mut counts = vec![0.0f64; bins];
    let scale = (bins - 1) as f64 / 255.0;
    let mut total = 0usize;
    for level in levels {
        let idx = (level as f64 * scale).round() as usize;
        counts[idx] += 1.0;
        total += 1;
    }
    if total == 0 {
        return Err(Error::validation("histogram needs at least one pixel"));
    }
    DiscreteMeasure::from_counts(&grid, &counts)
}

fn subsample_measure(
    population: &[u8],
    count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<DiscreteMeasure> {
    let k = count.min(population.len());
    let mut values: Vec<u8> = sample(rng, population.len(), k)
        .into_iter()
        .map(|i| population[i])
        .collect();
    values.sort_unstable();
    let support: Vec<f64> = values.iter().map(|v| *v as f64 / 255.0).collect();
    DiscreteMeasure::uniform_on(support)
}

/// Per-channel measures of one image.
///
/// Histogram mode yields the normalized histogram on the full grid;
/// subsample mode yields a uniform-weight measure on the sampled pixel
/// values (channels drawn in R, G, B order from the seeded stream).
pub fn image_to_channel_measures(img: &RgbImage, mode: &MeasureMode) -> Result<ChannelTriplet> {
    mode.validate()?;
    match *mode {
        MeasureMode::Histogram { bins } => {
            let m = |c: usize| histogram_measure(img.plane(c).iter().copied(), bins);
            ChannelTriplet::new(m(0)?, m(1)?, m(2)?)
        }
        MeasureMode::Subsample { count, seed: s } => {
            let mut rng = seed::rng(s);
            let r = subsample_measure(img.plane(0), count, &mut rng)?;
            let g = subsample_measure(img.plane(1), count, &mut rng)?;
            let b = subsample_measure(img.plane(2), count, &mut rng)?;
            ChannelTriplet::new(r, g, b)
        }
    }
}

/// Per-channel measures of a pooled image collection: histogram counts are
/// pooled before normalizing; subsampling draws from the pooled pixel
/// population.
pub fn pooled_channel_measures(images: &[RgbImage], mode: &MeasureMode) -> Result<ChannelTriplet> {
    mode.validate()?;
    if images.is_empty() {
        return Err(Error::validation("pooled measure needs at least one image"));
    }
    match *mode {
        MeasureMode::Histogram { bins } => {
            let m = |c: usize| {
                histogram_measure(
                    images.iter().flat_map(move |img| img.plane(c).iter().copied()),
                    bins,
                )
            };
            ChannelTriplet::new(m(0)?, m(1)?, m(2)?)
        }
        MeasureMode::Subsample { count, seed: s } => {
            let mut rng = seed::rng(s);
            let mut channels = Vec::with_capacity(CHANNELS);
            for c in 0..CHANNELS {
                let pooled: Vec<u8> = images
                    .iter()
                    .flat_map(|img| img.plane(c).iter().copied())
                    .collect();
                channels.push(subsample_measure(&pooled, count, &mut rng)?);
            }
            let b = channels.pop().unwrap();
            let g = channels.pop().unwrap();
            let r = channels.pop().unwrap();
            ChannelTriplet::new(r, g, b)
        }
    }
}

/// Pooled 256-bin histogram triplet; the fixed representation used by
/// discrepancy metrics.
pub fn pooled_histograms(images: &[RgbImage]) -> Result<ChannelTriplet> {
    pooled_channel_measures(
        images,
        &MeasureMode::Histogram {
            bins: INTENSITY_LEVELS,
        },
    )
}
