//! Dataset ingestion and egress.
//!
//! Two formats: `cifar10-binary` (fixed 3073-byte records: one label byte in
//! `0..=9`, then three 1024-byte channel planes of a row-major 32x32 image)
//! and `image-directory` (one subdirectory per label holding 8-bit RGB
//! images). Binary save/load round-trips bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{RgbImage, CHANNELS};

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_SIDE: usize = 32;
const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
pub const MAX_LABEL: u8 = 9;

/// A labeled image collection (an agent's shard, or a whole dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentDataset {
    pub images: Vec<RgbImage>,
    pub labels: Vec<u8>,
}

impl AgentDataset {
    pub fn new(images: Vec<RgbImage>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::validation(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l > MAX_LABEL) {
            return Err(Error::validation(format!("label {l} out of range 0..=9")));
        }
        Ok(Self { images, labels })
    }

    pub fn empty() -> Self {
        Self {
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Cifar10Binary,
    ImageDirectory,
}

impl DatasetFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cifar10-binary" => Ok(Self::Cifar10Binary),
            "image-directory" => Ok(Self::ImageDirectory),
            other => Err(Error::validation(format!(
                "unknown dataset format {other:?} (expected cifar10-binary or image-directory)"
            ))),
        }
    }
}

/// Load a dataset. For `cifar10-binary` the path may be one `.bin` file or a
/// directory of them (read in name order).
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<AgentDataset> {
    match format {
        DatasetFormat::Cifar10Binary => load_cifar(path),
        DatasetFormat::ImageDirectory => load_image_directory(path),
    }
}

/// Save a dataset. `cifar10-binary` writes a single record file at `path`;
/// `image-directory` writes PNGs under per-label subdirectories of `path`.
pub fn save_dataset(data: &AgentDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Cifar10Binary => save_cifar(data, path),
        DatasetFormat::ImageDirectory => save_image_directory(data, path),
    }
}

/// Seeded split into `(train, test)` where the test part holds
/// `round(len * test_fraction)` samples.
pub fn holdout_split(
    data: &AgentDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(AgentDataset, AgentDataset)> {
    use rand::seq::SliceRandom;

    let n = data.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::validation(format!(
            "holdout of {n_test} test samples from {n} is degenerate"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = crate::seed::rng(crate::seed::derive(
        seed,
        &[crate::seed::stream::PARTITION, u64::MAX],
    ));
    indices.shuffle(&mut rng);
    let (test_idx, train_idx) = indices.split_at(n_test);
    let pick = |idx: &[usize]| -> Result<AgentDataset> {
        AgentDataset::new(
            idx.iter().map(|&i| data.images[i].clone()).collect(),
            idx.iter().map(|&i| data.labels[i]).collect(),
        )
    };
    Ok((pick(train_idx)?, pick(test_idx)?))
}

fn load_cifar(path: &Path) -> Result<AgentDataset> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let files: Vec<PathBuf> = if meta.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?
            .into_iter()
            .map(|entry| entry.path())
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::validation(format!(
                "{}: no .bin files in directory",
                path.display()
            )));
        }
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            let offset = (bytes.len() / CIFAR_RECORD_BYTES) * CIFAR_RECORD_BYTES;
            return Err(Error::format(format!(
                "{}: truncated record at offset {offset}",
                file.display()
            )));
        }
        for (k, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            let label = record[0];
            if label > MAX_LABEL {
                return Err(Error::format(format!(
                    "{}: label {label} out of range at offset {}",
                    file.display(),
                    k * CIFAR_RECORD_BYTES
                )));
            }
            let planes: [Vec<u8>; CHANNELS] = [
                record[1..1 + CIFAR_PLANE].to_vec(),
                record[1 + CIFAR_PLANE..1 + 2 * CIFAR_PLANE].to_vec(),
                record[1 + 2 * CIFAR_PLANE..1 + 3 * CIFAR_PLANE].to_vec(),
            ];
            images.push(RgbImage::new(CIFAR_SIDE, CIFAR_SIDE, planes)?);
            labels.push(label);
        }
    }
    AgentDataset::new(images, labels)
}

fn save_cifar(data: &AgentDataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * CIFAR_RECORD_BYTES);
    for (img, label) in data.images.iter().zip(&data.labels) {
        if img.width() != CIFAR_SIDE || img.height() != CIFAR_SIDE {
            return Err(Error::validation(format!(
                "cifar10-binary requires 32x32 images, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        bytes.push(*label);
        for c in 0..CHANNELS {
            bytes.extend_from_slice(img.plane(c));
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_image_directory(path: &Path) -> Result<AgentDataset> {
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut label_dirs: Vec<(u8, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if !p.is_dir() {
            continue;
        }
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let label: u8 = name.parse().map_err(|_| {
            Error::validation(format!(
                "{}: subdirectory name {name:?} is not a label in 0..=9",
                path.display()
            ))
        })?;
        if label > MAX_LABEL {
            return Err(Error::validation(format!(
                "{}: label {label} out of range 0..=9",
                path.display()
            )));
        }
        label_dirs.push((label, p));
    }
    label_dirs.sort();
    if label_dirs.is_empty() {
        return Err(Error::validation(format!(
            "{}: no label subdirectories",
            path.display()
        )));
    }

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, dir) in label_dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&dir, e))?
            .into_iter()
            .map(|entry| entry.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let decoded = image::open(&file)
                .map_err(|e| Error::format(format!("{}: {e}", file.display())))?
                .to_rgb8();
            let (w, h) = (decoded.width() as usize, decoded.height() as usize);
            images.push(RgbImage::from_interleaved(w, h, decoded.as_raw())?);
            labels.push(label);
        }
    }
    if images.is_empty() {
        return Err(Error::validation(format!(
            "{}: label subdirectories contain no images",
            path.display()
        )));
    }
    AgentDataset::new(images, labels)
}

fn save_image_directory(data: &AgentDataset, path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let mut counters = [0usize; (MAX_LABEL as usize) + 1];
    for (img, label) in data.images.iter().zip(&data.labels) {
        let dir = path.join(label.to_string());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let idx = counters[*label as usize];
        counters[*label as usize] += 1;
        let file = dir.join(format!("img_{idx:05}.png"));
        let buffer = image::RgbImage::from_raw(
            img.width() as u32,
            img.height() as u32,
            img.to_interleaved(),
        )
        .expect("interleaved buffer matches dimensions");
        buffer
            .save(&file)
            .map_err(|e| Error::format(format!("{}: {e}", file.display())))?;
    }
    Ok(())
}
