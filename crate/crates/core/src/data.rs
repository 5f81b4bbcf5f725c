//! Dataset ingestion: IDX (MNIST, FashionMNIST) and CIFAR-10 binary readers,
//! stratified splits, rotation and class filtering.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const NUM_CLASSES: usize = 10;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD_LEN: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// An image with intensities in `[0, 1]`, stored row-major as `H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    pub label: u8,
    pub source_id: String,
}

impl LabeledImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        label: u8,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Consistency(format!(
                "expected {} pixel values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if !(channels == 1 || channels == 3) {
            return Err(Error::InvalidArgument(format!("unsupported channel count {channels}")));
        }
        if label as usize >= NUM_CLASSES {
            return Err(Error::Data(format!("label {label} out of range")));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Data(format!("pixel intensity {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, pixels, label, source_id: source_id.into() })
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.pixels[start..start + self.channels]
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashionmnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    /// Default SLIC `(n_segments, compactness)` for the dataset.
    pub fn default_superpixels(self) -> (usize, f64) {
        match self {
            DatasetKind::Mnist => (95, 0.25),
            DatasetKind::FashionMnist => (105, 0.3),
            DatasetKind::Cifar10 => (200, 10.0),
        }
    }

    /// Loads the official training and test partitions from `root/<name>/`.
    pub fn load(self, root: &Path) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
        let dir = root.join(self.name());
        match self {
            DatasetKind::Mnist | DatasetKind::FashionMnist => {
                let train = load_idx_named(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                    &format!("{}-train", self.name()),
                )?;
                let test = load_idx_named(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                    &format!("{}-test", self.name()),
                )?;
                Ok((train, test))
            }
            DatasetKind::Cifar10 => {
                let train_paths: Vec<PathBuf> =
                    (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
                let train = load_cifar10_named(&train_paths, "cifar10-train")?;
                let test = load_cifar10_named(&[dir.join("test_batch.bin")], "cifar10-test")?;
                Ok((train, test))
            }
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashionmnist" | "fashion-mnist" => Ok(DatasetKind::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::InvalidArgument(format!("unknown dataset '{other}'"))),
        }
    }
}

/// Reads an IDX image/label file pair. Source ids are prefixed with the image file stem.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledImage>> {
    let prefix = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());
    load_idx_named(images_path, labels_path, &prefix)
}

pub fn load_idx_named(
    images_path: &Path,
    labels_path: &Path,
    prefix: &str,
) -> Result<Vec<LabeledImage>> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    parse_idx(&image_bytes, &label_bytes, prefix)
}

/// Parses in-memory IDX image and label buffers.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8], prefix: &str) -> Result<Vec<LabeledImage>> {
    let mut images = Cursor::new(image_bytes);
    let magic = images.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = images.read_u32::<BigEndian>()? as usize;
    let rows = images.read_u32::<BigEndian>()? as usize;
    let cols = images.read_u32::<BigEndian>()? as usize;

    let mut labels = Cursor::new(label_bytes);
    let magic = labels.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let label_count = labels.read_u32::<BigEndian>()? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{count} images but {label_count} labels"
        )));
    }

    let mut raw_labels = vec![0u8; count];
    labels.read_exact(&mut raw_labels)?;
    let mut raw = vec![0u8; rows * cols];
    let mut out = Vec::with_capacity(count);
    for (i, &label) in raw_labels.iter().enumerate() {
        images.read_exact(&mut raw)?;
        if label as usize >= NUM_CLASSES {
            return Err(Error::Data(format!("label {label} at index {i} out of range")));
        }
        out.push(LabeledImage {
            height: rows,
            width: cols,
            channels: 1,
            pixels: raw.iter().map(|&b| f64::from(b) / 255.0).collect(),
            label,
            source_id: format!("{prefix}:{i}"),
        });
    }
    Ok(out)
}

pub fn load_cifar10(batch_paths: &[PathBuf]) -> Result<Vec<LabeledImage>> {
    load_cifar10_named(batch_paths, "cifar10")
}

pub fn load_cifar10_named(batch_paths: &[PathBuf], prefix: &str) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::new();
    for path in batch_paths {
        let bytes = fs::read(path)?;
        let offset = out.len();
        out.extend(parse_cifar10(&bytes, prefix, offset)?);
    }
    Ok(out)
}

/// Parses a CIFAR-10 binary batch; `index_offset` numbers source ids across batches.
pub fn parse_cifar10(bytes: &[u8], prefix: &str, index_offset: usize) -> Result<Vec<LabeledImage>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Format(format!(
            "CIFAR-10 batch length {} is not a multiple of {CIFAR_RECORD_LEN}",
            bytes.len()
        )));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(i, record)| {
            let label = record[0];
            if label as usize >= NUM_CLASSES {
                return Err(Error::Data(format!("CIFAR-10 label byte {label} at record {i}")));
            }
            let planes = &record[1..];
            let mut pixels = Vec::with_capacity(3 * plane);
            for p in 0..plane {
                for c in 0..3 {
                    pixels.push(f64::from(planes[c * plane + p]) / 255.0);
                }
            }
            Ok(LabeledImage {
                height: CIFAR_SIDE,
                width: CIFAR_SIDE,
                channels: 3,
                pixels,
                label,
                source_id: format!("{prefix}:{}", index_offset + i),
            })
        })
        .collect()
}

/// Train / validation / test partition of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub seed: u64,
}

/// Serializable membership of a split, by source id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMembership {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn membership(&self) -> SplitMembership {
        let ids = |v: &[LabeledImage]| v.iter().map(|i| i.source_id.clone()).collect();
        SplitMembership {
            seed: self.seed,
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }

    /// Rebuilds a split from a membership list and a pool containing every referenced image.
    pub fn from_membership(pool: &[LabeledImage], membership: &SplitMembership) -> Result<Self> {
        let by_id: std::collections::HashMap<&str, &LabeledImage> =
            pool.iter().map(|img| (img.source_id.as_str(), img)).collect();
        let pick = |ids: &[String]| -> Result<Vec<LabeledImage>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|img| (*img).clone())
                        .ok_or_else(|| Error::Consistency(format!("source id '{id}' not in pool")))
                })
                .collect()
        };
        Ok(Self {
            train: pick(&membership.train)?,
            val: pick(&membership.val)?,
            test: pick(&membership.test)?,
            seed: membership.seed,
        })
    }
}

fn indices_by_class(images: &[LabeledImage]) -> BTreeMap<u8, Vec<usize>> {
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, img) in images.iter().enumerate() {
        by_class.entry(img.label).or_default().push(i);
    }
    by_class
}

/// Moves `round(fraction * count(c))` images of each class to validation, chosen by a
/// seeded shuffle. Both outputs keep the input order. `test` is left empty.
pub fn split_train_val(images: &[LabeledImage], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1)")));
    }
    let by_class = indices_by_class(images);
    for class in 0..NUM_CLASSES as u8 {
        if !by_class.contains_key(&class) {
            return Err(Error::Data(format!("class {class} has no images")));
        }
    }
    let mut is_val = vec![false; images.len()];
    for (&class, indices) in &by_class {
        let n_val = (fraction * indices.len() as f64).round() as usize;
        let mut shuffled = indices.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("split-class-{class}")));
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..n_val] {
            is_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (img, &v) in images.iter().zip(&is_val) {
        if v {
            val.push(img.clone());
        } else {
            train.push(img.clone());
        }
    }
    Ok(DatasetSplit { train, val, test: Vec::new(), seed })
}

/// Draws a class-stratified subset of exactly `n` images (largest-remainder allocation),
/// keeping input order. Returns the input unchanged when `n >= images.len()`.
pub fn stratified_subset(images: &[LabeledImage], n: usize, seed: u64) -> Vec<LabeledImage> {
    if n >= images.len() {
        return images.to_vec();
    }
    let by_class = indices_by_class(images);
    let total = images.len() as f64;
    let mut quotas: Vec<(u8, usize, f64)> = by_class
        .iter()
        .map(|(&c, idx)| {
            let exact = n as f64 * idx.len() as f64 / total;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(n - assigned) {
        quotas[i].1 += 1;
    }
    let mut keep = vec![false; images.len()];
    for (class, quota, _) in quotas {
        let mut idx = by_class[&class].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("subset-class-{class}")));
        idx.shuffle(&mut rng);
        for &i in &idx[..quota] {
            keep[i] = true;
        }
    }
    images.iter().zip(keep).filter(|(_, k)| *k).map(|(img, _)| img.clone()).collect()
}

/// Stable-order filter removing every image whose label is in `excluded`.
pub fn exclude_classes(images: &[LabeledImage], excluded: &HashSet<u8>) -> Vec<LabeledImage> {
    images.iter().filter(|img| !excluded.contains(&img.label)).cloned().collect()
}

/// Rotates counter-clockwise about the image center. Right angles on square images are
/// exact pixel permutations; other angles use bilinear sampling with zero padding.
pub fn rotate_image(img: &LabeledImage, angle_deg: f64) -> LabeledImage {
    let angle = angle_deg.rem_euclid(360.0);
    let (h, w, ch) = (img.height, img.width, img.channels);
    let quarter_turns = if angle == 0.0 {
        Some(0)
    } else if angle == 180.0 {
        Some(2)
    } else if h == w && (angle == 90.0 || angle == 270.0) {
        Some(if angle == 90.0 { 1 } else { 3 })
    } else {
        None
    };

    let mut out = img.clone();
    match quarter_turns {
        Some(0) => {}
        Some(turns) => {
            for r in 0..h {
                for c in 0..w {
                    let (sr, sc) = match turns {
                        1 => (c, w - 1 - r),
                        2 => (h - 1 - r, w - 1 - c),
                        _ => (h - 1 - c, r),
                    };
                    let dst = (r * w + c) * ch;
                    out.pixels[dst..dst + ch].copy_from_slice(img.pixel(sr, sc));
                }
            }
        }
        None => {
            let (sin, cos) = angle.to_radians().sin_cos();
            let cy = (h as f64 - 1.0) / 2.0;
            let cx = (w as f64 - 1.0) / 2.0;
            for r in 0..h {
                for c in 0..w {
                    let y = r as f64 - cy;
                    let x = c as f64 - cx;
                    let sx = cos * x - sin * y + cx;
                    let sy = sin * x + cos * y + cy;
                    let dst = (r * w + c) * ch;
                    for k in 0..ch {
                        out.pixels[dst + k] = bilinear(img, sy, sx, k);
                    }
                }
            }
        }
    }
    out
}

fn bilinear(img: &LabeledImage, y: f64, x: f64, channel: usize) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let sample = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= img.height as f64 || c >= img.width as f64 {
            0.0
        } else {
            img.pixel(r as usize, c as usize)[channel]
        }
    };
    let v = sample(y0, x0) * (1.0 - fy) * (1.0 - fx)
        + sample(y0, x0 + 1.0) * (1.0 - fy) * fx
        + sample(y0 + 1.0, x0) * fy * (1.0 - fx)
        + sample(y0 + 1.0, x0 + 1.0) * fy * fx;
    v.clamp(0.0, 1.0)
}
