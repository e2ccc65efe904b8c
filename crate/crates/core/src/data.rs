//! IDX ingestion (MNIST / Fashion-MNIST) and dataset preparation.
//!
//! IDX files are big-endian: a 4-byte magic `0x0000_08_DD` where `08` marks an
//! unsigned-byte payload and `DD` is the number of dimensions, then one `u32`
//! per dimension, then the payload in row-major order. Gzip-compressed files
//! are detected by their header and decompressed transparently.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of MNIST training rows kept when the raw file carries 60,000.
pub const MNIST_TRAIN_ROWS: usize = 55_000;

/// Raw IDX contents: dimension sizes and the unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    /// Number of items along the leading dimension.
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes per item (product of the trailing dimensions).
    pub fn item_size(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
        .read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut inflated = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut inflated)
            .map_err(|e| Error::Idx(format!("{}: bad gzip stream: {e}", path.display())))?;
        raw = inflated;
    }
    parse_idx(&raw)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Idx(format!("truncated header ({} bytes)", bytes.len())));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != IDX_IMAGES_MAGIC && magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!("bad magic 0x{magic:08x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Idx(format!(
            "truncated header: need {header} bytes, have {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx(format!("dimension overflow {dims:?}")))?;
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(Error::Idx(format!(
            "truncated payload: dims {dims:?} need {count} bytes, have {}",
            payload.len()
        )));
    }
    Ok(IdxTensor {
        dims,
        data: payload[..count].to_vec(),
    })
}

/// Serializes a tensor as uncompressed IDX (1-D uses the label magic, 3-D the
/// image magic).
pub fn write_idx(mut out: impl Write, tensor: &IdxTensor) -> Result<()> {
    let magic = match tensor.dims.len() {
        1 => IDX_LABELS_MAGIC,
        3 => IDX_IMAGES_MAGIC,
        n => return Err(Error::Idx(format!("unsupported rank {n}"))),
    };
    out.write_all(&magic.to_be_bytes())?;
    for &d in &tensor.dims {
        let d = u32::try_from(d).map_err(|_| Error::Idx(format!("dimension {d} exceeds u32")))?;
        out.write_all(&d.to_be_bytes())?;
    }
    out.write_all(&tensor.data)?;
    Ok(())
}

/// Inputs as columns plus one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    /// `n_0 × N`, entries in `[0, 1]`.
    pub x: Array2<S>,
    /// `K × N` one-hot.
    pub y: Array2<S>,
    pub labels: Vec<usize>,
    pub name: String,
}

impl<S: Scalar> Dataset<S> {
    pub fn from_parts(x: Array2<S>, labels: &[usize], num_classes: usize, name: &str) -> Result<Self> {
        if x.ncols() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} samples vs {} labels",
                x.ncols(),
                labels.len()
            )));
        }
        let y = one_hot(labels, num_classes)?;
        Ok(Dataset {
            x,
            y,
            labels: labels.to_vec(),
            name: name.to_string(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_features(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.y.nrows()
    }

    /// Columns `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let x = self.x.select(ndarray::Axis(1), indices);
        let y = self.y.select(ndarray::Axis(1), indices);
        Dataset {
            x,
            y,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            name: self.name.clone(),
        }
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.num_samples())).collect();
        self.select(&idx)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

pub fn one_hot<S: Scalar>(labels: &[usize], num_classes: usize) -> Result<Array2<S>> {
    let mut y = Array2::zeros((num_classes, labels.len()));
    for (j, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::Dataset(format!(
                "label {l} at sample {j} is outside 0..{num_classes}"
            )));
        }
        y[[l, j]] = S::one();
    }
    Ok(y)
}

/// Scales pixels by 1/255, one-hot encodes labels and optionally keeps a
/// seeded random subset of `subsample_n` samples.
pub fn prepare<S: Scalar>(
    images: &IdxTensor,
    labels: &IdxTensor,
    num_classes: usize,
    subsample_n: Option<usize>,
    seed: u64,
) -> Result<Dataset<S>> {
    if labels.dims.len() != 1 {
        return Err(Error::Dataset(format!("label tensor has rank {}", labels.dims.len())));
    }
    if images.dims.len() < 2 {
        return Err(Error::Dataset(format!("image tensor has rank {}", images.dims.len())));
    }
    if images.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    let total = images.len();
    let indices: Vec<usize> = match subsample_n {
        Some(n) => {
            if n > total {
                return Err(Error::Dataset(format!("requested {n} samples from {total}")));
            }
            let mut all: Vec<usize> = (0..total).collect();
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            all.truncate(n);
            all
        }
        None => (0..total).collect(),
    };
    let features = images.item_size();
    let scale = S::of(1.0 / 255.0);
    let mut x = Array2::zeros((features, indices.len()));
    for (j, &i) in indices.iter().enumerate() {
        let row = &images.data[i * features..(i + 1) * features];
        for (k, &px) in row.iter().enumerate() {
            x[[k, j]] = S::of(px as f64) * scale;
        }
    }
    let picked: Vec<usize> = indices.iter().map(|&i| labels.data[i] as usize).collect();
    Dataset::from_parts(x, &picked, num_classes, "idx")
}

/// Loads an image/label IDX pair. For MNIST training files with 60,000 rows
/// only the first 55,000 are kept.
pub fn load_pair<S: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    num_classes: usize,
    subsample_n: Option<usize>,
    seed: u64,
    mnist_train_split: bool,
) -> Result<Dataset<S>> {
    let mut images = load_idx(images_path)?;
    let mut labels = load_idx(labels_path)?;
    if mnist_train_split && images.len() == 60_000 && labels.len() == 60_000 {
        keep_leading(&mut images, MNIST_TRAIN_ROWS);
        keep_leading(&mut labels, MNIST_TRAIN_ROWS);
    }
    prepare(&images, &labels, num_classes, subsample_n, seed)
}

fn keep_leading(t: &mut IdxTensor, rows: usize) {
    let item = t.item_size();
    t.data.truncate(rows * item);
    t.dims[0] = rows;
}

/// Seeded Gaussian class blobs clipped to `[0, 1]`, for smoke tests and
/// benchmarks that must not depend on downloaded files.
pub fn synthetic_blobs<S: Scalar>(features: usize, classes: usize, samples: usize, seed: u64) -> Result<Dataset<S>> {
    if classes == 0 || features == 0 {
        return Err(Error::Dataset("synthetic data needs features and classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..features).map(|_| rng.random::<f64>()).collect())
        .collect();
    let labels: Vec<usize> = (0..samples).map(|j| j % classes).collect();
    let mut x = Array2::zeros((features, samples));
    for (j, &l) in labels.iter().enumerate() {
        for k in 0..features {
            let noise: f64 = rng.random::<f64>() - 0.5;
            x[[k, j]] = S::of((centers[l][k] + 0.3 * noise).clamp(0.0, 1.0));
        }
    }
    Dataset::from_parts(x, &labels, classes, "synthetic")
}
