//! MNIST (IDX) and CIFAR-10 (binary batches) loaders.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::IntTensor;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    /// `[channels, height, width]` of one image.
    image_shape: [usize; 3],
    pixels: Vec<u8>,
    labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        image_shape: [usize; 3],
        pixels: Vec<u8>,
        labels: Vec<u8>,
        split: Split,
    ) -> Result<Self> {
        let per = image_shape.iter().product::<usize>();
        if per == 0 {
            return Err(Error::Dataset("empty image shape".into()));
        }
        if pixels.len() != per * labels.len() {
            return Err(Error::Dataset(format!(
                "{} pixels for {} labels of {per} pixels each",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Dataset(format!("label {bad} outside 0..=9")));
        }
        Ok(Self {
            image_shape,
            pixels,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> IntTensor {
        IntTensor::from_u8(self.image_shape.to_vec(), self.pixels(i))
            .expect("dataset shape is consistent")
    }

    /// `[N, C, H, W]` batch of every image.
    pub fn images(&self) -> IntTensor {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(&self.image_shape);
        IntTensor::from_u8(shape, &self.pixels).expect("dataset shape is consistent")
    }

    pub fn subset(&self, indices: &[usize], split: Split) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.pixels(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            image_shape: self.image_shape,
            pixels,
            labels,
            split,
        }
    }

    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.split)
    }
}

fn be_u32(buf: &[u8], at: usize) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Truncated {
            offset: buf.len() as u64,
        })
}

pub fn parse_idx_images(buf: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::WrongMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(buf, 4)? as usize;
    let rows = be_u32(buf, 8)? as usize;
    let cols = be_u32(buf, 12)? as usize;
    let need = n * rows * cols;
    let body = &buf[16..];
    if body.len() < need {
        return Err(Error::Truncated {
            offset: buf.len() as u64,
        });
    }
    if body.len() > need {
        return Err(Error::Dataset(format!(
            "{} trailing bytes after image data",
            body.len() - need
        )));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_idx_labels(buf: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(buf, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::WrongMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(buf, 4)? as usize;
    let body = &buf[8..];
    if body.len() < n {
        return Err(Error::Truncated {
            offset: buf.len() as u64,
        });
    }
    if body.len() > n {
        return Err(Error::Dataset(format!(
            "{} trailing bytes after labels",
            body.len() - n
        )));
    }
    Ok(body)
}

pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let ibuf = fs::read(images_path)?;
    let lbuf = fs::read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&ibuf)?;
    let labels = parse_idx_labels(&lbuf)?;
    if labels.len() != n {
        return Err(Error::Dataset(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    Dataset::new(
        [1, rows, cols],
        pixels.to_vec(),
        labels.to_vec(),
        Split::Train,
    )
}

pub fn encode_idx_images(d: &Dataset) -> Vec<u8> {
    let [_, rows, cols] = d.image_shape;
    let mut out = Vec::with_capacity(16 + d.pixels.len());
    for v in [IDX_IMAGES_MAGIC, d.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&d.pixels);
    out
}

pub fn encode_idx_labels(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + d.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(d.len() as u32).to_be_bytes());
    out.extend_from_slice(&d.labels);
    out
}

pub fn write_mnist_idx(
    d: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(images_path, encode_idx_images(d))?;
    fs::write(labels_path, encode_idx_labels(d))?;
    Ok(())
}

fn first_existing(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Dataset(format!("none of {names:?} found in {}", dir.display())))
}

/// Standard `train-*` / `t10k-*` files from `dir`, as (train, test).
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Dataset(format!(
            "MNIST directory {} does not exist",
            dir.display()
        )));
    }
    let train = load_mnist_idx(
        first_existing(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
        first_existing(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
    )?;
    let mut test = load_mnist_idx(
        first_existing(dir, &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?,
        first_existing(dir, &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?,
    )?;
    test.split = Split::Test;
    Ok((train, test))
}

pub fn parse_cifar10(buf: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if !buf.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Dataset(format!(
            "CIFAR-10 batch of {} bytes is not a multiple of {CIFAR_RECORD}",
            buf.len()
        )));
    }
    let n = buf.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (i, rec) in buf.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(Error::Dataset(format!(
                "record {i} has label {} outside 0..=9",
                rec[0]
            )));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

/// Concatenates CIFAR-10 binary batches in the given order.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let (px, lb) = parse_cifar10(&fs::read(p)?)?;
        pixels.extend(px);
        labels.extend(lb);
    }
    Dataset::new([3, 32, 32], pixels, labels, Split::Train)
}

/// `data_batch_{1..5}.bin` and `test_batch.bin`, directly in `dir` or in its
/// `cifar-10-batches-bin` subdirectory.
pub fn load_cifar_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let mut dir = dir.as_ref().to_path_buf();
    if !dir.is_dir() {
        return Err(Error::Dataset(format!(
            "CIFAR-10 directory {} does not exist",
            dir.display()
        )));
    }
    if dir.join("cifar-10-batches-bin").is_dir() {
        dir = dir.join("cifar-10-batches-bin");
    }
    let train: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect();
    let train = load_cifar10_bin(&train)?;
    let mut test = load_cifar10_bin(&[dir.join("test_batch.bin")])?;
    test.split = Split::Test;
    Ok((train, test))
}

/// Seeded shuffle, then the first `round(N * val_fraction)` indices go to validation.
pub fn split_train_val(d: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} must lie in (0, 1)"
        )));
    }
    let n_val = (d.len() as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val >= d.len() {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} leaves an empty split of {}",
            d.len()
        )));
    }
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = idx.split_at(n_val);
    Ok((d.subset(train, Split::Train), d.subset(val, Split::Val)))
}
