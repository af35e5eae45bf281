//! IDX reader for the MNIST digit files.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images kept as raw bytes; accessors scale them into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_bytes(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[index * n..(index + 1) * n]
    }

    /// Single-channel image `[1][rows][cols]`.
    pub fn image(&self, index: usize) -> Array3<f64> {
        let data = self
            .image_bytes(index)
            .iter()
            .map(|&p| p as f64 / 255.0)
            .collect();
        Array3::from_shape_vec((1, self.rows, self.cols), data).expect("image size")
    }

    /// Batch `[indices.len()][1][rows][cols]`.
    pub fn batch(&self, indices: &[usize]) -> Array4<f64> {
        let n = self.rows * self.cols;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.image_bytes(i).iter().map(|&p| p as f64 / 255.0));
        }
        Array4::from_shape_vec((indices.len(), 1, self.rows, self.cols), data).expect("batch size")
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn class_counts(&self) -> [usize; 10] {
        let mut c = [0; 10];
        for &l in &self.labels {
            c[l as usize % 10] += 1;
        }
        c
    }

    pub fn from_bytes(images: &[u8], labels: &[u8]) -> Result<Self> {
        let (count, rows, cols, pixels) = parse_images(images)?;
        let labels = parse_labels(labels)?;
        if labels.len() != count {
            return Err(Error::Dataset(format!(
                "{count} images but {} labels",
                labels.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            pixels: pixels.to_vec(),
            labels: labels.to_vec(),
        })
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(images)?, &std::fs::read(labels)?)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: bytes.len(),
            reason: format!("header truncated, needed bytes {offset}..{}", offset + 4),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len(),
            reason: format!("data truncated, expected {len} bytes after header"),
        });
    }
    if bytes.len() > end {
        return Err(Error::Parse {
            offset: end,
            reason: format!("{} trailing bytes", bytes.len() - end),
        });
    }
    Ok(&bytes[start..end])
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let pixels = payload(bytes, 16, count * rows * cols)?;
    Ok((count, rows, cols, pixels))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let labels = payload(bytes, 8, count)?;
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Parse {
            offset: 8 + pos,
            reason: format!("label {} out of range 0..=9", labels[pos]),
        });
    }
    Ok(labels)
}

/// Training and test splits.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

fn locate(dir: &Path, stem: &str, kind: &str) -> PathBuf {
    let plain = dir.join(format!("{stem}-{kind}-ubyte"));
    if plain.exists() {
        return plain;
    }
    let dotted = dir.join(format!("{stem}.{kind}-ubyte"));
    if dotted.exists() {
        dotted
    } else {
        plain
    }
}

/// Loads `train-*` and `t10k-*` files from `dir`, accepting both the
/// `-idx3-ubyte` and `.idx3-ubyte` naming styles.
pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    let train = Dataset::load(
        &locate(dir, "train-images", "idx3"),
        &locate(dir, "train-labels", "idx1"),
    )?;
    let test = Dataset::load(
        &locate(dir, "t10k-images", "idx3"),
        &locate(dir, "t10k-labels", "idx1"),
    )?;
    Ok(Mnist { train, test })
}

/// `$IPCNN_MNIST_DIR`, falling back to `data/mnist` under the workspace root.
pub fn default_mnist_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("IPCNN_MNIST_DIR") {
        return PathBuf::from(dir);
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}
