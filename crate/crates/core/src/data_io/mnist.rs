//! Reader for the IDX files MNIST is distributed in.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const N_CLASSES: usize = 10;

/// Grayscale images `[count, 1, 28, 28]` in `[0, 1]` with labels in `[0, 10)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        match images.shape() {
            [n, 1, _, _] if *n == labels.len() => {}
            s => {
                return Err(Error::Consistency(format!(
                    "{} labels for images of shape {s:?}",
                    labels.len()
                )))
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= N_CLASSES) {
            return Err(Error::Consistency(format!("label {bad} outside [0, {N_CLASSES})")));
        }
        if images.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Consistency("pixel values must lie in [0, 1]".into()));
        }
        Ok(LabeledDataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the given samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        (
            self.images.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        LabeledDataset { images, labels }
    }
}

struct Idx<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
}

impl<'a> Idx<'a> {
    fn open(path: &'a Path, magic: u32) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let idx = Idx { path, bytes };
        let found = idx.u32_at(0)?;
        if found != magic {
            return Err(Error::Format {
                path: path.to_path_buf(),
                expected: magic,
                found,
            });
        }
        Ok(idx)
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        self.bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Consistency(format!("{}: truncated header", self.path.display())))
    }

    fn payload(&self, offset: usize, len: usize) -> Result<&[u8]> {
        let body = &self.bytes[offset.min(self.bytes.len())..];
        if body.len() != len {
            return Err(Error::Consistency(format!(
                "{}: header declares {len} payload bytes, file holds {}",
                self.path.display(),
                body.len()
            )));
        }
        Ok(body)
    }
}

/// Loads an IDX image/label file pair, scaling pixels by `1/255`.
pub fn load_mnist<T: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset<T>> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = Idx::open(ip, IMAGES_MAGIC)?;
    let labels = Idx::open(lp, LABELS_MAGIC)?;

    let count = images.u32_at(4)? as usize;
    let rows = images.u32_at(8)? as usize;
    let cols = images.u32_at(12)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Consistency(format!(
            "{}: images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}",
            ip.display()
        )));
    }
    let n_labels = labels.u32_at(4)? as usize;
    if n_labels != count {
        return Err(Error::Consistency(format!(
            "{} holds {count} images but {} holds {n_labels} labels",
            ip.display(),
            lp.display()
        )));
    }

    let pixels = images.payload(16, count * rows * cols)?;
    let scale = T::lit(255.0);
    let data = pixels.iter().map(|&b| T::from_u8(b).unwrap() / scale).collect();
    let tensor = Tensor::from_vec(&[count, 1, rows, cols], data)?;
    let label_vec = labels.payload(8, count)?.iter().map(|&b| b as usize).collect();
    LabeledDataset::new(tensor, label_vec)
}

/// Canonical file names inside an MNIST directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        MnistFiles {
            train_images: d.join("train-images-idx3-ubyte"),
            train_labels: d.join("train-labels-idx1-ubyte"),
            test_images: d.join("t10k-images-idx3-ubyte"),
            test_labels: d.join("t10k-labels-idx1-ubyte"),
        }
    }
}
