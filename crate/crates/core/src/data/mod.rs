//! MNIST and CIFAR ingestion, unit scaling, one-hot targets, whitening and
//! train/validation splits.

mod cifar;
mod idx;
mod whiten;

use std::path::{Path, PathBuf};

pub use cifar::{load_cifar_binary, parse_cifar, CifarVariant, CIFAR_PIXELS};
pub use idx::{load_mnist_idx, parse_idx, write_idx, IdxArray, IMAGES_MAGIC, LABELS_MAGIC};
pub use whiten::{whiten_apply, whiten_fit, Zca, ZCA_EPSILON};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

/// Byte images, one record of `features` bytes per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub features: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub classes: usize,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `value / 255`, laid out features x samples.
pub fn scale_unit<T: Real>(pixels: &[u8], features: usize) -> Result<Matrix<T>> {
    if features == 0 || !pixels.len().is_multiple_of(features) {
        return Err(Error::invalid(format!(
            "{} bytes do not split into records of {features}",
            pixels.len()
        )));
    }
    let n = pixels.len() / features;
    let lut: Vec<T> = (0..=255u32)
        .map(|v| T::from_f64(v as f64 / 255.0))
        .collect();
    let mut m = Matrix::zeros(features, n);
    let out = m.as_mut_slice();
    for (s, rec) in pixels.chunks_exact(features).enumerate() {
        for (f, &b) in rec.iter().enumerate() {
            out[f * n + s] = lut[b as usize];
        }
    }
    Ok(m)
}

/// One column per label with a single 1 in row `label`.
pub fn one_hot<T: Real>(labels: &[u8], classes: usize) -> Result<Matrix<T>> {
    let mut m = Matrix::zeros(classes, labels.len());
    for (c, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(Error::invalid(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        m.set(l as usize, c, T::ONE);
    }
    Ok(m)
}

/// Inputs (features x samples), one-hot targets and the integer labels.
#[derive(Debug, Clone)]
pub struct Dataset<T: Real = f64> {
    pub inputs: Matrix<T>,
    pub targets: Matrix<T>,
    pub labels: Vec<u8>,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: Matrix<T>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if inputs.cols() != labels.len() {
            return Err(Error::invalid(format!(
                "{} input columns for {} labels",
                inputs.cols(),
                labels.len()
            )));
        }
        let targets = one_hot(&labels, classes)?;
        Ok(Self {
            inputs,
            targets,
            labels,
        })
    }

    /// Unit-scaled dataset from byte images.
    pub fn from_raw(raw: &RawImages) -> Result<Self> {
        Self::new(
            scale_unit(&raw.pixels, raw.features)?,
            raw.labels.clone(),
            raw.classes,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.rows()
    }

    pub fn classes(&self) -> usize {
        self.targets.rows()
    }

    /// Samples `start..end` in order.
    pub fn range(&self, start: usize, end: usize) -> Self {
        Self {
            inputs: self.inputs.column_range(start, end),
            targets: self.targets.column_range(start, end),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// The first `n` samples (all of them if fewer).
    pub fn take_first(&self, n: usize) -> Self {
        self.range(0, n.min(self.len()))
    }

    /// Splits off the last `n` samples as a validation set.
    pub fn split_tail(&self, n: usize) -> Result<(Self, Self)> {
        if n >= self.len() {
            return Err(Error::invalid(format!(
                "validation size {n} leaves no training data out of {}",
                self.len()
            )));
        }
        let cut = self.len() - n;
        Ok((self.range(0, cut), self.range(cut, self.len())))
    }

    /// Inputs and targets of the given samples.
    pub fn batch(&self, idx: &[usize]) -> (Matrix<T>, Matrix<T>) {
        (
            self.inputs.select_columns(idx),
            self.targets.select_columns(idx),
        )
    }

    pub fn map_inputs(self, inputs: Matrix<T>) -> Result<Self> {
        if inputs.cols() != self.len() {
            return Err(Error::shape(
                "map_inputs",
                self.inputs.shape(),
                inputs.shape(),
            ));
        }
        Ok(Self { inputs, ..self })
    }
}

fn first_existing(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    for n in names {
        for candidate in [dir.join(n), dir.join(format!("{n}.gz"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!(
            "none of {names:?} (optionally .gz) found in {}",
            dir.display()
        ),
    )))
}

/// Loads the MNIST training and test sets from a directory holding the
/// four standard IDX files.
pub fn load_mnist_dir(dir: &Path) -> Result<(RawImages, RawImages)> {
    let f = |names: &[&str]| first_existing(dir, names);
    let train = load_mnist_idx(
        &f(&["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
        &f(&["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
    )?;
    let test = load_mnist_idx(
        &f(&["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?,
        &f(&["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?,
    )?;
    Ok((train, test))
}

/// Loads the CIFAR training and test sets from the extracted binary archive.
pub fn load_cifar_dir(dir: &Path, variant: CifarVariant) -> Result<(RawImages, RawImages)> {
    let (train, test) = variant.files(dir);
    Ok((
        load_cifar_binary(&train, variant)?,
        load_cifar_binary(&test, variant)?,
    ))
}
