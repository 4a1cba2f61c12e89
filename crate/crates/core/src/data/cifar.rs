//! CIFAR-10 and CIFAR-100 binary batches.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::idx::read_maybe_gz;
use super::RawImages;
use crate::error::{Error, Result};

pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    /// Label bytes preceding the pixels of each record.
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    /// Standard file names relative to the extracted archive directory.
    pub fn files(self, dir: &Path) -> (Vec<PathBuf>, Vec<PathBuf>) {
        match self {
            CifarVariant::Cifar10 => {
                let base = dir.join("cifar-10-batches-bin");
                let base = if base.is_dir() {
                    base
                } else {
                    dir.to_path_buf()
                };
                (
                    (1..=5)
                        .map(|i| base.join(format!("data_batch_{i}.bin")))
                        .collect(),
                    vec![base.join("test_batch.bin")],
                )
            }
            CifarVariant::Cifar100 => {
                let base = dir.join("cifar-100-binary");
                let base = if base.is_dir() {
                    base
                } else {
                    dir.to_path_buf()
                };
                (vec![base.join("train.bin")], vec![base.join("test.bin")])
            }
        }
    }
}

/// Parses one batch file's bytes. For CIFAR-100 the fine label (second
/// byte) is kept.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant) -> Result<RawImages> {
    let rec = variant.record_len();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(Error::format(
            "CIFAR batch",
            format!(
                "length {} is not a positive multiple of the {rec}-byte record",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / rec;
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for r in bytes.chunks_exact(rec) {
        let label = r[variant.label_bytes() - 1];
        if label as usize >= variant.classes() {
            return Err(Error::format(
                "CIFAR batch",
                format!("label {label} out of range"),
            ));
        }
        labels.push(label);
        pixels.extend_from_slice(&r[variant.label_bytes()..]);
    }
    Ok(RawImages {
        features: CIFAR_PIXELS,
        pixels,
        labels,
        classes: variant.classes(),
    })
}

/// Loads and concatenates several batch files.
pub fn load_cifar_binary(paths: &[PathBuf], variant: CifarVariant) -> Result<RawImages> {
    if paths.is_empty() {
        return Err(Error::invalid("no CIFAR batch files given"));
    }
    let mut all: Option<RawImages> = None;
    for p in paths {
        let part = parse_cifar(&read_maybe_gz(p)?, variant)
            .map_err(|e| Error::format("CIFAR batch", format!("{}: {e}", p.display())))?;
        match all.as_mut() {
            None => all = Some(part),
            Some(a) => {
                a.pixels.extend_from_slice(&part.pixels);
                a.labels.extend_from_slice(&part.labels);
            }
        }
    }
    Ok(all.expect("at least one file"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(variant: CifarVariant, n: usize) -> Vec<u8> {
        let mut out = Vec::new();
        for i in 0..n {
            if variant == CifarVariant::Cifar100 {
                out.push((i % 20) as u8);
            }
            out.push((i % variant.classes()) as u8);
            out.extend((0..CIFAR_PIXELS).map(|p| ((p + i) % 256) as u8));
        }
        out
    }

    #[test]
    fn cifar10_batch_of_10000() {
        let raw = parse_cifar(
            &records(CifarVariant::Cifar10, 10_000),
            CifarVariant::Cifar10,
        )
        .unwrap();
        assert_eq!(raw.len(), 10_000);
        assert_eq!(raw.features, 3072);
        assert_eq!(raw.labels[13], 3);
        assert_eq!(raw.pixels[3072 + 5], 6);
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let raw = parse_cifar(
            &records(CifarVariant::Cifar100, 250),
            CifarVariant::Cifar100,
        )
        .unwrap();
        assert!(raw.labels.iter().all(|&l| l < 100));
        assert_eq!(raw.labels[123], 23);
        assert_eq!(raw.classes, 100);
    }

    #[test]
    fn bad_lengths_rejected() {
        assert!(parse_cifar(&[], CifarVariant::Cifar10).is_err());
        let mut b = records(CifarVariant::Cifar10, 2);
        b.pop();
        assert!(parse_cifar(&b, CifarVariant::Cifar10).is_err());
    }

    #[test]
    fn files_concatenate() {
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<PathBuf> = (0..2)
            .map(|i| dir.path().join(format!("b{i}.bin")))
            .collect();
        for p in &paths {
            std::fs::write(p, records(CifarVariant::Cifar10, 3)).unwrap();
        }
        let raw = load_cifar_binary(&paths, CifarVariant::Cifar10).unwrap();
        assert_eq!(raw.len(), 6);
        assert_eq!(raw.labels, vec![0, 1, 2, 0, 1, 2]);
    }
}
