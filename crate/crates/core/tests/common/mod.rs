//! Synthetic datasets in the on-disk formats, for tests that exercise the
//! loaders and the full experiment path.

#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use feedalign::data::{write_idx, IdxArray};
use feedalign::{SeededRng, StreamLabel};

/// 28x28 images whose class shows as a bright 7x7 tile on a 4x4 grid of
/// tiles (only the first ten tiles are used), plus byte noise.
pub fn digit_like(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = SeededRng::new(seed, StreamLabel::Shuffle);
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let c = (s * 7 + seed as usize) % 10;
        let (ty, tx) = (c / 4, c % 4);
        for y in 0..28 {
            for x in 0..28 {
                let on = y / 7 == ty && x / 7 == tx;
                let noise = rng.below(40) as u8;
                pixels.push(if on { 215 + noise } else { noise });
            }
        }
        labels.push(c as u8);
    }
    (pixels, labels)
}

fn write_pair(dir: &Path, stem: &str, n: usize, seed: u64, gz: bool) {
    let (pixels, labels) = digit_like(n, seed);
    let images = IdxArray {
        dims: vec![n, 28, 28],
        data: pixels,
    };
    let labels = IdxArray {
        dims: vec![n],
        data: labels,
    };
    for (suffix, array) in [("images-idx3-ubyte", images), ("labels-idx1-ubyte", labels)] {
        let mut bytes = Vec::new();
        write_idx(&mut bytes, &array).unwrap();
        let name = format!("{stem}-{suffix}");
        if gz {
            let f = std::fs::File::create(dir.join(format!("{name}.gz"))).unwrap();
            let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::fast());
            enc.write_all(&bytes).unwrap();
            enc.finish().unwrap();
        } else {
            std::fs::write(dir.join(name), bytes).unwrap();
        }
    }
}

/// Writes an MNIST-format directory; the test split is gzipped.
pub fn write_mnist(dir: &Path, train: usize, test: usize) {
    std::fs::create_dir_all(dir).unwrap();
    write_pair(dir, "train", train, 1, false);
    write_pair(dir, "t10k", test, 2, true);
}

/// Writes a CIFAR-10 binary directory with `per_batch` records per file.
pub fn write_cifar10(dir: &Path, per_batch: usize) {
    let base = dir.join("cifar-10-batches-bin");
    std::fs::create_dir_all(&base).unwrap();
    let mut rng = SeededRng::new(5, StreamLabel::Shuffle);
    let names: Vec<String> = (1..=5)
        .map(|i| format!("data_batch_{i}.bin"))
        .chain(["test_batch.bin".to_string()])
        .collect();
    for name in names {
        let mut bytes = Vec::new();
        for r in 0..per_batch {
            bytes.push((r % 10) as u8);
            bytes.extend((0..3072).map(|_| rng.below(256) as u8));
        }
        std::fs::write(base.join(name), bytes).unwrap();
    }
}
