//! Dataset loaders on synthetic files and, when present, on real MNIST.

mod common;

use std::path::PathBuf;

use feedalign::data::{
    load_cifar_dir, load_mnist_dir, parse_idx, write_idx, CifarVariant, Dataset, IdxArray,
    IMAGES_MAGIC,
};
use proptest::prelude::*;

#[test]
fn mnist_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    common::write_mnist(dir.path(), 30, 20);
    let (train, test) = load_mnist_dir(dir.path()).unwrap();
    let (pixels, labels) = common::digit_like(30, 1);
    assert_eq!(train.pixels, pixels);
    assert_eq!(train.labels, labels);
    assert_eq!(
        (train.len(), test.len(), train.features, train.classes),
        (30, 20, 784, 10)
    );
    let d = Dataset::<f64>::from_raw(&train).unwrap();
    assert_eq!(d.inputs.shape(), (784, 30));
    assert!(d
        .inputs
        .as_slice()
        .iter()
        .all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn missing_or_mismatched_files_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_mnist_dir(dir.path()).is_err());
    common::write_mnist(dir.path(), 10, 10);
    // labels for a different number of images
    let mut bytes = Vec::new();
    write_idx(
        &mut bytes,
        &IdxArray {
            dims: vec![9],
            data: vec![0; 9],
        },
    )
    .unwrap();
    std::fs::write(dir.path().join("train-labels-idx1-ubyte"), bytes).unwrap();
    assert!(load_mnist_dir(dir.path()).is_err());
}

#[test]
fn cifar_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    common::write_cifar10(dir.path(), 4);
    let (train, test) = load_cifar_dir(dir.path(), CifarVariant::Cifar10).unwrap();
    assert_eq!(
        (train.len(), test.len(), train.features, train.classes),
        (20, 4, 3072, 10)
    );
    assert_eq!(&train.labels[..5], &[0, 1, 2, 3, 0]);
}

proptest! {
    #[test]
    fn idx_write_parse_round_trip(n in 0usize..20, h in 1usize..6, w in 1usize..6, seed in any::<u8>()) {
        let data: Vec<u8> = (0..n * h * w).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let a = IdxArray { dims: vec![n, h, w], data };
        let mut bytes = Vec::new();
        write_idx(&mut bytes, &a).unwrap();
        prop_assert_eq!(parse_idx(&bytes, IMAGES_MAGIC).unwrap(), a);
        prop_assert!(parse_idx(&bytes[..bytes.len().saturating_sub(1).max(3)], IMAGES_MAGIC).is_err() || n * h * w == 0);
    }
}

/// Runs only when the real files are present (see scripts/fetch_mnist.sh).
#[test]
fn real_mnist_if_present() {
    let dir = std::env::var_os("FEEDALIGN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    if !dir.join("train-images-idx3-ubyte").exists()
        && !dir.join("train-images-idx3-ubyte.gz").exists()
    {
        eprintln!("MNIST not found in {}, skipping", dir.display());
        return;
    }
    let (train, test) = load_mnist_dir(&dir).unwrap();
    assert_eq!(
        (train.len(), test.len(), train.features),
        (60000, 10000, 784)
    );
    let mut counts = [0usize; 10];
    for &l in &train.labels {
        counts[l as usize] += 1;
    }
    // every digit holds roughly a tenth of the training set
    assert!(
        counts.iter().all(|&c| (5000..7000).contains(&c)),
        "{counts:?}"
    );
    assert_eq!(*train.pixels.iter().max().unwrap(), 255);
}
