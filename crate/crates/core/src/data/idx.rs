//! IDX files as distributed for MNIST, optionally gzip-compressed.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::RawImages;
use crate::error::{Error, Result};

/// Magic number of an unsigned-byte IDX file with three dimensions.
pub const IMAGES_MAGIC: u32 = 2051;
/// Magic number of an unsigned-byte IDX file with one dimension.
pub const LABELS_MAGIC: u32 = 2049;

/// Parsed unsigned-byte IDX content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Reads a whole file, inflating it first when it starts with the gzip
/// signature.
pub(crate) fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?
        .read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format("gzip stream", format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses IDX bytes whose magic must equal `magic`.
pub fn parse_idx(bytes: &[u8], magic: u32) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::format("IDX", "truncated header"));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if found != magic {
        return Err(Error::format(
            "IDX",
            format!("magic {found} where {magic} was expected"),
        ));
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format("IDX", "truncated header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
        })
        .collect();
    let len: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() != len {
        return Err(Error::format(
            "IDX",
            format!(
                "header announces {len} bytes of data, file has {}",
                body.len()
            ),
        ));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

/// Serializes an unsigned-byte IDX array.
pub fn write_idx<W: Write>(mut w: W, array: &IdxArray) -> Result<()> {
    let magic = 0x0800u32 | array.dims.len() as u32;
    w.write_all(&magic.to_be_bytes())?;
    for &d in &array.dims {
        w.write_all(&(d as u32).to_be_bytes())?;
    }
    w.write_all(&array.data)?;
    Ok(())
}

/// Loads an image file and its label file.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<RawImages> {
    let img = parse_idx(&read_maybe_gz(images)?, IMAGES_MAGIC)
        .map_err(|e| Error::format("MNIST images", format!("{}: {e}", images.display())))?;
    let lab = parse_idx(&read_maybe_gz(labels)?, LABELS_MAGIC)
        .map_err(|e| Error::format("MNIST labels", format!("{}: {e}", labels.display())))?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::format(
            "MNIST",
            format!("{} images but {} labels", img.dims[0], lab.dims[0]),
        ));
    }
    if let Some(&bad) = lab.data.iter().find(|&&l| l > 9) {
        return Err(Error::format(
            "MNIST labels",
            format!("label {bad} out of range"),
        ));
    }
    Ok(RawImages {
        features: img.dims[1] * img.dims[2],
        pixels: img.data,
        labels: lab.data,
        classes: 10,
    })
}
