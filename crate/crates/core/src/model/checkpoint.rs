//! Binary network checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field            | encoding                                   |
//! |------------------|--------------------------------------------|
//! | magic            | `FBAL` (4 bytes)                           |
//! | version          | u32, currently 1                           |
//! | precision        | u8, byte width of each float (8 or 4)      |
//! | spec length      | u32, byte length of the architecture text  |
//! | spec             | UTF-8 TOML of the [`NetworkSpec`]           |
//! | layer count      | u32, number of parametric layers           |
//! | per layer        | u32 index, u32 rows, u32 cols, rows*cols floats (row-major), u32 bias rows, bias floats |
//!
//! Floats are stored as their IEEE-754 bits, little-endian, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Network, NetworkSpec, Params};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

pub const MAGIC: &[u8; 4] = b"FBAL";
pub const VERSION: u32 = 1;

/// Serializes `net` to `w`.
pub fn write_checkpoint<T: Real, W: Write>(net: &Network<T>, mut w: W) -> Result<()> {
    let spec = toml::to_string(&net.spec())
        .map_err(|e| Error::format("checkpoint spec", e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(T::BYTES as u8)?;
    w.write_u32::<LittleEndian>(spec.len() as u32)?;
    w.write_all(spec.as_bytes())?;
    let layers: Vec<usize> = net.parametric_layers().collect();
    w.write_u32::<LittleEndian>(layers.len() as u32)?;
    for i in layers {
        let p = net.params(i).expect("parametric layer");
        w.write_u32::<LittleEndian>(i as u32)?;
        w.write_u32::<LittleEndian>(p.weights.rows() as u32)?;
        w.write_u32::<LittleEndian>(p.weights.cols() as u32)?;
        write_floats(&mut w, p.weights.as_slice())?;
        w.write_u32::<LittleEndian>(p.bias.rows() as u32)?;
        write_floats(&mut w, p.bias.as_slice())?;
    }
    w.flush()?;
    Ok(())
}

fn write_floats<T: Real, W: Write>(w: &mut W, data: &[T]) -> Result<()> {
    for &v in data {
        match T::BYTES {
            8 => w.write_u64::<LittleEndian>(v.bits())?,
            _ => w.write_u32::<LittleEndian>(v.bits() as u32)?,
        }
    }
    Ok(())
}

fn read_floats<T: Real, R: Read>(r: &mut R, n: usize) -> Result<Vec<T>> {
    (0..n)
        .map(|_| {
            let bits = match T::BYTES {
                8 => r.read_u64::<LittleEndian>()?,
                _ => r.read_u32::<LittleEndian>()? as u64,
            };
            Ok(T::from_bits(bits))
        })
        .collect()
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("checkpoint", "file is truncated")
    } else {
        Error::Io(e)
    }
}

/// Reads the header and returns the stored float width in bytes.
fn read_header<R: Read>(r: &mut R) -> Result<u8> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::format(
            "checkpoint",
            "bad magic, not a checkpoint file",
        ));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let width = r.read_u8().map_err(truncated)?;
    if width != 4 && width != 8 {
        return Err(Error::format(
            "checkpoint",
            format!("unknown float width {width}"),
        ));
    }
    Ok(width)
}

/// Deserializes a network stored with element type `T`.
pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<Network<T>> {
    let width = read_header(&mut r)?;
    if width as usize != T::BYTES {
        return Err(Error::format(
            "checkpoint",
            format!("stored with {width}-byte floats, requested {}", T::NAME),
        ));
    }
    let mut body = || -> std::io::Result<(String, u32)> {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let count = r.read_u32::<LittleEndian>()?;
        Ok((String::from_utf8_lossy(&text).into_owned(), count))
    };
    let (text, count) = body().map_err(truncated)?;
    let spec: NetworkSpec =
        toml::from_str(&text).map_err(|e| Error::format("checkpoint spec", e.to_string()))?;
    let mut net = Network::zeros(&spec)?;
    let expected: Vec<usize> = net.parametric_layers().collect();
    if count as usize != expected.len() {
        return Err(Error::format(
            "checkpoint",
            format!(
                "{count} parameter blocks for {} parametric layers",
                expected.len()
            ),
        ));
    }
    for &want in &expected {
        let read_u32 = |r: &mut R| r.read_u32::<LittleEndian>().map_err(truncated);
        let idx = read_u32(&mut r)? as usize;
        if idx != want {
            return Err(Error::format(
                "checkpoint",
                format!("expected layer {want}, found {idx}"),
            ));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let weights =
            Matrix::from_vec(rows, cols, read_floats(&mut r, rows * cols).map_err(io_or)?)?;
        let brows = read_u32(&mut r)? as usize;
        let bias = Matrix::from_vec(brows, 1, read_floats(&mut r, brows).map_err(io_or)?)?;
        net.set_params(idx, Params { weights, bias })
            .map_err(|e| Error::format("checkpoint", e.to_string()))?;
    }
    Ok(net)
}

fn io_or(e: Error) -> Error {
    match e {
        Error::Io(io) => truncated(io),
        other => other,
    }
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Network<T>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Element type name (`"f64"` or `"f32"`) recorded in a checkpoint.
pub fn checkpoint_precision(path: &Path) -> Result<&'static str> {
    let width = read_header(&mut BufReader::new(File::open(path)?))?;
    Ok(if width == 8 { f64::NAME } else { f32::NAME })
}
