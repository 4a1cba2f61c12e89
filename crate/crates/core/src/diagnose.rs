//! Alignment diagnostics: the layer-wise criterion K, the alignment
//! criterion L, the reference direction c and the angle β between a
//! layer's update direction and c.
//!
//! Undefined quantities (a zero vector) are `None` in the scalar functions
//! and NaN in records and CSV output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::credit::UpdateDirections;
use crate::error::{Error, Result};
use crate::model::{ActivationKind, ForwardTrace, Geometry, Network};
use crate::tensor::{Matrix, Real};

/// Diagnostics are taken every this many batches unless configured.
pub const DEFAULT_CADENCE: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("diagnose", (a.len(), 1), (b.len(), 1)));
    }
    Ok(())
}

/// `K = δhᵀh / ‖δh‖`; `None` when `δh = 0`.
pub fn criterion_k(dh: &[f64], h: &[f64]) -> Result<Option<f64>> {
    same_len(dh, h)?;
    let n = norm(dh);
    Ok((n > 0.0).then(|| dot(dh, h) / n))
}

/// `L = δhᵀc / ‖δh‖`; `None` when `δh = 0`.
pub fn criterion_l(dh: &[f64], c: &[f64]) -> Result<Option<f64>> {
    criterion_k(dh, c)
}

/// Angle between `δh` and `c` in degrees, `None` when either is zero.
pub fn alignment_angle(dh: &[f64], c: &[f64]) -> Result<Option<f64>> {
    same_len(dh, c)?;
    let (a, b) = (norm(dh), norm(c));
    if a == 0.0 || b == 0.0 {
        return Ok(None);
    }
    let cos = (dot(dh, c) / (a * b)).clamp(-1.0, 1.0);
    Ok(Some(cos.acos().to_degrees()))
}

/// `c_k = Wᵀ(δh_{k+1} ⊙ f'(a_{k+1}))` for a dense layer above, one column
/// per sample.
pub fn reference_direction<T: Real>(
    w_above: &Matrix<T>,
    dh_above: &Matrix<T>,
    a_above: &Matrix<T>,
    act_above: ActivationKind,
) -> Result<Matrix<T>> {
    let da = dh_above
        .hadamard(&act_above.derivative_matrix(a_above, &act_above.apply_matrix(a_above)))?;
    w_above
        .matmul_tn(&da)
        .map_err(|_| Error::shape("reference_direction", w_above.shape(), da.shape()))
}

/// `c_{k+1} = (W δh_k) ⊙ f'(a_{k+1})`, the change of `h_{k+1}` caused by
/// moving `h_k` along `δh_k`.
pub fn companion_direction<T: Real>(
    w_above: &Matrix<T>,
    dh: &Matrix<T>,
    a_above: &Matrix<T>,
    act_above: ActivationKind,
) -> Result<Matrix<T>> {
    let moved = w_above
        .matmul(dh)
        .map_err(|_| Error::shape("companion_direction", w_above.shape(), dh.shape()))?;
    moved.hadamard(&act_above.derivative_matrix(a_above, &act_above.apply_matrix(a_above)))
}

/// One diagnostics row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub epoch: usize,
    pub batch: usize,
    pub layer: usize,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub beta_deg: f64,
    pub norm_dh: f64,
    pub norm_c: f64,
}

impl AlignmentRecord {
    pub fn beta(&self) -> Option<f64> {
        (!self.beta_deg.is_nan()).then_some(self.beta_deg)
    }
}

/// Records for one sampled batch: per-sample quantities averaged over the
/// batch, and the same quantities on the batch flattened into one vector.
#[derive(Debug, Clone, Default)]
pub struct AlignmentSnapshot {
    pub per_sample: Vec<AlignmentRecord>,
    pub flattened: Vec<AlignmentRecord>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn columns<T: Real>(m: &Matrix<T>) -> Vec<Vec<f64>> {
    (0..m.cols())
        .map(|c| m.col(c).into_iter().map(|v| v.to_f64()).collect())
        .collect()
}

fn flat<T: Real>(m: &Matrix<T>) -> Vec<f64> {
    m.as_slice().iter().map(|v| v.to_f64()).collect()
}

/// Hidden layers for which `c_k` is defined: dense layers directly below a
/// dense layer or the output.
pub fn diagnosable_layers<T: Real>(net: &Network<T>) -> Vec<usize> {
    (0..net.hidden_len())
        .filter(|&i| {
            net.layer(i).geometry() == &Geometry::Dense
                && net.layer(i + 1).geometry() == &Geometry::Dense
        })
        .collect()
}

/// Reference directions `c_k` for every diagnosable layer, computed from the
/// update directions of the layer above as produced by the active rule. For
/// the top hidden layer the direction above is the output error.
pub fn reference_directions<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    upd: &UpdateDirections<T>,
) -> Result<Vec<(usize, Matrix<T>)>> {
    diagnosable_layers(net)
        .into_iter()
        .map(|k| {
            let above = upd
                .layer(k + 1)
                .ok_or_else(|| Error::invalid(format!("no update for layer {}", k + 1)))?;
            let w = &net.params(k + 1).expect("dense params").weights;
            let mut c = w.matmul_tn(&above.delta_a)?;
            if let Some(d) = &trace.layers[k].dropout {
                d.backward(&mut c)?;
            }
            Ok((k, c))
        })
        .collect()
}

/// K, L, β and norms for every diagnosable hidden layer.
pub fn measure_alignment<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    upd: &UpdateDirections<T>,
    epoch: usize,
    batch: usize,
) -> Result<AlignmentSnapshot> {
    let mut snap = AlignmentSnapshot::default();
    for (k, c) in reference_directions(net, trace, upd)? {
        let dh = &upd
            .layer(k)
            .ok_or_else(|| Error::invalid(format!("no update for layer {k}")))?
            .delta_h;
        let h = &trace.layers[k].post;
        let (dhc, cc, hc) = (columns(dh), columns(&c), columns(h));
        let per = |f: &dyn Fn(&[f64], &[f64]) -> Result<Option<f64>>, other: &[Vec<f64>]| {
            dhc.iter()
                .zip(other)
                .map(|(a, b)| f(a, b))
                .collect::<Result<Vec<_>>>()
        };
        snap.per_sample.push(AlignmentRecord {
            epoch,
            batch,
            layer: k,
            k: mean_defined(per(&criterion_k, &hc)?.into_iter()),
            l: mean_defined(per(&criterion_l, &cc)?.into_iter()),
            beta_deg: mean_defined(per(&alignment_angle, &cc)?.into_iter()),
            norm_dh: mean_defined(dhc.iter().map(|v| Some(norm(v)))),
            norm_c: mean_defined(cc.iter().map(|v| Some(norm(v)))),
        });
        let (fd, fc, fh) = (flat(dh), flat(&c), flat(h));
        snap.flattened.push(AlignmentRecord {
            epoch,
            batch,
            layer: k,
            k: criterion_k(&fd, &fh)?.unwrap_or(f64::NAN),
            l: criterion_l(&fd, &fc)?.unwrap_or(f64::NAN),
            beta_deg: alignment_angle(&fd, &fc)?.unwrap_or(f64::NAN),
            norm_dh: norm(&fd),
            norm_c: norm(&fc),
        });
    }
    Ok(snap)
}

/// Append-only CSV sink with the `epoch,batch,layer,K,L,beta_deg,norm_dh,norm_c`
/// schema.
pub struct AlignmentWriter {
    inner: csv::Writer<Box<dyn Write>>,
}

impl AlignmentWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self::from_writer(Box::new(File::create(path)?)))
    }

    pub fn from_writer(w: Box<dyn Write>) -> Self {
        Self {
            inner: csv::Writer::from_writer(w),
        }
    }

    pub fn write(&mut self, records: &[AlignmentRecord]) -> Result<()> {
        for r in records {
            self.inner.serialize(r)?;
        }
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads records written by [`AlignmentWriter`].
pub fn read_alignment_csv(path: &Path) -> Result<Vec<AlignmentRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
