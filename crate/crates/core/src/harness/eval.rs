//! Classification error and feature dumps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::credit::compute_loss;
use crate::error::{Error, Result};
use crate::model::{forward, Network};
use crate::tensor::{Matrix, Real};

/// Columns per forward pass during evaluation.
const EVAL_CHUNK: usize = 1000;

/// Error rate and mean loss over a split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Misclassified / total * 100, by argmax of the output (ties to the
    /// lowest class index).
    pub error_pct: f64,
    pub loss: f64,
}

/// Evaluates with dropout off.
pub fn evaluate_split<T: Real>(
    net: &Network<T>,
    inputs: &Matrix<T>,
    targets: &Matrix<T>,
) -> Result<Evaluation> {
    let n = inputs.cols();
    if n == 0 {
        return Err(Error::invalid("error rate of an empty split is undefined"));
    }
    if targets.shape() != (net.output_dim(), n) {
        return Err(Error::shape(
            "evaluate",
            targets.shape(),
            (net.output_dim(), n),
        ));
    }
    let truth = targets.argmax_columns();
    let mut wrong = 0usize;
    let mut loss = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let x = inputs.column_range(start, end);
        let t = forward(net, &x)?;
        let pred = t.prediction().argmax_columns();
        wrong += pred
            .iter()
            .zip(&truth[start..end])
            .filter(|(a, b)| a != b)
            .count();
        loss +=
            compute_loss(t.prediction(), &targets.column_range(start, end))? * (end - start) as f64;
        start = end;
    }
    Ok(Evaluation {
        error_pct: 100.0 * wrong as f64 / n as f64,
        loss: loss / n as f64,
    })
}

/// Classification error in percent.
pub fn evaluate<T: Real>(net: &Network<T>, inputs: &Matrix<T>, targets: &Matrix<T>) -> Result<f64> {
    Ok(evaluate_split(net, inputs, targets)?.error_pct)
}

/// Writes the activations of each requested layer, one row per sample, to
/// `<dir>/features_layer<i>.csv`. Layer 0 is the first hidden layer.
pub fn dump_features<T: Real>(
    net: &Network<T>,
    inputs: &Matrix<T>,
    layers: &[usize],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    for &l in layers {
        if l >= net.len() {
            return Err(Error::invalid(format!(
                "layer {l} out of range (network has {})",
                net.len()
            )));
        }
    }
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut writers = Vec::new();
    for &l in layers {
        let path = dir.join(format!("features_layer{l}.csv"));
        writers.push(BufWriter::new(File::create(&path)?));
        files.push(path);
    }
    let n = inputs.cols();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let t = forward(net, &inputs.column_range(start, end))?;
        for (w, &l) in writers.iter_mut().zip(layers) {
            let h = &t.layers[l].post;
            for c in 0..h.cols() {
                let row: Vec<String> = h.col(c).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", row.join(","))?;
            }
        }
        start = end;
    }
    for mut w in writers {
        w.flush()?;
    }
    Ok(files)
}
