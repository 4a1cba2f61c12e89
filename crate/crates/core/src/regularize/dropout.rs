use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout rates for the input layer and for hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub p_input: f64,
    pub p_hidden: f64,
    pub mode: DropoutMode,
}

impl DropoutSpec {
    pub fn new(p_input: f64, p_hidden: f64) -> Result<Self> {
        check_p(p_input)?;
        check_p(p_hidden)?;
        Ok(Self {
            p_input,
            p_hidden,
            mode: DropoutMode::Train,
        })
    }

    pub fn eval(mut self) -> Self {
        self.mode = DropoutMode::Eval;
        self
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "dropout probability must be in [0, 1), got {p}"
        )))
    }
}

/// Dropout applied to one layer output, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Dropped<T: Real = f64> {
    /// 1 for kept units, 0 for dropped ones.
    pub mask: Matrix<T>,
    /// `h ⊙ mask / (1 - p)`.
    pub output: Matrix<T>,
    pub p: f64,
}

impl<T: Real> Dropped<T> {
    /// Pulls a delta on the dropped output back to the undropped activation.
    pub fn backward(&self, delta: &mut Matrix<T>) -> Result<()> {
        let scale = T::from_f64(1.0 / (1.0 - self.p));
        delta.hadamard_assign(&self.mask)?;
        delta.scale_assign(scale);
        Ok(())
    }
}

/// Zeroes each entry with probability `p` and scales survivors by
/// `1 / (1 - p)`. Eval mode returns `h` unchanged with an all-ones mask.
pub fn apply_dropout<T: Real>(
    h: &Matrix<T>,
    p: f64,
    rng: &mut SeededRng,
    mode: DropoutMode,
) -> Result<(Matrix<T>, Matrix<T>)> {
    check_p(p)?;
    if mode == DropoutMode::Eval || p == 0.0 {
        return Ok((h.clone(), Matrix::filled(h.rows(), h.cols(), T::ONE)));
    }
    let scale = T::from_f64(1.0 / (1.0 - p));
    let mut mask = Matrix::zeros(h.rows(), h.cols());
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for ((m, o), &v) in mask
        .as_mut_slice()
        .iter_mut()
        .zip(out.as_mut_slice())
        .zip(h.as_slice())
    {
        if !rng.bernoulli(p) {
            *m = T::ONE;
            *o = v * scale;
        }
    }
    Ok((out, mask))
}
