use crate::error::{Error, Result};
use crate::model::logistic;
use crate::tensor::{Matrix, Real};

/// Binary cross-entropy averaged over the batch (columns) and summed over
/// output units. Predictions are clamped into `[eps, 1 - eps]` first.
pub fn compute_loss<T: Real>(prediction: &Matrix<T>, target: &Matrix<T>) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(
            "compute_loss",
            prediction.shape(),
            target.shape(),
        ));
    }
    let n = prediction.cols();
    if n == 0 {
        return Err(Error::invalid("loss of an empty batch"));
    }
    let eps = T::LOSS_EPSILON.to_f64();
    let total: f64 = prediction
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&p, &y)| {
            let p = p.to_f64().clamp(eps, 1.0 - eps);
            let y = y.to_f64();
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / n as f64)
}

/// `e = ŷ - y`, the loss gradient with respect to the output pre-activation.
pub fn output_error<T: Real>(prediction: &Matrix<T>, target: &Matrix<T>) -> Result<Matrix<T>> {
    prediction
        .sub(target)
        .map_err(|_| Error::shape("output_error", prediction.shape(), target.shape()))
}

/// `e = σ(a_y) - y` evaluated from the logits.
///
/// For a target of exactly 1 this computes `-σ(-a_y)` instead of
/// `σ(a_y) - 1`, so the error stays strictly negative even where `σ(a_y)`
/// rounds to 1. For binary targets the sign of every entry is then fixed by
/// the target alone.
pub fn output_error_from_logits<T: Real>(
    logits: &Matrix<T>,
    target: &Matrix<T>,
) -> Result<Matrix<T>> {
    logits.zip_map(target, "output_error", |a, y| {
        if y == T::ONE {
            -logistic(-a)
        } else {
            logistic(a) - y
        }
    })
}
