//! ZCA whitening fit on the training inputs.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::{checksum_all, Matrix, Real};

/// Eigenvalue regularizer.
pub const ZCA_EPSILON: f64 = 1e-5;

/// Frozen `x -> W (x - mean)` with `W = U diag(1/sqrt(λ + ε)) Uᵀ`.
#[derive(Debug, Clone)]
pub struct Zca {
    mean: Matrix<f64>,
    transform: Matrix<f64>,
}

impl Zca {
    pub fn mean(&self) -> &Matrix<f64> {
        &self.mean
    }

    pub fn transform(&self) -> &Matrix<f64> {
        &self.transform
    }

    pub fn checksum(&self) -> String {
        checksum_all([&self.mean, &self.transform])
    }
}

/// Fits the transform on `inputs` (features x samples).
pub fn whiten_fit<T: Real>(inputs: &Matrix<T>, epsilon: f64) -> Result<Zca> {
    let (d, n) = inputs.shape();
    if n == 0 || d == 0 {
        return Err(Error::invalid("cannot whiten an empty dataset"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("whitening epsilon must be positive"));
    }
    if n < d {
        log::warn!("whitening {d} features from only {n} samples; covariance is rank deficient");
    }
    let x: Matrix<f64> = inputs.cast();
    let mean = x.row_mean();
    let mut centered = x;
    centered.add_column_assign(&mean.scale(-1.0))?;
    let mut cov = Matrix::zeros(d, d);
    cov.add_matmul_nt(1.0 / n as f64, &centered, &centered)?;
    // symmetrize away rounding before the eigensolver
    let cov = DMatrix::from_fn(d, d, |r, c| 0.5 * (cov.get(r, c) + cov.get(c, r)));
    let eig = SymmetricEigen::new(cov);
    let u = &eig.eigenvectors;
    let scale = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + epsilon).sqrt());
    let w = u * DMatrix::from_diagonal(&scale) * u.transpose();
    let transform = Matrix::from_vec(d, d, (0..d * d).map(|k| w[(k / d, k % d)]).collect())?;
    Ok(Zca { mean, transform })
}

/// Applies a fitted transform to any split.
pub fn whiten_apply<T: Real>(zca: &Zca, inputs: &Matrix<T>) -> Result<Matrix<T>> {
    if inputs.rows() != zca.mean.rows() {
        return Err(Error::shape(
            "whiten_apply",
            zca.transform.shape(),
            inputs.shape(),
        ));
    }
    let mut x: Matrix<f64> = inputs.cast();
    x.add_column_assign(&zca.mean.scale(-1.0))?;
    Ok(zca.transform.matmul(&x)?.cast())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_uniform, SeededRng, StreamLabel};

    /// Correlated synthetic data: a well-conditioned random mixing of
    /// approximately gaussian sources (sums of uniforms).
    fn synthetic(d: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = SeededRng::new(seed, StreamLabel::Shuffle);
        let mut z = Matrix::zeros(d, n);
        for _ in 0..6 {
            z.add_assign(&sample_uniform(d, n, 1.0, &mut rng).unwrap())
                .unwrap();
        }
        let mut mix = sample_uniform(d, d, 0.3, &mut rng).unwrap();
        mix.add_assign(&Matrix::identity(d)).unwrap();
        let mut x = mix.matmul(&z).unwrap();
        x.add_column_assign(&Matrix::filled(d, 1, 3.0)).unwrap();
        x
    }

    fn covariance(x: &Matrix) -> Matrix {
        let mean = x.row_mean();
        let mut c = x.clone();
        c.add_column_assign(&mean.scale(-1.0)).unwrap();
        let mut cov = Matrix::zeros(x.rows(), x.rows());
        cov.add_matmul_nt(1.0 / x.cols() as f64, &c, &c).unwrap();
        cov
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let x = synthetic(6, 5000, 1);
        let zca = whiten_fit(&x, ZCA_EPSILON).unwrap();
        let w = whiten_apply(&zca, &x).unwrap();
        let cov = covariance(&w);
        assert!(cov.max_abs_diff(&Matrix::identity(6)).unwrap() < 1e-3);
        assert!(w.row_mean().max_abs() < 1e-10);
    }

    #[test]
    fn rewhitening_is_nearly_identity() {
        // Unit-variance sources: the first pass leaves eigenvalues 1/(1+ε), for
        // which a second pass is the identity up to O(ε²). With a spectrum far
        // from 1 the second pass rescales by about ε(λ-1)/(2λ) instead.
        let mut rng = SeededRng::new(2, StreamLabel::Shuffle);
        let mut x = Matrix::<f64>::zeros(5, 3000);
        for _ in 0..3 {
            x.add_assign(&sample_uniform(5, 3000, 1.0, &mut rng).unwrap())
                .unwrap();
        }
        let w = whiten_apply(&whiten_fit(&x, ZCA_EPSILON).unwrap(), &x).unwrap();
        let zca = whiten_fit(&w, ZCA_EPSILON).unwrap();
        assert!(zca.transform().max_abs_diff(&Matrix::identity(5)).unwrap() < 1e-6);
        let again = whiten_apply(&zca, &w).unwrap();
        let diff = again.max_abs_diff(&w).unwrap();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn constant_feature_stays_finite() {
        let mut x = synthetic(4, 500, 3);
        for c in 0..x.cols() {
            x.set(2, c, 0.7);
        }
        let zca = whiten_fit(&x, ZCA_EPSILON).unwrap();
        let w = whiten_apply(&zca, &x).unwrap();
        assert!(w.all_finite());
        assert!(w.row(2).iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn applying_does_not_touch_the_transform() {
        let x = synthetic(4, 400, 4);
        let zca = whiten_fit(&x, ZCA_EPSILON).unwrap();
        let before = zca.checksum();
        whiten_apply(&zca, &synthetic(4, 100, 5)).unwrap();
        assert_eq!(zca.checksum(), before);
        assert!(whiten_apply(&zca, &Matrix::<f64>::zeros(3, 2)).is_err());
    }
}
