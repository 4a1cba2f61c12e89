use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Real};

/// Elementwise non-linearity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    Logistic,
    Relu,
    Identity,
}

#[inline]
pub(crate) fn logistic<T: Real>(a: T) -> T {
    T::ONE / (T::ONE + (-a).exp())
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Logistic => "logistic",
            ActivationKind::Relu => "relu",
            ActivationKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Some(ActivationKind::Tanh),
            "logistic" | "sigmoid" => Some(ActivationKind::Logistic),
            "relu" => Some(ActivationKind::Relu),
            "identity" | "linear" => Some(ActivationKind::Identity),
            _ => None,
        }
    }

    #[inline]
    pub fn apply<T: Real>(self, a: T) -> T {
        match self {
            ActivationKind::Tanh => a.tanh(),
            ActivationKind::Logistic => logistic(a),
            ActivationKind::Relu => {
                if a > T::ZERO {
                    a
                } else {
                    T::ZERO
                }
            }
            ActivationKind::Identity => a,
        }
    }

    /// `f'(a)` from the pre-activation alone.
    #[inline]
    pub fn derivative<T: Real>(self, a: T) -> T {
        self.derivative_given(a, self.apply(a))
    }

    /// `f'(a)` when `h = f(a)` is already known.
    #[inline]
    pub fn derivative_given<T: Real>(self, a: T, h: T) -> T {
        match self {
            ActivationKind::Tanh => T::ONE - h * h,
            ActivationKind::Logistic => h * (T::ONE - h),
            ActivationKind::Relu => {
                if a > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            ActivationKind::Identity => T::ONE,
        }
    }

    pub fn apply_matrix<T: Real>(self, a: &Matrix<T>) -> Matrix<T> {
        if self == ActivationKind::Identity {
            return a.clone();
        }
        a.map(|v| self.apply(v))
    }

    /// `f'(a)` entrywise, using the stored activations `h = f(a)`.
    pub fn derivative_matrix<T: Real>(self, a: &Matrix<T>, h: &Matrix<T>) -> Matrix<T> {
        debug_assert_eq!(a.shape(), h.shape());
        let data = a
            .as_slice()
            .iter()
            .zip(h.as_slice())
            .map(|(&a, &h)| self.derivative_given(a, h))
            .collect();
        Matrix::from_vec(a.rows(), a.cols(), data).expect("shape preserved")
    }

    /// `delta ⊙ f'(a)` in place, skipping the multiply for identity layers.
    pub(crate) fn mask_inplace<T: Real>(self, delta: &mut Matrix<T>, a: &Matrix<T>, h: &Matrix<T>) {
        if self == ActivationKind::Identity {
            return;
        }
        for ((d, &a), &h) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(a.as_slice())
            .zip(h.as_slice())
        {
            *d *= self.derivative_given(a, h);
        }
    }
}
