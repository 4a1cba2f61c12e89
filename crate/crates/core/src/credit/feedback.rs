use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Geometry, Network};
use crate::tensor::{checksum_all, sample_uniform, Matrix, Real, SeededRng};

/// Credit-assignment rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Back-propagation through the transposed forward weights.
    Bp,
    /// Feedback alignment: layer-by-layer transport through fixed random matrices.
    Fa,
    /// Direct feedback alignment: the output error is projected straight to
    /// every hidden block through its own fixed random matrix.
    Dfa,
    /// Indirect feedback alignment: the error reaches the first hidden layer
    /// and is then pushed upward through the forward weights.
    Ifa,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bp => "bp",
            Method::Fa => "fa",
            Method::Dfa => "dfa",
            Method::Ifa => "ifa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bp" => Some(Method::Bp),
            "fa" => Some(Method::Fa),
            "dfa" => Some(Method::Dfa),
            "ifa" => Some(Method::Ifa),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name().to_ascii_uppercase())
    }
}

/// Fixed random feedback matrices, indexed by the hidden layer that receives
/// the fed-back signal.
///
/// * FA: layer `i` receives `B_i * δa_{i+1}`, with `B_i` shaped like `W_{i+1}ᵀ`
///   (for a convolution above, the transposed kernel shape `(C*kh*kw) x F`).
/// * DFA: every block output `i` receives `B_i * e`, `B_i` is `size_i x outputs`.
/// * IFA: only layer 0 receives `B_0 * e`.
///
/// There is no way to mutate the matrices after construction.
#[derive(Debug, Clone)]
pub struct FeedbackWeights<T: Real = f64> {
    method: Method,
    matrices: Vec<Matrix<T>>,
    slots: Vec<Option<usize>>,
    shared: bool,
}

impl<T: Real> FeedbackWeights<T> {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    /// Feedback matrix delivering to hidden layer `i`, if any.
    pub fn for_layer(&self, i: usize) -> Option<&Matrix<T>> {
        self.slots
            .get(i)
            .copied()
            .flatten()
            .map(|s| &self.matrices[s])
    }

    /// Distinct stored matrices (one when shared).
    pub fn matrices(&self) -> &[Matrix<T>] {
        &self.matrices
    }

    /// Hidden layers that receive feedback, bottom to top.
    pub fn targets(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|_| i))
            .collect()
    }

    pub fn checksum(&self) -> String {
        checksum_all(&self.matrices)
    }

    /// Wraps caller-supplied matrices, one optional entry per hidden layer,
    /// after checking them against the method's shape rule.
    pub fn from_matrices(
        method: Method,
        net: &Network<T>,
        matrices: Vec<Option<Matrix<T>>>,
    ) -> Result<Self> {
        let expected = expected_shapes(method, net)?;
        if matrices.len() != expected.len() {
            return Err(Error::invalid(format!(
                "expected {} feedback entries, got {}",
                expected.len(),
                matrices.len()
            )));
        }
        let mut stored = Vec::new();
        let mut slots = Vec::with_capacity(expected.len());
        for (i, (m, want)) in matrices.into_iter().zip(&expected).enumerate() {
            match (m, want) {
                (Some(m), Some(shape)) => {
                    if m.shape() != *shape {
                        return Err(Error::shape("feedback", m.shape(), *shape));
                    }
                    slots.push(Some(stored.len()));
                    stored.push(m);
                }
                (None, None) => slots.push(None),
                (Some(_), None) => {
                    return Err(Error::invalid(format!(
                        "layer {i} takes no feedback matrix under {method}"
                    )))
                }
                (None, Some(_)) => {
                    return Err(Error::invalid(format!(
                        "layer {i} needs a feedback matrix under {method}"
                    )))
                }
            }
        }
        Ok(Self {
            method,
            matrices: stored,
            slots,
            shared: false,
        })
    }
}

/// Required `B_i` shape per hidden layer for the method.
pub(crate) fn expected_shapes<T: Real>(
    method: Method,
    net: &Network<T>,
) -> Result<Vec<Option<(usize, usize)>>> {
    let hidden = net.hidden_len();
    let outputs = net.output_dim();
    let mut shapes = vec![None; hidden];
    match method {
        Method::Bp => {}
        Method::Fa => {
            for (i, slot) in shapes.iter_mut().enumerate() {
                let above = net.layer(i + 1);
                match above.geometry() {
                    Geometry::Pool(_) => {}
                    _ => {
                        let w = &above.params().expect("parametric").weights;
                        *slot = Some((w.cols(), w.rows()));
                    }
                }
            }
        }
        Method::Dfa => {
            for i in net.block_outputs() {
                shapes[i] = Some((net.layer(i).output_shape().size(), outputs));
            }
        }
        Method::Ifa => {
            if !net.all_dense() {
                return Err(Error::Unsupported(
                    "indirect feedback is implemented for fully connected networks only".into(),
                ));
            }
            if hidden > 0 {
                shapes[0] = Some((net.layer(0).output_shape().size(), outputs));
            }
        }
    }
    Ok(shapes)
}

/// Samples feedback matrices uniform on `[-1/sqrt(fanout), 1/sqrt(fanout)]`,
/// where `fanout` is the dimension of the error signal being fed back (the
/// matrix column count).
///
/// `shared` aliases one matrix to every DFA target; it requires all targets
/// to have the same width.
pub fn init_feedback<T: Real>(
    method: Method,
    net: &Network<T>,
    rng: &mut SeededRng,
    shared: bool,
) -> Result<FeedbackWeights<T>> {
    let shapes = expected_shapes(method, net)?;
    if shared {
        if method != Method::Dfa {
            return Err(Error::invalid("shared feedback is only defined for DFA"));
        }
        let distinct: Vec<(usize, usize)> = {
            let mut v: Vec<_> = shapes.iter().flatten().copied().collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        if distinct.len() > 1 {
            return Err(Error::invalid(format!(
                "shared feedback needs equal hidden widths, got {distinct:?}"
            )));
        }
        let matrices = match distinct.first() {
            Some(&(r, c)) => vec![sample_uniform(r, c, 1.0 / (c as f64).sqrt(), rng)?],
            None => Vec::new(),
        };
        let slots = shapes.iter().map(|s| s.map(|_| 0)).collect();
        return Ok(FeedbackWeights {
            method,
            matrices,
            slots,
            shared: true,
        });
    }
    let mut matrices = Vec::new();
    let mut slots = Vec::with_capacity(shapes.len());
    for s in &shapes {
        match s {
            Some((r, c)) => {
                slots.push(Some(matrices.len()));
                matrices.push(sample_uniform(*r, *c, 1.0 / (*c as f64).sqrt(), rng)?);
            }
            None => slots.push(None),
        }
    }
    Ok(FeedbackWeights {
        method,
        matrices,
        slots,
        shared: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActivationKind, NetworkSpec, Shape};
    use crate::tensor::StreamLabel;

    fn net(widths: &[usize]) -> Network {
        Network::zeros(&NetworkSpec::dense(20, widths, ActivationKind::Tanh, 10)).unwrap()
    }

    fn rng() -> SeededRng {
        SeededRng::new(5, StreamLabel::Feedback)
    }

    #[test]
    fn dfa_limit_uses_output_width() {
        let fb: FeedbackWeights =
            init_feedback(Method::Dfa, &net(&[30, 40]), &mut rng(), false).unwrap();
        let limit = 1.0 / 10f64.sqrt();
        assert!((limit - 0.316228).abs() < 1e-6);
        assert_eq!(fb.for_layer(0).unwrap().shape(), (30, 10));
        assert_eq!(fb.for_layer(1).unwrap().shape(), (40, 10));
        for m in fb.matrices() {
            assert!(m.max_abs() <= limit);
            assert!(m.max_abs() > 0.9 * limit);
        }
    }

    #[test]
    fn fa_shapes_follow_transposed_weights() {
        let fb: FeedbackWeights =
            init_feedback(Method::Fa, &net(&[30, 40]), &mut rng(), false).unwrap();
        assert_eq!(fb.for_layer(0).unwrap().shape(), (30, 40));
        assert_eq!(fb.for_layer(1).unwrap().shape(), (40, 10));
        assert!(fb.for_layer(0).unwrap().max_abs() <= 1.0 / 40f64.sqrt());
    }

    #[test]
    fn ifa_has_single_matrix() {
        let fb: FeedbackWeights =
            init_feedback(Method::Ifa, &net(&[30, 40, 50]), &mut rng(), false).unwrap();
        assert_eq!(fb.targets(), vec![0]);
        assert_eq!(fb.for_layer(0).unwrap().shape(), (30, 10));
    }

    #[test]
    fn bp_has_no_matrices() {
        let fb: FeedbackWeights =
            init_feedback(Method::Bp, &net(&[30]), &mut rng(), false).unwrap();
        assert!(fb.matrices().is_empty());
    }

    #[test]
    fn same_seed_same_feedback() {
        let a: FeedbackWeights =
            init_feedback(Method::Dfa, &net(&[8, 8]), &mut rng(), false).unwrap();
        let b: FeedbackWeights =
            init_feedback(Method::Dfa, &net(&[8, 8]), &mut rng(), false).unwrap();
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn shared_feedback_aliases_one_matrix() {
        let fb: FeedbackWeights =
            init_feedback(Method::Dfa, &net(&[8, 8, 8]), &mut rng(), true).unwrap();
        assert_eq!(fb.matrices().len(), 1);
        assert!(std::ptr::eq(
            fb.for_layer(0).unwrap(),
            fb.for_layer(2).unwrap()
        ));
        let err = init_feedback::<f64>(Method::Dfa, &net(&[8, 9]), &mut rng(), true);
        assert!(err.is_err());
        assert!(init_feedback::<f64>(Method::Fa, &net(&[8, 8]), &mut rng(), true).is_err());
    }

    #[test]
    fn conv_dfa_targets_pool_outputs() {
        let spec = NetworkSpec::conv_stack(
            Shape::new(1, 8, 8),
            &[2, 3],
            (3, 3),
            ((2, 2), 2),
            &[5],
            ActivationKind::Tanh,
            4,
        );
        let net: Network = Network::zeros(&spec).unwrap();
        let fb: FeedbackWeights = init_feedback(Method::Dfa, &net, &mut rng(), false).unwrap();
        assert_eq!(fb.targets(), vec![1, 3, 4]);
        assert_eq!(fb.for_layer(1).unwrap().shape(), (2 * 4 * 4, 4));
        assert_eq!(fb.for_layer(3).unwrap().shape(), (3 * 2 * 2, 4));
        let fa: FeedbackWeights = init_feedback(Method::Fa, &net, &mut rng(), false).unwrap();
        // conv above pool 1 has kernel 3 x (2*3*3)
        assert_eq!(fa.for_layer(1).unwrap().shape(), (18, 3));
        assert!(fa.for_layer(0).is_none());
        assert!(init_feedback::<f64>(Method::Ifa, &net, &mut rng(), false).is_err());
    }

    #[test]
    fn from_matrices_validates_shapes() {
        let n = net(&[4]);
        assert!(
            FeedbackWeights::from_matrices(Method::Dfa, &n, vec![Some(Matrix::zeros(4, 10))])
                .is_ok()
        );
        assert!(
            FeedbackWeights::from_matrices(Method::Dfa, &n, vec![Some(Matrix::zeros(10, 4))])
                .is_err()
        );
        assert!(FeedbackWeights::<f64>::from_matrices(Method::Dfa, &n, vec![None]).is_err());
    }
}
