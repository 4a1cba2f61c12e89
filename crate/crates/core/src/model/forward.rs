use super::conv::{conv_forward, maxpool_forward, PoolMask};
use super::{Geometry, Network};
use crate::error::{Error, Result};
use crate::regularize::{apply_dropout, DropoutMode, DropoutSpec, Dropped};
use crate::tensor::{Matrix, Real, SeededRng};

/// Stored quantities of one layer for one mini-batch.
#[derive(Debug, Clone)]
pub struct LayerTrace<T: Real = f64> {
    /// Pre-activation `a_i`.
    pub pre: Matrix<T>,
    /// Activation `h_i = f(a_i)`, before any dropout.
    pub post: Matrix<T>,
    pub pool_mask: Option<PoolMask>,
    pub dropout: Option<Dropped<T>>,
}

impl<T: Real> LayerTrace<T> {
    /// What the next layer consumes: `post`, or its dropped-out version.
    pub fn output(&self) -> &Matrix<T> {
        self.dropout.as_ref().map_or(&self.post, |d| &d.output)
    }
}

/// Forward-pass record of one mini-batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Real = f64> {
    pub input: Matrix<T>,
    pub input_dropout: Option<Dropped<T>>,
    /// One entry per network layer; the last is the output layer, whose
    /// `pre` is `a_y` and `post` is the prediction.
    pub layers: Vec<LayerTrace<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.input.cols()
    }

    pub fn prediction(&self) -> &Matrix<T> {
        &self.layers.last().expect("output layer").post
    }

    pub fn logits(&self) -> &Matrix<T> {
        &self.layers.last().expect("output layer").pre
    }

    /// Input consumed by layer `i`.
    pub fn layer_input(&self, i: usize) -> &Matrix<T> {
        if i == 0 {
            self.input_dropout
                .as_ref()
                .map_or(&self.input, |d| &d.output)
        } else {
            self.layers[i - 1].output()
        }
    }
}

/// Runs `x` (one column per sample) through the network.
pub fn forward<T: Real>(net: &Network<T>, x: &Matrix<T>) -> Result<ForwardTrace<T>> {
    run(net, x, None)
}

/// Forward pass with dropout on the input and on every hidden block output.
pub fn forward_with_dropout<T: Real>(
    net: &Network<T>,
    x: &Matrix<T>,
    dropout: &DropoutSpec,
    rng: &mut SeededRng,
) -> Result<ForwardTrace<T>> {
    run(net, x, Some((dropout, rng)))
}

fn run<T: Real>(
    net: &Network<T>,
    x: &Matrix<T>,
    mut dropout: Option<(&DropoutSpec, &mut SeededRng)>,
) -> Result<ForwardTrace<T>> {
    if x.rows() != net.input_dim() {
        return Err(Error::shape(
            "forward",
            x.shape(),
            (net.input_dim(), x.cols()),
        ));
    }
    let active = dropout
        .as_ref()
        .is_some_and(|(d, _)| d.mode == DropoutMode::Train);
    let drop_at = if active {
        net.block_outputs()
    } else {
        Vec::new()
    };

    let (p_input, p_hidden) = dropout
        .as_ref()
        .map_or((0.0, 0.0), |(d, _)| (d.p_input, d.p_hidden));
    let mut maybe_drop = |h: &Matrix<T>, p: f64| -> Result<Option<Dropped<T>>> {
        match dropout.as_mut() {
            Some((spec, rng)) if active && p > 0.0 => {
                let (output, mask) = apply_dropout(h, p, rng, spec.mode)?;
                Ok(Some(Dropped { mask, output, p }))
            }
            _ => Ok(None),
        }
    };

    let input_dropout = maybe_drop(x, p_input)?;

    let mut layers: Vec<LayerTrace<T>> = Vec::with_capacity(net.len());
    for (i, layer) in net.layers().iter().enumerate() {
        let input = if i == 0 {
            input_dropout.as_ref().map_or(x, |d| &d.output)
        } else {
            layers[i - 1].output()
        };
        let (pre, pool_mask) = match layer.geometry() {
            Geometry::Dense => {
                let p = layer.params().expect("dense params");
                let mut a = p.weights.matmul(input)?;
                a.add_column_assign(&p.bias)?;
                (a, None)
            }
            Geometry::Conv(g) => {
                let p = layer.params().expect("conv params");
                (conv_forward(g, &p.weights, &p.bias, input)?, None)
            }
            Geometry::Pool(g) => {
                let (pooled, mask) = maxpool_forward(g, input)?;
                (pooled, Some(mask))
            }
        };
        let post = layer.activation().apply_matrix(&pre);
        let dropped = if drop_at.contains(&i) {
            maybe_drop(&post, p_hidden)?
        } else {
            None
        };
        layers.push(LayerTrace {
            pre,
            post,
            pool_mask,
            dropout: dropped,
        });
    }
    Ok(ForwardTrace {
        input: x.clone(),
        input_dropout,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_network, ActivationKind, InitScheme, NetworkSpec, Params};
    use crate::tensor::StreamLabel;

    #[test]
    fn zero_network_outputs_half() {
        let spec = NetworkSpec::dense(5, &[4, 3], ActivationKind::Tanh, 2);
        let net: Network = Network::zeros(&spec).unwrap();
        let x = Matrix::from_vec(5, 3, (0..15).map(|v| v as f64 / 7.0).collect()).unwrap();
        let t = forward(&net, &x).unwrap();
        for l in &t.layers[..2] {
            assert!(l.post.is_zero());
        }
        assert_eq!(t.prediction(), &Matrix::filled(2, 3, 0.5));
    }

    #[test]
    fn single_tanh_unit() {
        let spec = NetworkSpec::dense(1, &[1], ActivationKind::Tanh, 1);
        let mut net: Network = Network::zeros(&spec).unwrap();
        net.set_params(
            0,
            Params {
                weights: Matrix::filled(1, 1, 1.0),
                bias: Matrix::zeros(1, 1),
            },
        )
        .unwrap();
        let t = forward(&net, &Matrix::filled(1, 1, 0.5)).unwrap();
        assert!((t.layers[0].post.get(0, 0) - 0.462117).abs() < 1e-6);
    }

    #[test]
    fn identical_columns_give_identical_traces() {
        let spec = NetworkSpec::dense(4, &[6], ActivationKind::Logistic, 3);
        let net: Network = init_network(
            &spec,
            InitScheme::Uniform,
            &mut SeededRng::new(1, StreamLabel::Init),
        )
        .unwrap();
        let col = [0.1, 0.9, 0.3, 0.0];
        let x = Matrix::from_rows(&[[col[0]; 2], [col[1]; 2], [col[2]; 2], [col[3]; 2]]);
        let t = forward(&net, &x).unwrap();
        for l in &t.layers {
            assert_eq!(l.post.col(0), l.post.col(1));
        }
    }

    #[test]
    fn wrong_input_rows_rejected() {
        let net: Network =
            Network::zeros(&NetworkSpec::dense(4, &[2], ActivationKind::Tanh, 1)).unwrap();
        assert!(forward(&net, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn frozen_flag_does_not_change_forward() {
        let spec = NetworkSpec::dense(4, &[5, 5], ActivationKind::Tanh, 2);
        let net: Network = init_network(
            &spec,
            InitScheme::Uniform,
            &mut SeededRng::new(9, StreamLabel::Init),
        )
        .unwrap();
        let mut frozen = net.clone();
        frozen.set_frozen(0, true).unwrap();
        frozen.set_frozen(1, true).unwrap();
        let x = Matrix::filled(4, 3, 0.25);
        let a = forward(&net, &x).unwrap();
        let b = forward(&frozen, &x).unwrap();
        assert!(a.prediction().bitwise_eq(b.prediction()));
    }
}
