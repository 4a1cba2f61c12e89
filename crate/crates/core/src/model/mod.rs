//! Layer stacks and the forward pass.
//!
//! A [`Network`] is a list of hidden layers followed by a dense logistic
//! output layer. Hidden layers are dense, convolutional or max-pool.

mod activation;
pub mod checkpoint;
pub mod conv;
mod forward;

use serde::{Deserialize, Serialize};

pub(crate) use activation::logistic;
pub use activation::ActivationKind;
pub use conv::{ConvGeometry, Padding, PoolGeometry, PoolMask, Shape};
pub use forward::{forward, forward_with_dropout, ForwardTrace, LayerTrace};

use crate::error::{Error, Result};
use crate::tensor::{checksum_all, sample_uniform, Matrix, Real, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Dense {
        units: usize,
    },
    Conv {
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    },
    MaxPool {
        window: (usize, usize),
        stride: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: ActivationKind,
    /// Frozen layers keep their parameters through optimizer steps.
    pub frozen: bool,
}

impl LayerSpec {
    pub fn dense(units: usize, activation: ActivationKind) -> Self {
        Self {
            kind: LayerKind::Dense { units },
            activation,
            frozen: false,
        }
    }

    pub fn conv(
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        activation: ActivationKind,
    ) -> Self {
        Self {
            kind: LayerKind::Conv {
                filters,
                kernel,
                stride,
                padding,
            },
            activation,
            frozen: false,
        }
    }

    pub fn max_pool(window: (usize, usize), stride: usize) -> Self {
        Self {
            kind: LayerKind::MaxPool { window, stride },
            activation: ActivationKind::Identity,
            frozen: false,
        }
    }

    pub fn frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn has_params(&self) -> bool {
        !matches!(self.kind, LayerKind::MaxPool { .. })
    }
}

/// Architecture without parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub hidden: Vec<LayerSpec>,
    pub outputs: usize,
}

impl NetworkSpec {
    /// Fully connected stack of equally activated hidden layers.
    pub fn dense(
        inputs: usize,
        widths: &[usize],
        activation: ActivationKind,
        outputs: usize,
    ) -> Self {
        Self {
            input: Shape::flat(inputs),
            hidden: widths
                .iter()
                .map(|&w| LayerSpec::dense(w, activation))
                .collect(),
            outputs,
        }
    }

    /// Three conv blocks (96, 128, 256 filters of 5x5, stride 1, same
    /// padding), each followed by a 3x3 stride-2 max-pool, then two dense
    /// layers of 2048 units.
    pub fn cifar_conv(activation: ActivationKind, outputs: usize) -> Self {
        Self::conv_stack(
            Shape::new(3, 32, 32),
            &[96, 128, 256],
            (5, 5),
            ((3, 3), 2),
            &[2048, 2048],
            activation,
            outputs,
        )
    }

    /// Generic `[conv -> pool]* -> dense*` stack, used for the CIFAR model and
    /// its miniature test versions.
    pub fn conv_stack(
        input: Shape,
        filters: &[usize],
        kernel: (usize, usize),
        pool: ((usize, usize), usize),
        dense: &[usize],
        activation: ActivationKind,
        outputs: usize,
    ) -> Self {
        let mut hidden = Vec::new();
        for &f in filters {
            hidden.push(LayerSpec::conv(f, kernel, 1, Padding::Same, activation));
            hidden.push(LayerSpec::max_pool(pool.0, pool.1));
        }
        hidden.extend(dense.iter().map(|&w| LayerSpec::dense(w, activation)));
        Self {
            input,
            hidden,
            outputs,
        }
    }

    pub fn uses_relu(&self) -> bool {
        self.hidden
            .iter()
            .any(|l| l.activation == ActivationKind::Relu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Dense,
    Conv(ConvGeometry),
    Pool(PoolGeometry),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Real = f64> {
    pub weights: Matrix<T>,
    /// Column vector, one entry per unit or filter.
    pub bias: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct Layer<T: Real = f64> {
    pub(crate) spec: LayerSpec,
    pub(crate) input: Shape,
    pub(crate) output: Shape,
    pub(crate) geometry: Geometry,
    pub(crate) params: Option<Params<T>>,
}

impl<T: Real> Layer<T> {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }
    pub fn activation(&self) -> ActivationKind {
        self.spec.activation
    }
    pub fn input_shape(&self) -> Shape {
        self.input
    }
    pub fn output_shape(&self) -> Shape {
        self.output
    }
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }
    pub fn params(&self) -> Option<&Params<T>> {
        self.params.as_ref()
    }
    pub fn is_frozen(&self) -> bool {
        self.spec.frozen
    }
    /// Number of inputs feeding one output unit.
    pub fn fan_in(&self) -> Option<usize> {
        match self.geometry {
            Geometry::Dense => Some(self.input.size()),
            Geometry::Conv(g) => Some(g.patch_len()),
            Geometry::Pool(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// All weights and biases exactly zero.
    Zero,
    /// Weights and biases uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform,
}

/// Ordered layer stack; the last layer is the dense logistic output.
#[derive(Debug, Clone)]
pub struct Network<T: Real = f64> {
    input: Shape,
    layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    /// Builds the stack with all parameters zero.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        if spec.outputs == 0 || spec.input.size() == 0 {
            return Err(Error::invalid("network needs inputs and outputs"));
        }
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut shape = spec.input;
        let output_layer = LayerSpec::dense(spec.outputs, ActivationKind::Logistic);
        for ls in spec.hidden.iter().chain(std::iter::once(&output_layer)) {
            let (geometry, out, params) = match ls.kind {
                LayerKind::Dense { units } => {
                    if units == 0 {
                        return Err(Error::invalid("dense layer with zero units"));
                    }
                    (
                        Geometry::Dense,
                        Shape::flat(units),
                        Some((units, shape.size())),
                    )
                }
                LayerKind::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let g = ConvGeometry::new(shape, filters, kernel, stride, padding)?;
                    (
                        Geometry::Conv(g),
                        g.output(),
                        Some((filters, g.patch_len())),
                    )
                }
                LayerKind::MaxPool { window, stride } => {
                    if ls.activation != ActivationKind::Identity {
                        return Err(Error::invalid("max-pool layers use identity activation"));
                    }
                    let g = PoolGeometry::new(shape, window, stride)?;
                    (Geometry::Pool(g), g.output(), None)
                }
            };
            layers.push(Layer {
                spec: *ls,
                input: shape,
                output: out,
                geometry,
                params: params.map(|(rows, cols)| Params {
                    weights: Matrix::zeros(rows, cols),
                    bias: Matrix::zeros(rows, 1),
                }),
            });
            shape = out;
        }
        Ok(Self {
            input: spec.input,
            layers,
        })
    }

    pub fn spec(&self) -> NetworkSpec {
        let n = self.layers.len() - 1;
        NetworkSpec {
            input: self.input,
            hidden: self.layers[..n].iter().map(|l| l.spec).collect(),
            outputs: self.output_dim(),
        }
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn input_dim(&self) -> usize {
        self.input.size()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("output layer").output.size()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer<T> {
        &self.layers[i]
    }

    /// Hidden layers plus the output layer.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hidden_len(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn output_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn params(&self, i: usize) -> Option<&Params<T>> {
        self.layers.get(i).and_then(|l| l.params.as_ref())
    }

    pub fn params_mut(&mut self, i: usize) -> Option<&mut Params<T>> {
        self.layers.get_mut(i).and_then(|l| l.params.as_mut())
    }

    /// Replaces one layer's parameters, checking shapes.
    pub fn set_params(&mut self, i: usize, params: Params<T>) -> Result<()> {
        let slot = self
            .params_mut(i)
            .ok_or_else(|| Error::invalid(format!("layer {i} has no parameters")))?;
        if slot.weights.shape() != params.weights.shape() {
            return Err(Error::shape(
                "set_params",
                slot.weights.shape(),
                params.weights.shape(),
            ));
        }
        if slot.bias.shape() != params.bias.shape() {
            return Err(Error::shape(
                "set_params",
                slot.bias.shape(),
                params.bias.shape(),
            ));
        }
        *slot = params;
        Ok(())
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.layers[i].spec.frozen
    }

    pub fn set_frozen(&mut self, i: usize, frozen: bool) -> Result<()> {
        let n = self.layers.len();
        let layer = self
            .layers
            .get_mut(i)
            .ok_or_else(|| Error::invalid(format!("layer {i} out of range (network has {n})")))?;
        layer.spec.frozen = frozen;
        Ok(())
    }

    /// Indices of layers carrying weights, bottom to top.
    pub fn parametric_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.params.is_some())
            .map(|(i, _)| i)
    }

    /// Hidden layers whose output is a block output: dense layers, pools,
    /// and convolutions not immediately followed by a pool. Direct feedback
    /// is injected and dropout is applied at these points.
    pub fn block_outputs(&self) -> Vec<usize> {
        (0..self.hidden_len())
            .filter(|&i| match self.layers[i].geometry {
                Geometry::Dense | Geometry::Pool(_) => true,
                Geometry::Conv(_) => !matches!(self.layers[i + 1].geometry, Geometry::Pool(_)),
            })
            .collect()
    }

    pub fn all_dense(&self) -> bool {
        self.layers.iter().all(|l| l.geometry == Geometry::Dense)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    fn param_matrices(&self, hidden_only: bool) -> impl Iterator<Item = &Matrix<T>> {
        let n = if hidden_only {
            self.hidden_len()
        } else {
            self.layers.len()
        };
        self.layers[..n]
            .iter()
            .filter_map(|l| l.params.as_ref())
            .flat_map(|p| [&p.weights, &p.bias])
    }

    /// Checksum over every parameter.
    pub fn checksum(&self) -> String {
        checksum_all(self.param_matrices(false))
    }

    /// Checksum over hidden-layer parameters only.
    pub fn hidden_checksum(&self) -> String {
        checksum_all(self.param_matrices(true))
    }

    /// True when every hidden weight and bias is exactly zero.
    pub fn hidden_params_zero(&self) -> bool {
        self.param_matrices(true).all(|m| m.is_zero())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input: self.input,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    input: l.input,
                    output: l.output,
                    geometry: l.geometry,
                    params: l.params.as_ref().map(|p| Params {
                        weights: p.weights.cast(),
                        bias: p.bias.cast(),
                    }),
                })
                .collect(),
        }
    }
}

/// Builds and initializes a network.
///
/// Zero initialization is refused for ReLU networks: with zero incoming
/// weights and bias a ReLU unit has zero derivative and never trains.
pub fn init_network<T: Real>(
    spec: &NetworkSpec,
    scheme: InitScheme,
    rng: &mut SeededRng,
) -> Result<Network<T>> {
    if scheme == InitScheme::Zero && spec.uses_relu() {
        return Err(Error::invalid(
            "zero initialization with ReLU hidden units: the error derivative of a ReLU unit \
             with all-zero incoming weights and bias is zero, so it can never train",
        ));
    }
    let mut net = Network::zeros(spec)?;
    if scheme == InitScheme::Uniform {
        for layer in &mut net.layers {
            let Some(fan_in) = layer.fan_in() else {
                continue;
            };
            let limit = 1.0 / (fan_in as f64).sqrt();
            let p = layer.params.as_mut().expect("parametric layer");
            p.weights = sample_uniform(p.weights.rows(), p.weights.cols(), limit, rng)?;
            p.bias = sample_uniform(p.bias.rows(), 1, limit, rng)?;
        }
    }
    Ok(net)
}
