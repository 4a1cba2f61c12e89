use super::feedback::{FeedbackWeights, Method};
use crate::error::{Error, Result};
use crate::model::conv::{
    conv_input_delta, conv_input_delta_transposed, conv_param_grads, maxpool_backward,
};
use crate::model::{ForwardTrace, Geometry, Network};
use crate::tensor::{Matrix, Real};

/// Update direction and gradients for one parametric layer.
#[derive(Debug, Clone)]
pub struct LayerUpdate<T: Real = f64> {
    /// Direction on the layer's activation `h_i` (for the output layer, `e`).
    pub delta_h: Matrix<T>,
    /// `δa_i = δh_i ⊙ f'(a_i)`.
    pub delta_a: Matrix<T>,
    /// Batch-averaged `δa_i * inputᵀ`; the optimizer subtracts it.
    pub grad_w: Matrix<T>,
    /// Batch-averaged `δa_i` (summed over positions for convolutions).
    pub grad_b: Matrix<T>,
}

/// Per-layer update directions for one mini-batch. Entries are `None` for
/// layers without parameters.
#[derive(Debug, Clone)]
pub struct UpdateDirections<T: Real = f64> {
    pub error: Matrix<T>,
    pub layers: Vec<Option<LayerUpdate<T>>>,
}

impl<T: Real> UpdateDirections<T> {
    pub fn layer(&self, i: usize) -> Option<&LayerUpdate<T>> {
        self.layers.get(i).and_then(|l| l.as_ref())
    }

    /// True when every direction and gradient is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|u| u.delta_a.is_zero() && u.grad_w.is_zero() && u.grad_b.is_zero())
    }

    /// Scales every gradient, used to average several passes.
    pub fn scale_grads(&mut self, s: T) {
        for u in self.layers.iter_mut().flatten() {
            u.grad_w.scale_assign(s);
            u.grad_b.scale_assign(s);
        }
    }

    /// Adds another pass's gradients into this one.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::invalid("accumulating updates of different networks"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.grad_w.add_assign(&b.grad_w)?;
                a.grad_b.add_assign(&b.grad_b)?;
            }
        }
        Ok(())
    }
}

/// Where a hidden layer's direction comes from in the top-down pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Source {
    /// Transposed forward weights of the layer above.
    Backprop,
    /// Fixed random matrix standing in for the layer above's transpose.
    Chain,
    /// Fixed random projection of the output error.
    Direct,
}

pub(crate) fn check_trace<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
) -> Result<()> {
    if trace.layers.len() != net.len() {
        return Err(Error::invalid(format!(
            "trace has {} layers, network has {}",
            trace.layers.len(),
            net.len()
        )));
    }
    let n = trace.batch_size();
    if trace.input.rows() != net.input_dim() {
        return Err(Error::shape(
            "backward",
            trace.input.shape(),
            (net.input_dim(), n),
        ));
    }
    for (l, t) in net.layers().iter().zip(&trace.layers) {
        let want = (l.output_shape().size(), n);
        if t.pre.shape() != want {
            return Err(Error::shape("backward", t.pre.shape(), want));
        }
    }
    if e.shape() != (net.output_dim(), n) {
        return Err(Error::shape("backward", e.shape(), (net.output_dim(), n)));
    }
    Ok(())
}

fn require_method<T: Real>(fb: &FeedbackWeights<T>, want: Method) -> Result<()> {
    if fb.method() != want {
        return Err(Error::invalid(format!(
            "feedback built for {}, used with {want}",
            fb.method()
        )));
    }
    Ok(())
}

/// Parameter gradients of layer `i` from its `δa`.
fn param_grads<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    i: usize,
    delta_a: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let layer = net.layer(i);
    let input = trace.layer_input(i);
    let inv_n = T::ONE / T::from_f64(trace.batch_size() as f64);
    match layer.geometry() {
        Geometry::Dense => {
            let w = &layer.params().expect("dense params").weights;
            let mut gw = Matrix::zeros(w.rows(), w.cols());
            gw.add_matmul_nt(inv_n, delta_a, input)?;
            Ok((gw, delta_a.row_mean()))
        }
        Geometry::Conv(g) => {
            let (mut gw, mut gb) = conv_param_grads(g, input, delta_a)?;
            gw.scale_assign(inv_n);
            gb.scale_assign(inv_n);
            Ok((gw, gb))
        }
        Geometry::Pool(_) => unreachable!("pool layers carry no parameters"),
    }
}

/// Direction on the output of layer `i` carried down from layer `i + 1`.
fn transport<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    i: usize,
    above_delta_a: &Matrix<T>,
    feedback: Option<&Matrix<T>>,
) -> Result<Matrix<T>> {
    let above = net.layer(i + 1);
    match (above.geometry(), feedback) {
        (Geometry::Pool(g), _) => {
            let mask = trace.layers[i + 1]
                .pool_mask
                .as_ref()
                .ok_or_else(|| Error::invalid("trace is missing a pool mask"))?;
            maxpool_backward(g, mask, above_delta_a)
        }
        (Geometry::Dense, None) => above
            .params()
            .expect("dense params")
            .weights
            .matmul_tn(above_delta_a),
        (Geometry::Dense, Some(b)) => b.matmul(above_delta_a),
        (Geometry::Conv(g), None) => conv_input_delta_transposed(
            g,
            &above.params().expect("conv params").weights,
            above_delta_a,
        ),
        (Geometry::Conv(g), Some(b)) => conv_input_delta(g, b, above_delta_a),
    }
}

/// `δh` on the undropped activation, then `δa = δh ⊙ f'(a)`.
fn finish_layer<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    i: usize,
    mut delta_out: Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let t = &trace.layers[i];
    if let Some(d) = &t.dropout {
        d.backward(&mut delta_out)?;
    }
    let mut delta_a = delta_out.clone();
    net.layer(i)
        .activation()
        .mask_inplace(&mut delta_a, &t.pre, &t.post);
    Ok((delta_out, delta_a))
}

/// Top-down pass shared by BP, FA and DFA (and mixtures of them).
///
/// With `to_input`, also returns the exact gradient with respect to the
/// network input; that path is only meaningful when every source is
/// `Backprop`.
pub(crate) fn top_down<T: Real>(
    net: &Network<T>,
    fb: Option<&FeedbackWeights<T>>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
    source: impl Fn(usize) -> Source,
    to_input: bool,
) -> Result<(UpdateDirections<T>, Option<Matrix<T>>)> {
    check_trace(net, trace, e)?;
    let top = net.output_index();
    let mut layers: Vec<Option<LayerUpdate<T>>> = vec![None; net.len()];

    let (grad_w, grad_b) = param_grads(net, trace, top, e)?;
    layers[top] = Some(LayerUpdate {
        delta_h: e.clone(),
        delta_a: e.clone(),
        grad_w,
        grad_b,
    });

    // δa of the layer directly above the one being processed
    let mut above = e.clone();
    for i in (0..top).rev() {
        let below_pool = matches!(net.layer(i + 1).geometry(), Geometry::Pool(_));
        let delta_out = if below_pool {
            transport(net, trace, i, &above, None)?
        } else {
            match source(i) {
                Source::Backprop => transport(net, trace, i, &above, None)?,
                Source::Chain => {
                    let b = fb.and_then(|f| f.for_layer(i)).ok_or_else(|| {
                        Error::invalid(format!("no feedback matrix for layer {i}"))
                    })?;
                    transport(net, trace, i, &above, Some(b))?
                }
                Source::Direct => {
                    let b = fb.and_then(|f| f.for_layer(i)).ok_or_else(|| {
                        Error::invalid(format!("no feedback matrix for layer {i}"))
                    })?;
                    b.matmul(e)?
                }
            }
        };
        let (delta_h, delta_a) = finish_layer(net, trace, i, delta_out)?;
        if net.layer(i).params().is_some() {
            let (grad_w, grad_b) = param_grads(net, trace, i, &delta_a)?;
            layers[i] = Some(LayerUpdate {
                delta_h,
                delta_a: delta_a.clone(),
                grad_w,
                grad_b,
            });
        }
        above = delta_a;
    }

    let input_grad = if to_input {
        let first = net.layer(0);
        let mut d = match first.geometry() {
            Geometry::Dense => first.params().expect("dense").weights.matmul_tn(&above)?,
            Geometry::Conv(g) => {
                conv_input_delta_transposed(g, &first.params().expect("conv").weights, &above)?
            }
            Geometry::Pool(g) => {
                let mask = trace.layers[0]
                    .pool_mask
                    .as_ref()
                    .ok_or_else(|| Error::invalid("trace is missing a pool mask"))?;
                maxpool_backward(g, mask, &above)?
            }
        };
        if let Some(drop) = &trace.input_dropout {
            drop.backward(&mut d)?;
        }
        Some(d)
    } else {
        None
    };

    Ok((
        UpdateDirections {
            error: e.clone(),
            layers,
        },
        input_grad,
    ))
}

/// Back-propagation: every hidden direction chains through `Wᵀ` of the
/// layer above.
pub fn backward_bp<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
) -> Result<UpdateDirections<T>> {
    Ok(top_down(net, None, trace, e, |_| Source::Backprop, false)?.0)
}

/// Feedback alignment: as BP, with each `Wᵀ` replaced by its fixed random `B_i`.
pub fn backward_fa<T: Real>(
    net: &Network<T>,
    fb: &FeedbackWeights<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
) -> Result<UpdateDirections<T>> {
    require_method(fb, Method::Fa)?;
    Ok(top_down(net, Some(fb), trace, e, |_| Source::Chain, false)?.0)
}

/// Direct feedback alignment: every block output receives `B_i e`. Inside a
/// conv block the injected direction is routed through the pool mask and
/// the activation derivative to the kernel; nothing crosses block borders.
pub fn backward_dfa<T: Real>(
    net: &Network<T>,
    fb: &FeedbackWeights<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
) -> Result<UpdateDirections<T>> {
    require_method(fb, Method::Dfa)?;
    Ok(top_down(net, Some(fb), trace, e, |_| Source::Direct, false)?.0)
}

/// Back-propagation everywhere except the listed hidden layers, which take
/// their direction from DFA feedback `B_i e`.
pub fn backward_bp_with_direct<T: Real>(
    net: &Network<T>,
    fb: &FeedbackWeights<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
    direct: &[usize],
) -> Result<UpdateDirections<T>> {
    require_method(fb, Method::Dfa)?;
    Ok(top_down(
        net,
        Some(fb),
        trace,
        e,
        |i| {
            if direct.contains(&i) {
                Source::Direct
            } else {
                Source::Backprop
            }
        },
        false,
    )?
    .0)
}

/// Indirect feedback alignment: `δa_0 = (B_0 e) ⊙ f'(a_0)`, then each higher
/// hidden layer takes `δa_{i+1} = (W_{i+1} δa_i) ⊙ f'(a_{i+1})`.
pub fn backward_ifa<T: Real>(
    net: &Network<T>,
    fb: &FeedbackWeights<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
) -> Result<UpdateDirections<T>> {
    require_method(fb, Method::Ifa)?;
    check_trace(net, trace, e)?;
    if !net.all_dense() {
        return Err(Error::Unsupported(
            "indirect feedback is implemented for fully connected networks only".into(),
        ));
    }
    let top = net.output_index();
    let mut layers: Vec<Option<LayerUpdate<T>>> = vec![None; net.len()];
    let mut below: Option<Matrix<T>> = None;
    for i in 0..top {
        let delta_out = match &below {
            None => fb
                .for_layer(0)
                .ok_or_else(|| Error::invalid("no feedback matrix for layer 0"))?
                .matmul(e)?,
            Some(d) => {
                let mut d = d.clone();
                if let Some(drop) = &trace.layers[i - 1].dropout {
                    drop.backward(&mut d)?;
                }
                net.params(i).expect("dense").weights.matmul(&d)?
            }
        };
        let (delta_h, delta_a) = finish_layer(net, trace, i, delta_out)?;
        let (grad_w, grad_b) = param_grads(net, trace, i, &delta_a)?;
        layers[i] = Some(LayerUpdate {
            delta_h,
            delta_a: delta_a.clone(),
            grad_w,
            grad_b,
        });
        below = Some(delta_a);
    }
    let (grad_w, grad_b) = param_grads(net, trace, top, e)?;
    layers[top] = Some(LayerUpdate {
        delta_h: e.clone(),
        delta_a: e.clone(),
        grad_w,
        grad_b,
    });
    Ok(UpdateDirections {
        error: e.clone(),
        layers,
    })
}

/// Exact `∂J/∂x` for the batch, one column per sample, through the forward
/// weights regardless of any training feedback rule.
pub fn input_gradient<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    e: &Matrix<T>,
) -> Result<Matrix<T>> {
    let (_, grad) = top_down(net, None, trace, e, |_| Source::Backprop, true)?;
    let mut g = grad.expect("requested input gradient");
    g.scale_assign(T::ONE / T::from_f64(trace.batch_size() as f64));
    Ok(g)
}
