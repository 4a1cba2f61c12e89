//! Loss, output error and the four credit-assignment rules.
//!
//! Every rule maps `(network, forward trace, output error)` to
//! [`UpdateDirections`]: a direction `δa_i` for each parametric layer plus
//! the batch-averaged parameter gradients `δa_i * inputᵀ / N` and
//! `mean(δa_i)` for the bias.

mod backward;
mod feedback;
mod loss;

pub use backward::{
    backward_bp, backward_bp_with_direct, backward_dfa, backward_fa, backward_ifa, input_gradient,
    LayerUpdate, UpdateDirections,
};
pub use feedback::{init_feedback, FeedbackWeights, Method};
pub use loss::{compute_loss, output_error, output_error_from_logits};

use crate::error::Result;
use crate::model::{ForwardTrace, Network};
use crate::tensor::{Matrix, Real, SeededRng};

/// A credit-assignment strategy.
pub trait CreditAssignment<T: Real> {
    fn method(&self) -> Method;

    fn backward(
        &self,
        net: &Network<T>,
        trace: &ForwardTrace<T>,
        e: &Matrix<T>,
    ) -> Result<UpdateDirections<T>>;
}

/// One of the four rules together with its fixed feedback.
///
/// `direct_layers` switches individual hidden layers of a BP run to direct
/// feedback; it is empty except in mixed experiments.
#[derive(Debug, Clone)]
pub struct Credit<T: Real = f64> {
    feedback: FeedbackWeights<T>,
    direct_layers: Vec<usize>,
}

impl<T: Real> Credit<T> {
    pub fn new(
        method: Method,
        net: &Network<T>,
        rng: &mut SeededRng,
        shared: bool,
    ) -> Result<Self> {
        Ok(Self {
            feedback: init_feedback(method, net, rng, shared)?,
            direct_layers: Vec::new(),
        })
    }

    pub fn from_feedback(feedback: FeedbackWeights<T>) -> Self {
        Self {
            feedback,
            direct_layers: Vec::new(),
        }
    }

    /// BP for all layers except `direct`, which use `dfa_feedback`.
    pub fn bp_with_direct(dfa_feedback: FeedbackWeights<T>, direct: Vec<usize>) -> Self {
        Self {
            feedback: dfa_feedback,
            direct_layers: direct,
        }
    }

    pub fn feedback(&self) -> &FeedbackWeights<T> {
        &self.feedback
    }

    pub fn direct_layers(&self) -> &[usize] {
        &self.direct_layers
    }
}

impl<T: Real> CreditAssignment<T> for Credit<T> {
    fn method(&self) -> Method {
        if self.direct_layers.is_empty() {
            self.feedback.method()
        } else {
            Method::Bp
        }
    }

    fn backward(
        &self,
        net: &Network<T>,
        trace: &ForwardTrace<T>,
        e: &Matrix<T>,
    ) -> Result<UpdateDirections<T>> {
        if !self.direct_layers.is_empty() {
            return backward_bp_with_direct(net, &self.feedback, trace, e, &self.direct_layers);
        }
        match self.feedback.method() {
            Method::Bp => backward_bp(net, trace, e),
            Method::Fa => backward_fa(net, &self.feedback, trace, e),
            Method::Dfa => backward_dfa(net, &self.feedback, trace, e),
            Method::Ifa => backward_ifa(net, &self.feedback, trace, e),
        }
    }
}
