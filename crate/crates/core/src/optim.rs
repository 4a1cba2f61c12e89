//! Plain SGD and RMSprop applied to [`UpdateDirections`].
//!
//! Frozen layers are skipped by both rules; their RMSprop accumulators stay
//! untouched as well.

use serde::{Deserialize, Serialize};

use crate::credit::UpdateDirections;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::{Matrix, Real};

pub const DEFAULT_RHO: f64 = 0.99;
pub const DEFAULT_RMS_EPSILON: f64 = 1e-8;

fn layer_grads<'a, T: Real>(
    net: &Network<T>,
    upd: &'a UpdateDirections<T>,
    i: usize,
) -> Result<(&'a Matrix<T>, &'a Matrix<T>)> {
    let u = upd
        .layer(i)
        .ok_or_else(|| Error::invalid(format!("no update direction for parametric layer {i}")))?;
    let p = net.params(i).expect("parametric layer");
    if u.grad_w.shape() != p.weights.shape() {
        return Err(Error::shape(
            "optimizer step",
            p.weights.shape(),
            u.grad_w.shape(),
        ));
    }
    if u.grad_b.shape() != p.bias.shape() {
        return Err(Error::shape(
            "optimizer step",
            p.bias.shape(),
            u.grad_b.shape(),
        ));
    }
    Ok((&u.grad_w, &u.grad_b))
}

fn check_layers<T: Real>(net: &Network<T>, upd: &UpdateDirections<T>) -> Result<()> {
    if upd.layers.len() != net.len() {
        return Err(Error::invalid(format!(
            "update covers {} layers, network has {}",
            upd.layers.len(),
            net.len()
        )));
    }
    Ok(())
}

/// `p <- p - lr * g` for every non-frozen parametric layer.
pub fn sgd_step<T: Real>(net: &mut Network<T>, upd: &UpdateDirections<T>, lr: f64) -> Result<()> {
    check_layers(net, upd)?;
    let lr = T::from_f64(lr);
    let layers: Vec<usize> = net.parametric_layers().collect();
    for i in &layers {
        layer_grads(net, upd, *i)?;
    }
    for i in layers {
        if net.is_frozen(i) {
            continue;
        }
        let (gw, gb) = layer_grads(net, upd, i)?;
        let (gw, gb) = (gw.clone(), gb.clone());
        let p = net.params_mut(i).expect("parametric layer");
        p.weights.axpy(-lr, &gw)?;
        p.bias.axpy(-lr, &gb)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsConfig {
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl RmsConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_RMS_EPSILON,
        }
    }
}

/// Running mean-square accumulators, one pair per parametric layer, with
/// shapes fixed at construction.
#[derive(Debug, Clone)]
pub struct RmsState<T: Real = f64> {
    config: RmsConfig,
    acc: Vec<Option<(Matrix<T>, Matrix<T>)>>,
}

impl<T: Real> RmsState<T> {
    pub fn new(net: &Network<T>, config: RmsConfig) -> Result<Self> {
        if !(config.lr >= 0.0 && config.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} is not valid",
                config.lr
            )));
        }
        if !(0.0..1.0).contains(&config.rho) || !(config.epsilon > 0.0) {
            return Err(Error::invalid(
                "RMSprop needs rho in [0, 1) and epsilon > 0",
            ));
        }
        let acc = net
            .layers()
            .iter()
            .map(|l| {
                l.params().map(|p| {
                    (
                        Matrix::zeros(p.weights.rows(), p.weights.cols()),
                        Matrix::zeros(p.bias.rows(), 1),
                    )
                })
            })
            .collect();
        Ok(Self { config, acc })
    }

    pub fn config(&self) -> RmsConfig {
        self.config
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Multiplies the learning rate by `factor`, once per epoch.
    pub fn decay_lr(&mut self, factor: f64) {
        self.config.lr *= factor;
    }

    /// Accumulators of layer `i`: `(weights, bias)`.
    pub fn accumulator(&self, i: usize) -> Option<(&Matrix<T>, &Matrix<T>)> {
        self.acc
            .get(i)
            .and_then(|a| a.as_ref())
            .map(|(w, b)| (w, b))
    }

    /// Smallest accumulator entry over all layers.
    pub fn min_accumulator(&self) -> f64 {
        self.acc
            .iter()
            .flatten()
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.as_slice()))
            .map(|v| v.to_f64())
            .fold(f64::INFINITY, f64::min)
    }
}

/// `s <- rho s + (1 - rho) g²`, `p <- p - lr g / (sqrt(s) + eps)`.
fn rms_update<T: Real>(p: &mut Matrix<T>, s: &mut Matrix<T>, g: &Matrix<T>, c: &RmsConfig) {
    let rho = T::from_f64(c.rho);
    let one_minus = T::from_f64(1.0 - c.rho);
    let lr = T::from_f64(c.lr);
    let eps = T::from_f64(c.epsilon);
    for ((pv, sv), &gv) in p
        .as_mut_slice()
        .iter_mut()
        .zip(s.as_mut_slice())
        .zip(g.as_slice())
    {
        *sv = rho * *sv + one_minus * gv * gv;
        *pv -= lr * gv / (sv.sqrt() + eps);
    }
}

/// One RMSprop step over every non-frozen parametric layer.
pub fn rmsprop_step<T: Real>(
    state: &mut RmsState<T>,
    net: &mut Network<T>,
    upd: &UpdateDirections<T>,
) -> Result<()> {
    check_layers(net, upd)?;
    if state.acc.len() != net.len() {
        return Err(Error::invalid(
            "RMSprop state belongs to a different network",
        ));
    }
    let layers: Vec<usize> = net.parametric_layers().collect();
    for &i in &layers {
        let (gw, gb) = layer_grads(net, upd, i)?;
        let (sw, sb) = state.acc[i]
            .as_ref()
            .ok_or_else(|| Error::invalid("RMSprop state belongs to a different network"))?;
        if sw.shape() != gw.shape() || sb.shape() != gb.shape() {
            return Err(Error::shape("rmsprop_step", sw.shape(), gw.shape()));
        }
    }
    let config = state.config;
    for i in layers {
        if net.is_frozen(i) {
            continue;
        }
        let u = upd.layer(i).expect("checked above");
        let (sw, sb) = state.acc[i].as_mut().expect("checked above");
        let p = net.params_mut(i).expect("parametric layer");
        rms_update(&mut p.weights, sw, &u.grad_w, &config);
        rms_update(&mut p.bias, sb, &u.grad_b, &config);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credit::LayerUpdate;
    use crate::model::{ActivationKind, NetworkSpec, Params};
    use crate::tensor::{sample_uniform, SeededRng, StreamLabel};
    use proptest::prelude::*;

    /// One input, one hidden unit, one output: every matrix is 1x1.
    fn scalar_net(w: f64) -> Network {
        let spec = NetworkSpec::dense(1, &[1], ActivationKind::Tanh, 1);
        let mut net = Network::zeros(&spec).unwrap();
        for i in 0..2 {
            net.set_params(
                i,
                Params {
                    weights: Matrix::filled(1, 1, w),
                    bias: Matrix::filled(1, 1, w),
                },
            )
            .unwrap();
        }
        net
    }

    fn grads_like(net: &Network, f: impl Fn(usize, usize) -> f64) -> UpdateDirections {
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.params().map(|p| {
                    let mut gw = p.weights.clone();
                    for (k, v) in gw.as_mut_slice().iter_mut().enumerate() {
                        *v = f(i, k);
                    }
                    let mut gb = p.bias.clone();
                    for (k, v) in gb.as_mut_slice().iter_mut().enumerate() {
                        *v = f(i, 1000 + k);
                    }
                    LayerUpdate {
                        delta_h: Matrix::zeros(1, 1),
                        delta_a: Matrix::zeros(1, 1),
                        grad_w: gw,
                        grad_b: gb,
                    }
                })
            })
            .collect();
        UpdateDirections {
            error: Matrix::zeros(1, 1),
            layers,
        }
    }

    #[test]
    fn sgd_zero_gradient_keeps_params() {
        let mut net = scalar_net(0.3);
        let before = net.checksum();
        let g = grads_like(&net, |_, _| 0.0);
        sgd_step(&mut net, &g, 0.5).unwrap();
        assert_eq!(net.checksum(), before);
    }

    #[test]
    fn sgd_hand_step() {
        let mut net = scalar_net(1.0);
        let g = grads_like(&net, |_, _| 2.0);
        sgd_step(&mut net, &g, 0.5).unwrap();
        assert_eq!(net.params(0).unwrap().weights.get(0, 0), 0.0);
        assert_eq!(net.params(1).unwrap().bias.get(0, 0), 0.0);
    }

    #[test]
    fn frozen_layer_untouched() {
        let mut net = scalar_net(1.0);
        net.set_frozen(0, true).unwrap();
        let g = grads_like(&net, |_, _| 2.0);
        sgd_step(&mut net, &g, 0.5).unwrap();
        assert_eq!(net.params(0).unwrap().weights.get(0, 0), 1.0);
        assert_eq!(net.params(1).unwrap().weights.get(0, 0), 0.0);
        let mut s = RmsState::new(&net, RmsConfig::new(0.1)).unwrap();
        rmsprop_step(&mut s, &mut net, &g).unwrap();
        assert_eq!(net.params(0).unwrap().weights.get(0, 0), 1.0);
        assert!(s.accumulator(0).unwrap().0.is_zero());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut net = scalar_net(1.0);
        let mut g = grads_like(&net, |_, _| 1.0);
        g.layers[0].as_mut().unwrap().grad_w = Matrix::zeros(2, 1);
        assert!(sgd_step(&mut net, &g, 0.1).is_err());
        let mut s = RmsState::new(&net, RmsConfig::new(0.1)).unwrap();
        assert!(rmsprop_step(&mut s, &mut net, &g).is_err());
        // nothing was applied before the error
        assert_eq!(net.params(1).unwrap().weights.get(0, 0), 1.0);
    }

    #[test]
    fn rms_zero_gradient_from_zero_state() {
        let mut net = scalar_net(0.7);
        let before = net.checksum();
        let mut s = RmsState::new(&net, RmsConfig::new(1e-3)).unwrap();
        let g = grads_like(&net, |_, _| 0.0);
        rmsprop_step(&mut s, &mut net, &g).unwrap();
        assert_eq!(net.checksum(), before);
    }

    #[test]
    fn rms_first_step_closed_form() {
        let mut net = scalar_net(0.0);
        let mut s = RmsState::new(&net, RmsConfig::new(1e-3)).unwrap();
        let g = grads_like(&net, |_, _| 1.0);
        rmsprop_step(&mut s, &mut net, &g).unwrap();
        let dp = net.params(0).unwrap().weights.get(0, 0);
        let expected = -1e-3 / (0.01f64.sqrt() + 1e-8);
        assert!((dp - expected).abs() < 1e-15);
        assert!((dp + 0.01).abs() < 1e-8);
    }

    #[test]
    fn rms_constant_gradient_step_tends_to_lr() {
        let mut net = scalar_net(0.0);
        let lr = 1e-3;
        let mut s = RmsState::new(&net, RmsConfig::new(lr)).unwrap();
        let g = grads_like(&net, |_, _| 3.0);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = net.params(0).unwrap().weights.get(0, 0);
            rmsprop_step(&mut s, &mut net, &g).unwrap();
            last = before - net.params(0).unwrap().weights.get(0, 0);
        }
        assert!((last - lr).abs() < 1e-9, "{last}");
    }

    #[test]
    fn decay_multiplies_rate() {
        let net = scalar_net(0.0);
        let mut s: RmsState = RmsState::new(&net, RmsConfig::new(1.0)).unwrap();
        s.decay_lr(0.99);
        s.decay_lr(0.99);
        assert!((s.lr() - 0.9801).abs() < 1e-15);
        assert!(RmsState::new(
            &net,
            RmsConfig {
                rho: 1.0,
                ..RmsConfig::new(1.0)
            }
        )
        .is_err());
    }

    fn random_net(seed: u64) -> Network {
        let spec = NetworkSpec::dense(4, &[3], ActivationKind::Tanh, 2);
        crate::model::init_network(
            &spec,
            crate::model::InitScheme::Uniform,
            &mut SeededRng::new(seed, StreamLabel::Init),
        )
        .unwrap()
    }

    fn random_grads(net: &Network, rng: &mut SeededRng, scale: f64) -> UpdateDirections {
        let g = sample_uniform::<f64>(1, 100, 1.0, rng).unwrap();
        grads_like(net, |i, k| scale * g.as_slice()[(i * 31 + k % 97) % 100])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn first_step_scales_sublinearly(seed in 0u64..10_000) {
            let base = random_net(seed);
            let mut rng = SeededRng::new(seed, StreamLabel::Shuffle);
            let g = random_grads(&base, &mut rng, 1.0);
            let mut g10 = g.clone();
            g10.scale_grads(10.0);
            let step = |g: &UpdateDirections| {
                let mut net = base.clone();
                let mut s = RmsState::new(&net, RmsConfig::new(1e-3)).unwrap();
                rmsprop_step(&mut s, &mut net, g).unwrap();
                let p0 = base.params(0).unwrap().weights.as_slice().to_vec();
                let p1 = net.params(0).unwrap().weights.as_slice().to_vec();
                p0.iter().zip(&p1).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max)
            };
            let (a, b) = (step(&g), step(&g10));
            prop_assume!(a > 0.0);
            prop_assert!(b / a < 10.0, "ratio {}", b / a);
        }

        #[test]
        fn rmsprop_is_deterministic(seed in 0u64..10_000) {
            let base = random_net(seed);
            let mut rng = SeededRng::new(seed, StreamLabel::Shuffle);
            let g = random_grads(&base, &mut rng, 1.0);
            let run = || {
                let mut net = base.clone();
                let mut s = RmsState::new(&net, RmsConfig::new(1e-2)).unwrap();
                rmsprop_step(&mut s, &mut net, &g).unwrap();
                rmsprop_step(&mut s, &mut net, &g).unwrap();
                net.checksum()
            };
            prop_assert_eq!(run(), run());
        }
    }

    #[test]
    fn accumulators_stay_non_negative() {
        let mut net = random_net(3);
        let mut s = RmsState::new(&net, RmsConfig::new(1e-4)).unwrap();
        let mut rng = SeededRng::new(9, StreamLabel::Shuffle);
        for step in 0..10_000 {
            let scale = if step % 7 == 0 { 1e-6 } else { 5.0 };
            let g = random_grads(&net, &mut rng, scale);
            rmsprop_step(&mut s, &mut net, &g).unwrap();
            assert!(s.min_accumulator() >= 0.0);
        }
    }
}
