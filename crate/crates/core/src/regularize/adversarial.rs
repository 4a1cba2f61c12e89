use crate::credit::{input_gradient, output_error};
use crate::error::{Error, Result};
use crate::model::{forward, Network};
use crate::tensor::{Matrix, Real};

/// Perturbation size used for MNIST when a config does not set one.
pub const DEFAULT_ADV_EPSILON: f64 = 0.25;

/// `clip(x + eps * sign(∂J/∂x), 0, 1)`.
///
/// The input gradient always chains through the transposed forward weights,
/// whatever feedback rule the network is trained with. Inputs must already
/// lie in `[0, 1]`. A zero gradient entry leaves that pixel unchanged.
pub fn fast_sign_adversarial<T: Real>(
    net: &Network<T>,
    x: &Matrix<T>,
    y: &Matrix<T>,
    eps: f64,
) -> Result<Matrix<T>> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!(
            "adversarial epsilon must be finite and non-negative, got {eps}"
        )));
    }
    if x.as_slice()
        .iter()
        .any(|v| !(v.to_f64() >= 0.0 && v.to_f64() <= 1.0))
    {
        return Err(Error::invalid("fast-sign inputs must lie in [0, 1]"));
    }
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let trace = forward(net, x)?;
    let e = output_error(trace.prediction(), y)?;
    let g = input_gradient(net, &trace, &e)?;
    let step = T::from_f64(eps);
    x.zip_map(&g, "fast_sign_adversarial", |v, d| {
        let moved = if d > T::ZERO {
            v + step
        } else if d < T::ZERO {
            v - step
        } else {
            v
        };
        moved.max(T::ZERO).min(T::ONE)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credit::compute_loss;
    use crate::model::{init_network, ActivationKind, InitScheme, NetworkSpec};
    use crate::tensor::{sample_uniform, SeededRng, StreamLabel};

    fn setup(seed: u64) -> (Network, Matrix, Matrix) {
        let spec = NetworkSpec::dense(10, &[8, 6], ActivationKind::Tanh, 3);
        let mut rng = SeededRng::new(seed, StreamLabel::Init);
        let net = init_network(&spec, InitScheme::Uniform, &mut rng).unwrap();
        let x = sample_uniform::<f64>(10, 4, 0.5, &mut rng)
            .unwrap()
            .map(|v| v + 0.5);
        let mut y = Matrix::zeros(3, 4);
        for c in 0..4 {
            y.set(rng.below(3), c, 1.0);
        }
        (net, x, y)
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let (net, x, y) = setup(1);
        assert_eq!(fast_sign_adversarial(&net, &x, &y, 0.0).unwrap(), x);
    }

    #[test]
    fn negative_epsilon_rejected() {
        let (net, x, y) = setup(1);
        assert!(fast_sign_adversarial(&net, &x, &y, -0.1).is_err());
        assert!(fast_sign_adversarial(&net, &x.map(|v| v + 2.0), &y, 0.1).is_err());
    }

    #[test]
    fn moves_by_epsilon_or_clips() {
        for seed in 0..20 {
            let (net, x, y) = setup(seed);
            let eps = 0.3;
            let adv = fast_sign_adversarial(&net, &x, &y, eps).unwrap();
            for (&a, &v) in adv.as_slice().iter().zip(x.as_slice()) {
                assert!((0.0..=1.0).contains(&a));
                let d = (a - v).abs();
                let exact = (d - eps).abs() < 1e-12;
                let clipped = a == 0.0 || a == 1.0;
                assert!(exact || clipped || d == 0.0, "{v} -> {a}");
            }
        }
    }

    #[test]
    fn adversarial_loss_does_not_decrease() {
        let trials = 200;
        let mut ok = 0;
        for seed in 0..trials {
            let (net, x, y) = setup(seed + 100);
            let adv = fast_sign_adversarial(&net, &x, &y, 0.05).unwrap();
            let before = compute_loss(forward(&net, &x).unwrap().prediction(), &y).unwrap();
            let after = compute_loss(forward(&net, &adv).unwrap().prediction(), &y).unwrap();
            if after >= before {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.95 * trials as f64, "{ok}/{trials}");
    }
}
