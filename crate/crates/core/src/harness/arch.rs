//! Architecture shorthand such as `"3x50 tanh"`, `"800,400 relu"` or
//! `"cifar-conv tanh"`.

use crate::error::{Error, Result};
use crate::model::{ActivationKind, NetworkSpec, Shape};

/// Parses `"<depth>x<width> <activation>"`, `"<w1>,<w2>,... <activation>"`,
/// `"cifar-conv <activation>"` or `"mini-conv <activation>"` for a
/// dataset with the given input shape and class count.
pub fn parse_architecture(text: &str, input: Shape, classes: usize) -> Result<NetworkSpec> {
    let bad = |why: &str| Error::Config(format!("architecture {text:?}: {why}"));
    let mut parts = text.split_whitespace();
    let shape = parts.next().ok_or_else(|| bad("empty"))?;
    let act_text = parts.next().ok_or_else(|| bad("missing activation"))?;
    if parts.next().is_some() {
        return Err(bad("expected \"<layers> <activation>\""));
    }
    let act = ActivationKind::parse(act_text)
        .filter(|a| *a != ActivationKind::Identity)
        .ok_or_else(|| bad("activation must be tanh, logistic or relu"))?;
    match shape.to_ascii_lowercase().as_str() {
        "cifar-conv" => {
            if input != Shape::new(3, 32, 32) {
                return Err(bad("the CIFAR conv network needs 3x32x32 inputs"));
            }
            return Ok(NetworkSpec::cifar_conv(act, classes));
        }
        "mini-conv" => {
            if input.channels == 1 && input.height == 1 {
                return Err(bad("conv networks need image-shaped inputs"));
            }
            return Ok(NetworkSpec::conv_stack(
                input,
                &[4, 6],
                (3, 3),
                ((2, 2), 2),
                &[16],
                act,
                classes,
            ));
        }
        _ => {}
    }
    let widths: Vec<usize> = if let Some((d, w)) = shape.split_once(['x', 'X']) {
        let d: usize = d.parse().map_err(|_| bad("depth is not a number"))?;
        let w: usize = w.parse().map_err(|_| bad("width is not a number"))?;
        vec![w; d]
    } else {
        shape
            .split(',')
            .map(|w| w.parse().map_err(|_| bad("width is not a number")))
            .collect::<Result<_>>()?
    };
    if widths.is_empty() || widths.contains(&0) {
        return Err(bad("every hidden layer needs at least one unit"));
    }
    Ok(NetworkSpec::dense(input.size(), &widths, act, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerKind;

    #[test]
    fn depth_by_width() {
        let s = parse_architecture("3x50 tanh", Shape::new(1, 28, 28), 10).unwrap();
        assert_eq!(
            s,
            NetworkSpec::dense(784, &[50, 50, 50], ActivationKind::Tanh, 10)
        );
        let s = parse_architecture("100x240 Tanh", Shape::flat(784), 10).unwrap();
        assert_eq!(s.hidden.len(), 100);
    }

    #[test]
    fn width_list_and_conv() {
        let s = parse_architecture("800,400 relu", Shape::flat(784), 10).unwrap();
        assert!(matches!(s.hidden[1].kind, LayerKind::Dense { units: 400 }));
        let c = parse_architecture("cifar-conv tanh", Shape::new(3, 32, 32), 100).unwrap();
        assert_eq!(c, NetworkSpec::cifar_conv(ActivationKind::Tanh, 100));
        assert!(parse_architecture("cifar-conv tanh", Shape::new(1, 28, 28), 10).is_err());
    }

    #[test]
    fn rejects_garbage() {
        for t in [
            "",
            "3x50",
            "3x50 cubic",
            "ax50 tanh",
            "0x50 tanh",
            "3x0 tanh",
            "3x50 tanh extra",
        ] {
            assert!(parse_architecture(t, Shape::flat(784), 10).is_err(), "{t}");
        }
    }
}
