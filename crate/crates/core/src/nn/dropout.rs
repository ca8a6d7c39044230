//! Concrete (relaxed Bernoulli) dropout.

use super::{sigmoid, LayerKind, Gradients, ParameterSet};
use crate::{Error, Result};

/// Relaxed drop indicator `sigmoid((logit + ln u - ln(1 - u)) / temperature)`.
///
/// `logit` is the log-odds of the dropout probability. Values near 1 mean the
/// unit is dropped; the layer multiplies its input by `(1 - z) / (1 - p)`.
pub fn concrete_dropout_mask(logit: f64, temperature: f64, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("uniform draw must lie in (0, 1), got {u}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    Ok(sigmoid((logit + u.ln() - (1.0 - u).ln()) / temperature))
}

/// Bernoulli entropy in nats.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Sum over concrete-dropout layers of
/// `weight_decay_scale * |W|^2 / (1 - p) - entropy_scale * input_width * H(p)`.
///
/// Zero for networks without dropout layers.
pub fn dropout_regularizer(params: &ParameterSet, weight_decay_scale: f64, entropy_scale: f64) -> f64 {
    params
        .specs()
        .iter()
        .zip(params.layers())
        .filter(|(s, _)| s.kind == LayerKind::ConcreteDropoutDense)
        .map(|(s, l)| {
            let p = sigmoid(l.dropout_logit.expect("dropout layer has a logit"));
            let sq: f64 = l.weights.iter().map(|w| w * w).sum();
            weight_decay_scale * sq / (1.0 - p) - entropy_scale * s.input_width as f64 * bernoulli_entropy(p)
        })
        .sum()
}

/// Accumulates `scale * d(regularizer)/d(params)` into `grads`.
pub fn dropout_regularizer_grad(
    params: &ParameterSet,
    weight_decay_scale: f64,
    entropy_scale: f64,
    scale: f64,
    grads: &mut Gradients,
) {
    for ((s, l), g) in params.specs().iter().zip(params.layers()).zip(&mut grads.layers) {
        if s.kind != LayerKind::ConcreteDropoutDense {
            continue;
        }
        let logit = l.dropout_logit.expect("dropout layer has a logit");
        let p = sigmoid(logit);
        let coeff = 2.0 * weight_decay_scale / (1.0 - p) * scale;
        let mut sq = 0.0;
        for (gw, &w) in g.weights.iter_mut().zip(&l.weights) {
            *gw += coeff * w;
            sq += w * w;
        }
        // d/dlogit of |W|^2/(1-p) is |W|^2 p/(1-p); dH/dlogit = -logit p (1-p).
        let d_decay = weight_decay_scale * sq * p / (1.0 - p);
        let d_entropy = -entropy_scale * s.input_width as f64 * (-logit * p * (1.0 - p));
        if let Some(gl) = g.dropout_logit.as_mut() {
            *gl += scale * (d_decay + d_entropy);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use std::f64::consts::LN_2;

    #[test]
    fn symmetric_point_is_half() {
        for t in [0.01, 0.1, 1.0, 7.0] {
            assert_eq!(concrete_dropout_mask(0.0, t, 0.5).unwrap(), 0.5);
        }
    }

    #[test]
    fn sharp_temperature_saturates() {
        let m = concrete_dropout_mask(0.0, 0.1, 0.99).unwrap();
        assert!((m - 1.0).abs() < 1e-9);
        assert!((m - sigmoid(99f64.ln() / 0.1)).abs() < 1e-15);
    }

    #[test]
    fn large_logit_limit() {
        assert!(concrete_dropout_mask(50.0, 0.1, 0.5).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(concrete_dropout_mask(0.0, 0.1, 0.0).is_err());
        assert!(concrete_dropout_mask(0.0, 0.1, 1.0).is_err());
        assert!(concrete_dropout_mask(0.0, 0.0, 0.5).is_err());
    }

    fn single_dropout_layer(width: usize, logit: f64, weight: f64) -> ParameterSet {
        let spec = vec![LayerSpec::concrete(width, 2, Activation::Identity)];
        let mut p = ParameterSet::init(&spec, 0).unwrap();
        let l = &mut p.layers_mut()[0];
        l.weights.iter_mut().for_each(|w| *w = weight);
        l.dropout_logit = Some(logit);
        p
    }

    #[test]
    fn regularizer_at_half_probability() {
        let p = single_dropout_layer(6, 0.0, 0.0);
        let r = dropout_regularizer(&p, 1e-6, 1e-5);
        assert!((r - (-1e-5 * 6.0 * LN_2)).abs() < 1e-18);
        assert_eq!(dropout_regularizer(&p, 1e-6, 0.0), 0.0);
    }

    #[test]
    fn regularizer_small_probability_limit() {
        let p = single_dropout_layer(3, -40.0, 0.5);
        let sq = 6.0 * 0.25;
        let r = dropout_regularizer(&p, 1e-2, 1e-5);
        assert!((r - 1e-2 * sq).abs() < 1e-12);
    }

    #[test]
    fn regularizer_without_dropout_layers_is_zero() {
        let spec = vec![LayerSpec::dense(3, 2, Activation::Identity)];
        let p = ParameterSet::init(&spec, 0).unwrap();
        assert_eq!(dropout_regularizer(&p, 1.0, 1.0), 0.0);
    }

    #[test]
    fn regularizer_gradient_matches_finite_differences() {
        let p = single_dropout_layer(4, -1.3, 0.7);
        let (wd, es) = (0.05, 0.02);
        let mut g = Gradients::zeros(&p);
        dropout_regularizer_grad(&p, wd, es, 1.0, &mut g);
        let h = 1e-6;
        let mut plus = p.clone();
        plus.layers_mut()[0].dropout_logit = Some(-1.3 + h);
        let mut minus = p.clone();
        minus.layers_mut()[0].dropout_logit = Some(-1.3 - h);
        let fd = (dropout_regularizer(&plus, wd, es) - dropout_regularizer(&minus, wd, es)) / (2.0 * h);
        assert!((fd - g.layers[0].dropout_logit.unwrap()).abs() < 1e-7);
        let mut plus = p.clone();
        plus.layers_mut()[0].weights[3] += h;
        let mut minus = p.clone();
        minus.layers_mut()[0].weights[3] -= h;
        let fd = (dropout_regularizer(&plus, wd, es) - dropout_regularizer(&minus, wd, es)) / (2.0 * h);
        assert!((fd - g.layers[0].weights[3]).abs() < 1e-7);
    }
}
