use super::{Gradients, LayerParams, ParameterSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moment estimates for one [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        Self { config, step: 0, first: Gradients::zeros(params), second: Gradients::zeros(params) }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<()> {
        check_shape(params.layers(), &grads.layers)?;
        check_shape(params.layers(), &self.first.layers)?;
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        };
        for (((p, g), m), v) in params
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            for (((p, &g), m), v) in p.weights.iter_mut().zip(&g.weights).zip(&mut m.weights).zip(&mut v.weights) {
                update(p, g, m, v);
            }
            for (((p, &g), m), v) in p.biases.iter_mut().zip(&g.biases).zip(&mut m.biases).zip(&mut v.biases) {
                update(p, g, m, v);
            }
            if let (Some(p), Some(g), Some(m), Some(v)) =
                (p.dropout_logit.as_mut(), g.dropout_logit, m.dropout_logit.as_mut(), v.dropout_logit.as_mut())
            {
                update(p, g, m, v);
            }
        }
        Ok(())
    }
}

fn check_shape(a: &[LayerParams], b: &[LayerParams]) -> Result<()> {
    let same = a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.weights.len() == y.weights.len()
                && x.biases.len() == y.biases.len()
                && x.dropout_logit.is_some() == y.dropout_logit.is_some()
        });
    if same {
        Ok(())
    } else {
        Err(Error::Shape("gradients do not match parameter shapes".into()))
    }
}
