//! Minimal feed-forward network engine.
//!
//! Networks are chains of dense layers, optionally wrapped in concrete
//! dropout. Weights are stored row-major with shape `(input_width,
//! output_width)`, so a forward pass is `y = x W + b`. All arithmetic is
//! `f64` and every operation is a pure function of its inputs and the
//! supplied random source.
//!
//! Gradients are computed by recording a [`Trace`] during the forward pass
//! and walking it backwards in [`ParameterSet::backward`].

mod dropout;
mod loss;
mod optim;

pub use dropout::{bernoulli_entropy, concrete_dropout_mask, dropout_regularizer, dropout_regularizer_grad};
pub use loss::{gaussian_nll, gaussian_nll_grad, squared_error};
pub use optim::{AdamConfig, OptimizerState};

use rand::distr::{Distribution, Uniform};
use rand::RngCore;

use crate::rng;
use crate::{Error, Result};

/// Default concrete-dropout relaxation temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
/// Initial dropout probability of concrete-dropout layers.
pub const INITIAL_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    /// Dense layer whose input passes through a learned concrete-dropout mask.
    ConcreteDropoutDense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn dense(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self { input_width, output_width, activation, kind: LayerKind::Dense }
    }

    pub fn concrete(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self { input_width, output_width, activation, kind: LayerKind::ConcreteDropoutDense }
    }

    pub fn parameter_count(&self) -> usize {
        let extra = usize::from(self.kind == LayerKind::ConcreteDropoutDense);
        self.input_width * self.output_width + self.output_width + extra
    }
}

/// Checks widths are positive and consecutive layers chain.
pub fn validate_spec(spec: &[LayerSpec]) -> Result<()> {
    if spec.is_empty() {
        return Err(Error::Construction("network needs at least one layer".into()));
    }
    for (i, layer) in spec.iter().enumerate() {
        if layer.input_width == 0 || layer.output_width == 0 {
            return Err(Error::Construction(format!("layer {i} has a zero width")));
        }
        if i > 0 && spec[i - 1].output_width != layer.input_width {
            return Err(Error::Construction(format!(
                "layer {} outputs {} values but layer {} expects {}",
                i - 1,
                spec[i - 1].output_width,
                i,
                layer.input_width
            )));
        }
    }
    Ok(())
}

/// Trainable values of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Row-major `(input_width, output_width)`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    /// Present only on concrete-dropout layers; dropout probability is
    /// `sigmoid(logit)`.
    pub dropout_logit: Option<f64>,
}

impl LayerParams {
    fn zeros_like(spec: &LayerSpec) -> Self {
        Self {
            weights: vec![0.0; spec.input_width * spec.output_width],
            biases: vec![0.0; spec.output_width],
            dropout_logit: (spec.kind == LayerKind::ConcreteDropoutDense).then_some(0.0),
        }
    }

    pub fn dropout_probability(&self) -> Option<f64> {
        self.dropout_logit.map(sigmoid)
    }
}

/// Weights, biases and dropout logits of a whole network, together with its
/// architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    specs: Vec<LayerSpec>,
    layers: Vec<LayerParams>,
    temperature: f64,
}

/// Gradient of a scalar with respect to every entry of a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn zeros(params: &ParameterSet) -> Self {
        Self { layers: params.specs.iter().map(LayerParams::zeros_like).collect() }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|g| *g *= factor);
            layer.biases.iter_mut().for_each(|g| *g *= factor);
            if let Some(g) = layer.dropout_logit.as_mut() {
                *g *= factor;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite())
                && l.biases.iter().all(|v| v.is_finite())
                && l.dropout_logit.is_none_or(f64::is_finite)
        })
    }
}

fn flatten_layers(layers: &[LayerParams]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        out.extend_from_slice(&layer.weights);
        out.extend_from_slice(&layer.biases);
        if let Some(logit) = layer.dropout_logit {
            out.push(logit);
        }
    }
    out
}

/// Activations recorded for one layer during a traced forward pass.
#[derive(Debug, Clone, Default)]
struct LayerTrace {
    /// Layer input before dropout.
    input: Vec<f64>,
    /// Per-unit uniform draws used for the relaxed mask.
    uniforms: Vec<f64>,
    /// Per-unit retain factor `(1 - z) / (1 - p)`; empty for plain layers.
    retain: Vec<f64>,
    /// Input after dropout (equal to `input` for plain layers).
    dropped: Vec<f64>,
    /// Layer output after activation.
    output: Vec<f64>,
}

/// Record of a forward pass, consumed by [`ParameterSet::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    layers: Vec<LayerTrace>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(|l| l.output.as_slice()).unwrap_or(&[])
    }
}

impl ParameterSet {
    /// Builds a network with He-style fan-in uniform weights, zero biases and
    /// dropout probability [`INITIAL_DROPOUT`] on concrete-dropout layers.
    pub fn init(spec: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_spec(spec)?;
        let mut rng = rng::source(seed);
        let logit = (INITIAL_DROPOUT / (1.0 - INITIAL_DROPOUT)).ln();
        let layers = spec
            .iter()
            .map(|s| {
                let limit = (6.0 / s.input_width as f64).sqrt();
                let dist = Uniform::new(-limit, limit).expect("finite init bounds");
                LayerParams {
                    weights: (0..s.input_width * s.output_width).map(|_| dist.sample(&mut rng)).collect(),
                    biases: vec![0.0; s.output_width],
                    dropout_logit: (s.kind == LayerKind::ConcreteDropoutDense).then_some(logit),
                }
            })
            .collect();
        Ok(Self { specs: spec.to_vec(), layers, temperature: DEFAULT_TEMPERATURE })
    }

    /// Assembles a network from explicit values, checking every dimension.
    pub fn from_parts(spec: Vec<LayerSpec>, layers: Vec<LayerParams>, temperature: f64) -> Result<Self> {
        validate_spec(&spec)?;
        if spec.len() != layers.len() {
            return Err(Error::Construction(format!("{} layer specs but {} parameter blocks", spec.len(), layers.len())));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
        }
        for (i, (s, l)) in spec.iter().zip(&layers).enumerate() {
            if l.weights.len() != s.input_width * s.output_width || l.biases.len() != s.output_width {
                return Err(Error::Construction(format!("layer {i} parameter shape does not match its spec")));
            }
            if l.dropout_logit.is_some() != (s.kind == LayerKind::ConcreteDropoutDense) {
                return Err(Error::Construction(format!("layer {i} dropout logit does not match its kind")));
            }
        }
        let params = Self { specs: spec, layers, temperature };
        if !params.is_finite() {
            return Err(Error::Construction("non-finite parameter value".into()));
        }
        Ok(params)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, temperature: f64) -> Result<()> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
        }
        self.temperature = temperature;
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.specs[0].input_width
    }

    pub fn output_width(&self) -> usize {
        self.specs[self.specs.len() - 1].output_width
    }

    pub fn parameter_count(&self) -> usize {
        self.specs.iter().map(LayerSpec::parameter_count).sum()
    }

    pub fn has_dropout(&self) -> bool {
        self.specs.iter().any(|s| s.kind == LayerKind::ConcreteDropoutDense)
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite())
                && l.biases.iter().all(|v| v.is_finite())
                && l.dropout_logit.is_none_or(f64::is_finite)
        })
    }

    /// Forward pass. Concrete-dropout layers always sample a relaxed mask, so
    /// repeated calls give Monte-Carlo samples of the output.
    pub fn forward<R: RngCore + ?Sized>(&self, input: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.forward_traced(input, rng, &mut trace)?;
        Ok(trace.layers.pop().map(|l| l.output).unwrap_or_default())
    }

    /// Forward pass that records everything [`backward`](Self::backward)
    /// needs. The trace's buffers are reused across calls.
    pub fn forward_traced<R: RngCore + ?Sized>(&self, input: &[f64], rng: &mut R, trace: &mut Trace) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(Error::Dimension { expected: self.input_width(), actual: input.len() });
        }
        trace.layers.resize_with(self.specs.len(), LayerTrace::default);
        for i in 0..self.specs.len() {
            let (done, rest) = trace.layers.split_at_mut(i);
            let lt = &mut rest[0];
            lt.input.clear();
            lt.input.extend_from_slice(if i == 0 { input } else { &done[i - 1].output });
            self.layer_forward(i, lt, rng);
        }
        Ok(())
    }

    fn layer_forward<R: RngCore + ?Sized>(&self, i: usize, lt: &mut LayerTrace, rng: &mut R) {
        let spec = &self.specs[i];
        let params = &self.layers[i];
        lt.uniforms.clear();
        lt.retain.clear();
        lt.dropped.clear();
        match params.dropout_logit {
            Some(logit) => {
                let keep_scale = 1.0 / (1.0 - sigmoid(logit));
                for &x in &lt.input {
                    if x == 0.0 {
                        // The mask cannot change a zero input, and the logit
                        // gradient is proportional to the input; skip the draw.
                        lt.uniforms.push(0.5);
                        lt.retain.push(0.0);
                        lt.dropped.push(0.0);
                        continue;
                    }
                    let u = rng::open_unit(rng);
                    let z = concrete_dropout_mask(logit, self.temperature, u).expect("u in (0,1)");
                    let r = (1.0 - z) * keep_scale;
                    lt.uniforms.push(u);
                    lt.retain.push(r);
                    lt.dropped.push(x * r);
                }
            }
            None => lt.dropped.extend_from_slice(&lt.input),
        }
        lt.output.clear();
        lt.output.extend_from_slice(&params.biases);
        let width = spec.output_width;
        for (row, &x) in params.weights.chunks_exact(width).zip(&lt.dropped) {
            if x == 0.0 {
                continue;
            }
            for (y, &w) in lt.output.iter_mut().zip(row) {
                *y += x * w;
            }
        }
        if spec.activation == Activation::Relu {
            for y in &mut lt.output {
                if *y < 0.0 {
                    *y = 0.0;
                }
            }
        }
    }

    /// Reverse-mode pass: accumulates into `grads` the gradient of a scalar
    /// loss whose derivative with respect to the network output is
    /// `output_grad`.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64], grads: &mut Gradients) -> Result<()> {
        if trace.layers.len() != self.specs.len() {
            return Err(Error::Shape("trace was not recorded by this network".into()));
        }
        if output_grad.len() != self.output_width() {
            return Err(Error::Dimension { expected: self.output_width(), actual: output_grad.len() });
        }
        let mut upstream = output_grad.to_vec();
        let mut delta = Vec::new();
        for i in (0..self.specs.len()).rev() {
            let spec = &self.specs[i];
            let params = &self.layers[i];
            let lt = &trace.layers[i];
            let g = &mut grads.layers[i];

            delta.clear();
            delta.extend(upstream.iter().zip(&lt.output).map(|(&d, &y)| match spec.activation {
                Activation::Relu if y <= 0.0 => 0.0,
                _ => d,
            }));
            if delta.iter().all(|&d| d == 0.0) && params.dropout_logit.is_none() && i > 0 {
                upstream.clear();
                upstream.resize(spec.input_width, 0.0);
                continue;
            }
            for (gb, &d) in g.biases.iter_mut().zip(&delta) {
                *gb += d;
            }
            let width = spec.output_width;
            for (grow, &x) in g.weights.chunks_exact_mut(width).zip(&lt.dropped) {
                if x == 0.0 {
                    continue;
                }
                for (gw, &d) in grow.iter_mut().zip(&delta) {
                    *gw += x * d;
                }
            }
            let needs_input_grad = i > 0 || params.dropout_logit.is_some();
            if !needs_input_grad {
                break;
            }
            // Gradient with respect to the dropped input.
            upstream.clear();
            upstream.extend(params.weights.chunks_exact(width).map(|row| dot(row, &delta)));
            if let Some(logit) = params.dropout_logit {
                let p = sigmoid(logit);
                let t = self.temperature;
                let mut dlogit = 0.0;
                for (k, up) in upstream.iter_mut().enumerate() {
                    if lt.input[k] == 0.0 {
                        // Dropout layers sit on raw inputs or after a ReLU, where
                        // a zero input already blocks the gradient.
                        *up = 0.0;
                        continue;
                    }
                    let z = concrete_dropout_mask(logit, t, lt.uniforms[k]).expect("recorded u in (0,1)");
                    let dr = -z * (1.0 - z) / (t * (1.0 - p)) + (1.0 - z) * p / (1.0 - p);
                    dlogit += *up * lt.input[k] * dr;
                    *up *= lt.retain[k];
                }
                if let Some(gl) = g.dropout_logit.as_mut() {
                    *gl += dlogit;
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dot product with four independent accumulators; the summation order is
/// fixed so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_144() -> Vec<LayerSpec> {
        vec![
            LayerSpec::dense(144, 64, Activation::Relu),
            LayerSpec::dense(64, 64, Activation::Relu),
            LayerSpec::dense(64, 4, Activation::Identity),
        ]
    }

    #[test]
    fn parameter_count_by_dimensions() {
        let p = ParameterSet::init(&spec_144(), 7).unwrap();
        assert_eq!(p.parameter_count(), 144 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4);
        assert_eq!(p.parameter_count(), 13700);
        assert_eq!(p.flatten().len(), 13700);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ParameterSet::init(&spec_144(), 7).unwrap();
        let b = ParameterSet::init(&spec_144(), 7).unwrap();
        assert_eq!(a, b);
        let c = ParameterSet::init(&spec_144(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_uses_fan_in_bounds_and_dropout_range() {
        let spec = vec![LayerSpec::concrete(10, 64, Activation::Relu), LayerSpec::dense(64, 3, Activation::Identity)];
        let p = ParameterSet::init(&spec, 3).unwrap();
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(p.layers()[0].weights.iter().all(|w| w.abs() <= limit));
        let prob = p.layers()[0].dropout_probability().unwrap();
        assert!((0.05..=0.15).contains(&prob));
        assert!(p.layers()[1].dropout_logit.is_none());
    }

    #[test]
    fn mismatched_widths_fail() {
        let spec = vec![LayerSpec::dense(64, 32, Activation::Relu), LayerSpec::dense(64, 4, Activation::Identity)];
        assert!(matches!(ParameterSet::init(&spec, 0), Err(Error::Construction(_))));
        let zero = vec![LayerSpec::dense(0, 4, Activation::Relu)];
        assert!(ParameterSet::init(&zero, 0).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut p = ParameterSet::init(&spec_144(), 1).unwrap();
        for l in p.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let mut r = rng::source(0);
        let out = p.forward(&[0.7; 144], &mut r).unwrap();
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = vec![LayerSpec::dense(3, 3, Activation::Identity)];
        let mut weights = vec![0.0; 9];
        for i in 0..3 {
            weights[i * 3 + i] = 1.0;
        }
        let layers = vec![LayerParams { weights, biases: vec![0.0; 3], dropout_logit: None }];
        let p = ParameterSet::from_parts(spec, layers, DEFAULT_TEMPERATURE).unwrap();
        let mut r = rng::source(0);
        assert_eq!(p.forward(&[1.5, -2.0, 0.25], &mut r).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn wrong_input_length_is_dimension_error() {
        let p = ParameterSet::init(&spec_144(), 1).unwrap();
        let mut r = rng::source(0);
        assert!(matches!(p.forward(&[0.0; 10], &mut r), Err(Error::Dimension { expected: 144, actual: 10 })));
    }

    #[test]
    fn dense_network_is_deterministic() {
        let p = ParameterSet::init(&spec_144(), 1).unwrap();
        let x: Vec<f64> = (0..144).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = p.forward(&x, &mut rng::source(1)).unwrap();
        let b = p.forward(&x, &mut rng::source(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_passes_differ() {
        let spec = vec![
            LayerSpec::concrete(8, 16, Activation::Relu),
            LayerSpec::concrete(16, 16, Activation::Relu),
            LayerSpec::dense(16, 2, Activation::Identity),
        ];
        let x: Vec<f64> = (0..8).map(|i| 1.0 + i as f64 * 0.1).collect();
        for seed in 0..10 {
            let p = ParameterSet::init(&spec, seed).unwrap();
            let mut r = rng::source(seed);
            let a = p.forward(&x, &mut r).unwrap();
            let b = p.forward(&x, &mut r).unwrap();
            assert_ne!(a, b, "seed {seed}");
        }
    }

    #[test]
    fn linear_hand_derivative() {
        // y = w x, L = (y - t)^2 with x = 1, w = 1, t = 0 gives dL/dw = 2.
        let spec = vec![LayerSpec::dense(1, 1, Activation::Identity)];
        let layers = vec![LayerParams { weights: vec![1.0], biases: vec![0.0], dropout_logit: None }];
        let p = ParameterSet::from_parts(spec, layers, DEFAULT_TEMPERATURE).unwrap();
        let mut trace = Trace::default();
        p.forward_traced(&[1.0], &mut rng::source(0), &mut trace).unwrap();
        let y = trace.output()[0];
        let mut g = Gradients::zeros(&p);
        p.backward(&trace, &[2.0 * (y - 0.0)], &mut g).unwrap();
        assert_eq!(g.layers[0].weights, vec![2.0]);
        assert_eq!(g.layers[0].biases, vec![2.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let spec = vec![LayerSpec::concrete(5, 7, Activation::Relu), LayerSpec::dense(7, 2, Activation::Identity)];
        let p = ParameterSet::init(&spec, 4).unwrap();
        let mut trace = Trace::default();
        p.forward_traced(&[0.3; 5], &mut rng::source(0), &mut trace).unwrap();
        let mut g = Gradients::zeros(&p);
        p.backward(&trace, &[0.0, 0.0], &mut g).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
