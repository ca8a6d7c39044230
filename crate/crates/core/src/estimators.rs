//! Uncertainty-aware Q-networks.
//!
//! Three architectures share the interface defined by [`Estimator`]:
//!
//! - [`MccdNetwork`]: two concrete-dropout hidden layers and a
//!   `(mu, log_var)` pair per action. Epistemic variance is the spread of
//!   `mu` over `T` stochastic passes.
//! - [`BootstrapNetwork`]: a shared two-layer trunk with `K` linear heads,
//!   each trained on a Bernoulli-masked view of the replay data. Epistemic
//!   variance is the population variance across heads.
//! - [`BootstrapPriorNetwork`]: a bootstrap network plus a frozen, randomly
//!   initialised prior network of the same topology whose output, scaled by
//!   `beta`, is added to every head.
//!
//! The trunk and all heads of a bootstrap network are stored as one
//! [`ParameterSet`]; the last layer emits `K * |A|` values laid out
//! head-major, and the rows feeding head `k` never touch any other head.

use rand::{Rng, RngCore};

use crate::nn::{
    self, dropout_regularizer, dropout_regularizer_grad, gaussian_nll, gaussian_nll_grad, Activation, Gradients,
    LayerSpec, OptimizerState, ParameterSet, Trace,
};
use crate::{Error, Result};

pub const HIDDEN_WIDTH: usize = 64;
pub const DEFAULT_HEADS: usize = 10;
pub const DEFAULT_WEIGHT_DECAY_SCALE: f64 = 1e-6;
pub const DEFAULT_ENTROPY_SCALE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Mccd,
    Bootstrap,
    BootstrapPrior,
}

impl Architecture {
    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Mccd => "mccd",
            Architecture::Bootstrap => "bootstrap",
            Architecture::BootstrapPrior => "bootstrap_prior",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "mccd" => Some(Architecture::Mccd),
            "bootstrap" => Some(Architecture::Bootstrap),
            "bootstrap_prior" => Some(Architecture::BootstrapPrior),
            _ => None,
        }
    }
}

/// Which heads a stored experience is visible to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapMask {
    bits: Vec<bool>,
}

impl BootstrapMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all(heads: usize) -> Self {
        Self { bits: vec![true; heads] }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Draws `heads` independent Bernoulli(`p`) bits.
pub fn sample_mask<R: Rng + ?Sized>(p: f64, heads: usize, rng: &mut R) -> Result<BootstrapMask> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("mask probability must lie in (0, 1], got {p}")));
    }
    Ok(BootstrapMask { bits: (0..heads).map(|_| rng.random_bool(p)).collect() })
}

/// Per-action mean Q-value and epistemic variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicEstimate {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl EpistemicEstimate {
    /// Index of the largest mean; ties go to the lowest index.
    pub fn greedy_action(&self) -> usize {
        argmax(&self.mean)
    }

    /// Epistemic variance of the greedy action.
    pub fn greedy_uncertainty(&self) -> f64 {
        self.variance[self.greedy_action()]
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `K x |A|` head outputs, head-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMatrix {
    heads: usize,
    actions: usize,
    values: Vec<f64>,
}

impl HeadMatrix {
    pub fn new(heads: usize, actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != heads * actions {
            return Err(Error::Dimension { expected: heads * actions, actual: values.len() });
        }
        Ok(Self { heads, actions, values })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, head: usize, action: usize) -> f64 {
        self.values[head * self.actions + action]
    }

    pub fn head(&self, head: usize) -> &[f64] {
        &self.values[head * self.actions..(head + 1) * self.actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean and population variance (divisor `K`) across heads, per action.
    pub fn statistics(&self) -> EpistemicEstimate {
        let k = self.heads as f64;
        let mut mean = vec![0.0; self.actions];
        for h in 0..self.heads {
            for (m, v) in mean.iter_mut().zip(self.head(h)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k);
        let mut variance = vec![0.0; self.actions];
        for h in 0..self.heads {
            for ((s, v), m) in variance.iter_mut().zip(self.head(h)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        variance.iter_mut().for_each(|s| *s /= k);
        EpistemicEstimate { mean, variance }
    }
}

/// Mean and `(1/T) sum y^2 - ((1/T) sum y)^2` of Monte-Carlo samples.
///
/// The moments are taken about the first sample. Variance is invariant to
/// the shift, and it keeps identical samples at exactly zero instead of
/// leaving cancellation residue.
pub fn monte_carlo_moments(samples: &[f64]) -> (f64, f64) {
    let Some(&pivot) = samples.first() else {
        return (f64::NAN, f64::NAN);
    };
    let t = samples.len() as f64;
    let (s1, s2) = samples.iter().fold((0.0, 0.0), |(a, b), &y| {
        let d = y - pivot;
        (a + d, b + d * d)
    });
    let shifted_mean = s1 / t;
    (pivot + shifted_mean, (s2 / t - shifted_mean * shifted_mean).max(0.0))
}

fn bootstrap_layers(input_width: usize, hidden: usize, heads: usize, actions: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(input_width, hidden, Activation::Relu),
        LayerSpec::dense(hidden, hidden, Activation::Relu),
        LayerSpec::dense(hidden, heads * actions, Activation::Identity),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapNetwork {
    pub params: ParameterSet,
    num_actions: usize,
    heads: usize,
    mask_probability: f64,
}

impl BootstrapNetwork {
    pub fn new(
        input_width: usize,
        num_actions: usize,
        hidden: usize,
        heads: usize,
        mask_probability: f64,
        seed: u64,
    ) -> Result<Self> {
        let params = ParameterSet::init(&bootstrap_layers(input_width, hidden, heads, num_actions), seed)?;
        Self::from_params(params, num_actions, heads, mask_probability)
    }

    pub fn from_params(params: ParameterSet, num_actions: usize, heads: usize, mask_probability: f64) -> Result<Self> {
        if heads < 1 {
            return Err(Error::Construction("bootstrap network needs at least one head".into()));
        }
        if !(mask_probability > 0.0 && mask_probability <= 1.0) {
            return Err(Error::Domain(format!("mask probability must lie in (0, 1], got {mask_probability}")));
        }
        if params.output_width() != heads * num_actions || params.has_dropout() {
            return Err(Error::Construction("parameters do not describe a bootstrap network".into()));
        }
        Ok(Self { params, num_actions, heads, mask_probability })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn mask_probability(&self) -> f64 {
        self.mask_probability
    }

    pub fn head_values(&self, state: &[f64]) -> Result<HeadMatrix> {
        let out = self.params.forward(state, &mut NoRandomness)?;
        HeadMatrix::new(self.heads, self.num_actions, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPriorNetwork {
    pub trainable: BootstrapNetwork,
    prior: ParameterSet,
    prior_scale: f64,
}

impl BootstrapPriorNetwork {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input_width: usize,
        num_actions: usize,
        hidden: usize,
        heads: usize,
        mask_probability: f64,
        prior_scale: f64,
        seed: u64,
        prior_seed: u64,
    ) -> Result<Self> {
        let trainable = BootstrapNetwork::new(input_width, num_actions, hidden, heads, mask_probability, seed)?;
        let prior = ParameterSet::init(&bootstrap_layers(input_width, hidden, heads, num_actions), prior_seed)?;
        Self::from_parts(trainable, prior, prior_scale)
    }

    pub fn from_parts(trainable: BootstrapNetwork, prior: ParameterSet, prior_scale: f64) -> Result<Self> {
        if !(prior_scale >= 0.0 && prior_scale.is_finite()) {
            return Err(Error::Domain(format!("prior scale must be finite and >= 0, got {prior_scale}")));
        }
        if prior.specs() != trainable.params.specs() {
            return Err(Error::Construction("prior topology must mirror the trainable network".into()));
        }
        Ok(Self { trainable, prior, prior_scale })
    }

    /// The frozen prior. There is deliberately no mutable accessor.
    pub fn prior(&self) -> &ParameterSet {
        &self.prior
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    pub fn prior_values(&self, state: &[f64]) -> Result<HeadMatrix> {
        let out = self.prior.forward(state, &mut NoRandomness)?;
        HeadMatrix::new(self.trainable.heads, self.trainable.num_actions, out)
    }

    /// One optimizer step of the trainable part against posterior outputs.
    pub fn train_step(&mut self, batch: &[BootstrapSample<'_>], optimizer: &mut OptimizerState) -> Result<f64> {
        bootstrap_train_step(&mut self.trainable, Some((&self.prior, self.prior_scale)), batch, optimizer)
    }

    /// Posterior heads: trainable head `k` plus `beta` times prior head `k`.
    pub fn head_values(&self, state: &[f64]) -> Result<HeadMatrix> {
        let mut posterior = self.trainable.head_values(state)?;
        if self.prior_scale != 0.0 {
            let prior = self.prior_values(state)?;
            for (q, p) in posterior.values.iter_mut().zip(&prior.values) {
                *q += self.prior_scale * p;
            }
        }
        Ok(posterior)
    }
}

/// One replayed sample for a bootstrap update.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapSample<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub mask: &'a BootstrapMask,
    /// One target per head.
    pub targets: &'a [f64],
}

/// Loss and gradient for a bootstrap minibatch: mean over samples of
/// `sum_k mask_k (Q_k(s, a) - y_k)^2`, differentiated with respect to the
/// trainable parameters only.
pub fn bootstrap_loss_and_grad(
    net: &BootstrapNetwork,
    prior: Option<(&ParameterSet, f64)>,
    batch: &[BootstrapSample<'_>],
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(&net.params);
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let (k_heads, actions) = (net.heads, net.num_actions);
    let inv_batch = 1.0 / batch.len() as f64;
    let mut trace = Trace::default();
    let mut out_grad = vec![0.0; k_heads * actions];
    let mut loss = 0.0;
    for sample in batch {
        if sample.action >= actions {
            return Err(Error::Domain(format!("action {} outside [0, {actions})", sample.action)));
        }
        if sample.mask.len() != k_heads || sample.targets.len() != k_heads {
            return Err(Error::Dimension { expected: k_heads, actual: sample.targets.len().min(sample.mask.len()) });
        }
        if sample.mask.count() == 0 {
            continue;
        }
        net.params.forward_traced(sample.state, &mut NoRandomness, &mut trace)?;
        let prior_out = match prior {
            Some((p, beta)) if beta != 0.0 => Some((p.forward(sample.state, &mut NoRandomness)?, beta)),
            _ => None,
        };
        out_grad.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..k_heads {
            if !sample.mask.bits()[k] {
                continue;
            }
            let idx = k * actions + sample.action;
            let mut q = trace.output()[idx];
            if let Some((p, beta)) = &prior_out {
                q += beta * p[idx];
            }
            let diff = q - sample.targets[k];
            loss += diff * diff * inv_batch;
            out_grad[idx] = 2.0 * diff * inv_batch;
        }
        net.params.backward(&trace, &out_grad, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Applies one optimizer step on a bootstrap minibatch and returns the loss.
/// The prior, if any, is read but never updated.
pub fn bootstrap_train_step(
    net: &mut BootstrapNetwork,
    prior: Option<(&ParameterSet, f64)>,
    batch: &[BootstrapSample<'_>],
    optimizer: &mut OptimizerState,
) -> Result<f64> {
    let (loss, grads) = bootstrap_loss_and_grad(net, prior, batch)?;
    if loss.is_finite() {
        optimizer.step(&mut net.params, &grads)?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MccdNetwork {
    pub params: ParameterSet,
    num_actions: usize,
    mc_passes: usize,
    pub weight_decay_scale: f64,
    pub entropy_scale: f64,
}

/// Result of `T` stochastic passes of an MCCD network.
#[derive(Debug, Clone, PartialEq)]
pub struct MccdPrediction {
    pub estimate: EpistemicEstimate,
    /// Mean predicted `exp(log_var)` per action. Reported only; never used
    /// as an OOD score.
    pub aleatoric: Vec<f64>,
    /// `T x |A|` sampled means, pass-major.
    pub samples: Vec<f64>,
}

impl MccdNetwork {
    pub fn new(input_width: usize, num_actions: usize, hidden: usize, mc_passes: usize, seed: u64) -> Result<Self> {
        let spec = vec![
            LayerSpec::concrete(input_width, hidden, Activation::Relu),
            LayerSpec::concrete(hidden, hidden, Activation::Relu),
            LayerSpec::dense(hidden, 2 * num_actions, Activation::Identity),
        ];
        let params = ParameterSet::init(&spec, seed)?;
        Self::from_params(params, num_actions, mc_passes, DEFAULT_WEIGHT_DECAY_SCALE, DEFAULT_ENTROPY_SCALE)
    }

    pub fn from_params(
        params: ParameterSet,
        num_actions: usize,
        mc_passes: usize,
        weight_decay_scale: f64,
        entropy_scale: f64,
    ) -> Result<Self> {
        if mc_passes < 2 {
            return Err(Error::Domain(format!("MC dropout needs at least 2 passes, got {mc_passes}")));
        }
        if params.output_width() != 2 * num_actions {
            return Err(Error::Construction("MCCD output layer must emit (mu, log_var) per action".into()));
        }
        Ok(Self { params, num_actions, mc_passes, weight_decay_scale, entropy_scale })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn mc_passes(&self) -> usize {
        self.mc_passes
    }

    /// One stochastic pass, split into `(mu, log_var)` per action.
    pub fn sample_pass<R: RngCore + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.params.forward(state, rng)?;
        Ok(out.chunks_exact(2).map(|c| (c[0], c[1])).unzip())
    }

    pub fn predict<R: RngCore + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<MccdPrediction> {
        let passes = self.mc_passes;
        let actions = self.num_actions;
        let mut samples = Vec::with_capacity(passes * actions);
        let mut aleatoric = vec![0.0; actions];
        for _ in 0..passes {
            let (mu, log_var) = self.sample_pass(state, rng)?;
            samples.extend_from_slice(&mu);
            for (a, lv) in aleatoric.iter_mut().zip(&log_var) {
                *a += lv.exp() / passes as f64;
            }
        }
        let mut mean = Vec::with_capacity(actions);
        let mut variance = Vec::with_capacity(actions);
        let mut column = Vec::with_capacity(passes);
        for a in 0..actions {
            column.clear();
            column.extend((0..passes).map(|t| samples[t * actions + a]));
            let (m, v) = monte_carlo_moments(&column);
            mean.push(m);
            variance.push(v);
        }
        Ok(MccdPrediction { estimate: EpistemicEstimate { mean, variance }, aleatoric, samples })
    }
}

/// One replayed sample for an MCCD update.
#[derive(Debug, Clone, Copy)]
pub struct MccdSample<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub target: f64,
}

/// Mean Gaussian NLL of the taken action's `(mu, log_var)` over one
/// stochastic pass per sample, plus the dropout regulariser.
pub fn mccd_loss_and_grad<R: RngCore + ?Sized>(
    net: &MccdNetwork,
    batch: &[MccdSample<'_>],
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(&net.params);
    let regularizer = dropout_regularizer(&net.params, net.weight_decay_scale, net.entropy_scale);
    dropout_regularizer_grad(&net.params, net.weight_decay_scale, net.entropy_scale, 1.0, &mut grads);
    if batch.is_empty() {
        return Ok((regularizer, grads));
    }
    let inv_batch = 1.0 / batch.len() as f64;
    let mut trace = Trace::default();
    let mut out_grad = vec![0.0; 2 * net.num_actions];
    let mut nll = 0.0;
    for sample in batch {
        if sample.action >= net.num_actions {
            return Err(Error::Domain(format!("action {} outside [0, {})", sample.action, net.num_actions)));
        }
        net.params.forward_traced(sample.state, rng, &mut trace)?;
        let mu = trace.output()[2 * sample.action];
        let log_var = trace.output()[2 * sample.action + 1];
        nll += gaussian_nll(mu, log_var, sample.target) * inv_batch;
        let (dmu, dlv) = gaussian_nll_grad(mu, log_var, sample.target);
        out_grad.iter_mut().for_each(|g| *g = 0.0);
        out_grad[2 * sample.action] = dmu * inv_batch;
        out_grad[2 * sample.action + 1] = dlv * inv_batch;
        net.params.backward(&trace, &out_grad, &mut grads)?;
    }
    Ok((nll + regularizer, grads))
}

pub fn mccd_train_step<R: RngCore + ?Sized>(
    net: &mut MccdNetwork,
    batch: &[MccdSample<'_>],
    optimizer: &mut OptimizerState,
    rng: &mut R,
) -> Result<f64> {
    let (loss, grads) = mccd_loss_and_grad(net, batch, rng)?;
    if loss.is_finite() && grads.is_finite() {
        optimizer.step(&mut net.params, &grads)?;
    }
    Ok(loss)
}

/// Construction parameters shared by all architectures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpec {
    pub architecture: Architecture,
    pub hidden: usize,
    pub heads: usize,
    pub mask_probability: f64,
    pub mc_passes: usize,
    pub prior_scale: f64,
    pub temperature: f64,
    pub weight_decay_scale: f64,
    pub entropy_scale: f64,
}

impl EstimatorSpec {
    pub fn bootstrap(mask_probability: f64) -> Self {
        Self {
            architecture: Architecture::Bootstrap,
            hidden: HIDDEN_WIDTH,
            heads: DEFAULT_HEADS,
            mask_probability,
            mc_passes: 0,
            prior_scale: 0.0,
            temperature: nn::DEFAULT_TEMPERATURE,
            weight_decay_scale: DEFAULT_WEIGHT_DECAY_SCALE,
            entropy_scale: DEFAULT_ENTROPY_SCALE,
        }
    }

    pub fn bootstrap_prior(mask_probability: f64, prior_scale: f64) -> Self {
        Self { architecture: Architecture::BootstrapPrior, prior_scale, ..Self::bootstrap(mask_probability) }
    }

    pub fn mccd(mc_passes: usize) -> Self {
        Self { architecture: Architecture::Mccd, mc_passes, heads: 0, mask_probability: 1.0, ..Self::bootstrap(1.0) }
    }

    pub fn build(&self, input_width: usize, num_actions: usize, seed: u64) -> Result<Estimator> {
        Ok(match self.architecture {
            Architecture::Mccd => {
                let mut net = MccdNetwork::new(input_width, num_actions, self.hidden, self.mc_passes, seed)?;
                net.params.set_temperature(self.temperature)?;
                net.weight_decay_scale = self.weight_decay_scale;
                net.entropy_scale = self.entropy_scale;
                Estimator::Mccd(net)
            }
            Architecture::Bootstrap => Estimator::Bootstrap(BootstrapNetwork::new(
                input_width,
                num_actions,
                self.hidden,
                self.heads,
                self.mask_probability,
                seed,
            )?),
            Architecture::BootstrapPrior => Estimator::BootstrapPrior(BootstrapPriorNetwork::new(
                input_width,
                num_actions,
                self.hidden,
                self.heads,
                self.mask_probability,
                self.prior_scale,
                seed,
                crate::rng::derive(seed, &[0x5052_494f_52]),
            )?),
        })
    }
}

/// Full prediction of any estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub estimate: EpistemicEstimate,
    /// Head outputs of bootstrap variants.
    pub heads: Option<HeadMatrix>,
    /// Aleatoric variance of the MCCD variant.
    pub aleatoric: Option<Vec<f64>>,
}

/// Bootstrap target values of a network at a successor state.
#[derive(Debug, Clone, PartialEq)]
pub enum NextValues {
    /// One value vector per head.
    PerHead(HeadMatrix),
    /// A single value vector (MCCD: one stochastic pass of `mu`).
    Single(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Mccd(MccdNetwork),
    Bootstrap(BootstrapNetwork),
    BootstrapPrior(BootstrapPriorNetwork),
}

impl Estimator {
    pub fn architecture(&self) -> Architecture {
        match self {
            Estimator::Mccd(_) => Architecture::Mccd,
            Estimator::Bootstrap(_) => Architecture::Bootstrap,
            Estimator::BootstrapPrior(_) => Architecture::BootstrapPrior,
        }
    }

    /// The parameters updated by training.
    pub fn trainable(&self) -> &ParameterSet {
        match self {
            Estimator::Mccd(n) => &n.params,
            Estimator::Bootstrap(n) => &n.params,
            Estimator::BootstrapPrior(n) => &n.trainable.params,
        }
    }

    pub fn trainable_mut(&mut self) -> &mut ParameterSet {
        match self {
            Estimator::Mccd(n) => &mut n.params,
            Estimator::Bootstrap(n) => &mut n.params,
            Estimator::BootstrapPrior(n) => &mut n.trainable.params,
        }
    }

    pub fn input_width(&self) -> usize {
        self.trainable().input_width()
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Estimator::Mccd(n) => n.num_actions,
            Estimator::Bootstrap(n) => n.num_actions,
            Estimator::BootstrapPrior(n) => n.trainable.num_actions,
        }
    }

    /// Number of bootstrap heads; zero for MCCD.
    pub fn heads(&self) -> usize {
        match self {
            Estimator::Mccd(_) => 0,
            Estimator::Bootstrap(n) => n.heads,
            Estimator::BootstrapPrior(n) => n.trainable.heads,
        }
    }

    pub fn mask_probability(&self) -> Option<f64> {
        match self {
            Estimator::Mccd(_) => None,
            Estimator::Bootstrap(n) => Some(n.mask_probability),
            Estimator::BootstrapPrior(n) => Some(n.trainable.mask_probability),
        }
    }

    pub fn predict<R: RngCore + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Prediction> {
        match self {
            Estimator::Mccd(n) => {
                let p = n.predict(state, rng)?;
                Ok(Prediction { estimate: p.estimate, heads: None, aleatoric: Some(p.aleatoric) })
            }
            Estimator::Bootstrap(_) | Estimator::BootstrapPrior(_) => {
                let (estimate, heads) = bootstrap_predict(self, state)?;
                Ok(Prediction { estimate, heads: Some(heads), aleatoric: None })
            }
        }
    }

    /// Epistemic variance of the greedy action at `state`.
    pub fn uncertainty_of<R: RngCore + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<f64> {
        Ok(self.predict(state, rng)?.estimate.greedy_uncertainty())
    }

    pub fn next_values<R: RngCore + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<NextValues> {
        match self {
            Estimator::Mccd(n) => Ok(NextValues::Single(n.sample_pass(state, rng)?.0)),
            Estimator::Bootstrap(n) => Ok(NextValues::PerHead(n.head_values(state)?)),
            Estimator::BootstrapPrior(n) => Ok(NextValues::PerHead(n.head_values(state)?)),
        }
    }
}

/// Mean and population variance across the (posterior) heads, together with
/// the raw head matrix.
pub fn bootstrap_predict(net: &Estimator, state: &[f64]) -> Result<(EpistemicEstimate, HeadMatrix)> {
    let heads = match net {
        Estimator::Bootstrap(n) => n.head_values(state)?,
        Estimator::BootstrapPrior(n) => n.head_values(state)?,
        Estimator::Mccd(_) => return Err(Error::Construction("bootstrap_predict needs a bootstrap network".into())),
    };
    Ok((heads.statistics(), heads))
}

/// Random source for networks without dropout layers. Deterministic forward
/// passes never draw from it.
pub(crate) struct NoRandomness;

impl RngCore for NoRandomness {
    fn next_u32(&mut self) -> u32 {
        unreachable!("deterministic network drew randomness")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("deterministic network drew randomness")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("deterministic network drew randomness")
    }
}
