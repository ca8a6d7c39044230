//! Threshold classifier over epistemic uncertainty.
//!
//! A state is out-of-distribution when the uncertainty of its greedy action
//! exceeds `c = mean + std` of the uncertainties seen on the training
//! configuration.

use std::fmt;

use crate::estimators::Estimator;
use crate::eval::run_eval;
use crate::rng::{self, RandomSource};
use crate::snapshot::Snapshot;
use crate::{Error, Result};

/// Uncertainty of one visited state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintySample {
    pub score: f64,
    pub config: usize,
    pub episode: usize,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub c: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassLabel {
    InDistribution,
    OutOfDistribution,
}

impl ClassLabel {
    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::InDistribution => "in_distribution",
            ClassLabel::OutOfDistribution => "out_of_distribution",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn fit_threshold(scores: &[f64]) -> Result<Threshold> {
    if scores.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "threshold needs at least 2 in-distribution samples, got {}",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Domain(format!("non-finite uncertainty score {bad}")));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok(Threshold { mean, std, c: mean + std, count: scores.len() })
}

/// Out-of-distribution iff `score > c`.
pub fn classify(score: f64, threshold: &Threshold) -> ClassLabel {
    if score > threshold.c {
        ClassLabel::OutOfDistribution
    } else {
        ClassLabel::InDistribution
    }
}

/// Greedy rollouts on the training configuration, one sample per visited
/// state. `seed` should differ from every seed used for training.
pub fn collect_in_distribution(snapshot: &Snapshot, n_episodes: usize, seed: u64) -> Result<Vec<UncertaintySample>> {
    if n_episodes == 0 {
        return Err(Error::InsufficientData("need at least one in-distribution episode".into()));
    }
    let records = run_eval(snapshot, 0, n_episodes, seed)?;
    Ok(records.into_iter().flat_map(|r| r.samples).collect())
}

/// Uncertainty of the greedy action at each state, in input order.
/// Each state draws its dropout masks from its own stream, so scores do
/// not depend on the position of a state in the list.
pub fn score_states(net: &Estimator, states: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    let width = net.input_width();
    states
        .iter()
        .map(|s| {
            if s.len() != width {
                return Err(Error::Dimension { expected: width, actual: s.len() });
            }
            net.uncertainty_of(s, &mut state_rng(seed, s))
        })
        .collect()
}

fn state_rng(seed: u64, state: &[f64]) -> RandomSource {
    let bits: Vec<u64> = state.iter().map(|v| v.to_bits()).collect();
    rng::source(rng::derive(seed, &bits))
}
