//! Episodic environment families with an index-controlled shift away from
//! the training configuration.
//!
//! Both families are deterministic MDPs: randomness enters only through
//! [`Environment::reset`].

mod gridworld;
mod lander;
mod trace;

pub use gridworld::{grid_config, shortest_path, GridAction, GridState, Gridworld, GridworldConfig};
pub use lander::{lander_config, Lander, LanderAction, LanderConfig, LanderState};
pub use trace::{read_trace, trace_fields, trace_header, TraceRow, TraceWriter};

use std::fmt;
use std::str::FromStr;

use crate::rng::RandomSource;
use crate::{Error, Result};

/// Outcome of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True terminal state; bootstrapping stops here.
    pub terminal: bool,
    /// Episode cut by the step limit. Not terminal for target computation.
    pub truncated: bool,
}

impl StepResult {
    pub fn episode_over(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment {
    /// Samples a new episode start and returns its encoding.
    fn reset(&mut self, rng: &mut RandomSource) -> Vec<f64>;

    fn step(&mut self, action: usize) -> Result<StepResult>;

    fn observation_width(&self) -> usize;

    fn num_actions(&self) -> usize;

    fn config_index(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EnvFamily {
    Gridworld,
    Lander,
}

impl EnvFamily {
    pub fn name(self) -> &'static str {
        match self {
            EnvFamily::Gridworld => "gridworld",
            EnvFamily::Lander => "lander",
        }
    }

    /// Number of configurations, the training configuration 0 included.
    pub fn num_configs(self) -> usize {
        match self {
            EnvFamily::Gridworld => gridworld::NUM_CONFIGS,
            EnvFamily::Lander => lander::NUM_CONFIGS,
        }
    }

    pub fn max_config(self) -> usize {
        self.num_configs() - 1
    }

    pub fn observation_width(self) -> usize {
        match self {
            EnvFamily::Gridworld => gridworld::ENCODING_WIDTH,
            EnvFamily::Lander => lander::ENCODING_WIDTH,
        }
    }

    pub fn num_actions(self) -> usize {
        4
    }

    pub fn make(self, config: usize) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvFamily::Gridworld => Box::new(Gridworld::new(grid_config(config)?)),
            EnvFamily::Lander => Box::new(Lander::new(lander_config(config)?)),
        })
    }
}

impl fmt::Display for EnvFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gridworld" => Ok(EnvFamily::Gridworld),
            "lander" => Ok(EnvFamily::Lander),
            other => Err(Error::InvalidConfig(format!("unknown environment family `{other}`"))),
        }
    }
}

/// Length of the overlap of two half-open intervals.
pub fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}
