//! Simplified lunar lander.
//!
//! A point mass with orientation in a 20x14 world, integrated with
//! semi-implicit Euler at 30 Hz. The ground is flat at the pad's height;
//! touching it anywhere but on the pad, or touching it too fast or too
//! tilted, is a crash. Configuration `k` draws the pad centre from
//! `[2 + k, 5 + k) x [6 - k, 12 - k)`.
//!
//! The lander always starts near the top left corner of the world at rest,
//! so shifted configurations move the pad further away and lower. Side
//! thrusters push sideways without torque, so with the constants below the
//! craft stays upright; the orientation terms are kept for other settings.

use rand::Rng;

use super::{Environment, StepResult};
use crate::rng::RandomSource;
use crate::{Error, Result};

pub const NUM_CONFIGS: usize = 6;
pub const ENCODING_WIDTH: usize = 11;

pub const WORLD_WIDTH: f64 = 20.0;
pub const WORLD_HEIGHT: f64 = 14.0;
pub const GRAVITY: f64 = 1.6;
pub const MAIN_THRUST: f64 = 4.0;
pub const SIDE_TORQUE: f64 = 0.0;
pub const SIDE_THRUST: f64 = 0.5;
pub const DT: f64 = 1.0 / 30.0;
pub const PAD_HALF_WIDTH: f64 = 1.0;
pub const LEG_OFFSET: f64 = 0.4;
pub const SAFE_SPEED: f64 = 1.5;
pub const SAFE_ANGLE: f64 = 0.3;
pub const STEP_LIMIT: usize = 500;
pub const LANDED_REWARD: f64 = 100.0;
pub const CRASH_REWARD: f64 = -100.0;
pub const MAIN_FUEL_COST: f64 = 0.3;
pub const SIDE_FUEL_COST: f64 = 0.03;
pub const PAD_PULL: f64 = 100.0;
pub const PAD_PULL_LENGTH: f64 = 3.0;
pub const SPEED_SHAPING: f64 = 10.0;
pub const ANGLE_SHAPING: f64 = 10.0;
pub const START_X: (f64, f64) = (1.0, 3.0);
pub const START_Y: f64 = 13.5;

pub const POSITION_SCALE: f64 = 10.0;
pub const VELOCITY_SCALE: f64 = 5.0;
pub const SPIN_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanderConfig {
    pub index: usize,
    pub pad_x: (f64, f64),
    pub pad_y: (f64, f64),
    pub pad_half_width: f64,
}

pub fn lander_config(k: usize) -> Result<LanderConfig> {
    if k >= NUM_CONFIGS {
        return Err(Error::InvalidConfig(format!("lander configuration {k} outside [0, {})", NUM_CONFIGS)));
    }
    let k = k as f64;
    Ok(LanderConfig {
        index: k as usize,
        pad_x: (2.0 + k, 5.0 + k),
        pad_y: (6.0 - k, 12.0 - k),
        pad_half_width: PAD_HALF_WIDTH,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LanderAction {
    Noop,
    FireLeft,
    FireMain,
    FireRight,
}

impl LanderAction {
    pub const ALL: [LanderAction; 4] =
        [LanderAction::Noop, LanderAction::FireLeft, LanderAction::FireMain, LanderAction::FireRight];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Env(format!("lander action {i} outside [0, 4)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanderState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub angle: f64,
    pub spin: f64,
    pub legs: [bool; 2],
    pub pad_center: f64,
    pub pad_half_width: f64,
    /// Height of the pad and of the flat ground around it.
    pub pad_y: f64,
    pub steps: usize,
    pub done: bool,
}

impl LanderState {
    pub fn reset<R: Rng + ?Sized>(config: &LanderConfig, rng: &mut R) -> Self {
        let pad_center = rng.random_range(config.pad_x.0..config.pad_x.1);
        let pad_y = rng.random_range(config.pad_y.0..config.pad_y.1);
        let x = rng.random_range(START_X.0..START_X.1);
        Self {
            x,
            y: START_Y,
            vx: 0.0,
            vy: 0.0,
            angle: 0.0,
            spin: 0.0,
            legs: [false; 2],
            pad_center,
            pad_half_width: config.pad_half_width,
            pad_y,
            steps: 0,
            done: false,
        }
    }

    pub fn pad_left(&self) -> f64 {
        self.pad_center - self.pad_half_width
    }

    pub fn pad_right(&self) -> f64 {
        self.pad_center + self.pad_half_width
    }

    pub fn distance_to_pad(&self) -> f64 {
        (self.x - self.pad_center).hypot(self.y - self.pad_y)
    }

    /// Shaping potential: higher when closer to the pad, slower and more
    /// upright. Per-step rewards are its increase minus fuel.
    pub fn potential(&self) -> f64 {
        PAD_PULL * (-self.distance_to_pad() / PAD_PULL_LENGTH).exp() - SPEED_SHAPING * self.vx.hypot(self.vy) - ANGLE_SHAPING * self.angle.abs()
    }

    pub fn step(&mut self, action: LanderAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step called on a finished lander episode".into()));
        }
        let before = self.potential();
        let (sin, cos) = self.angle.sin_cos();
        let (mut ax, mut ay, mut alpha, mut fuel) = (0.0, -GRAVITY, 0.0, 0.0);
        match action {
            LanderAction::Noop => {}
            LanderAction::FireMain => {
                ax -= MAIN_THRUST * sin;
                ay += MAIN_THRUST * cos;
                fuel = MAIN_FUEL_COST;
            }
            // The left thruster pushes the craft to the right and, given torque, turns it clockwise.
            LanderAction::FireLeft => {
                ax += SIDE_THRUST * cos;
                ay += SIDE_THRUST * sin;
                alpha -= SIDE_TORQUE;
                fuel = SIDE_FUEL_COST;
            }
            LanderAction::FireRight => {
                ax -= SIDE_THRUST * cos;
                ay -= SIDE_THRUST * sin;
                alpha += SIDE_TORQUE;
                fuel = SIDE_FUEL_COST;
            }
        }
        self.vx += ax * DT;
        self.vy += ay * DT;
        self.spin += alpha * DT;
        self.x += self.vx * DT;
        self.y += self.vy * DT;
        self.angle += self.spin * DT;
        self.steps += 1;

        let lift = LEG_OFFSET * self.angle.sin();
        self.legs = [self.y - lift <= self.pad_y, self.y + lift <= self.pad_y];
        let grounded = self.legs[0] || self.legs[1] || self.y <= self.pad_y;
        let out_of_bounds = self.x < 0.0 || self.x > WORLD_WIDTH || self.y > WORLD_HEIGHT;

        let (reward, terminal) = if grounded {
            let on_pad = (self.x - self.pad_center).abs() <= self.pad_half_width;
            let soft = self.vx.abs() < SAFE_SPEED && self.vy.abs() < SAFE_SPEED && self.angle.abs() < SAFE_ANGLE;
            (if on_pad && soft { LANDED_REWARD } else { CRASH_REWARD }, true)
        } else if out_of_bounds {
            (CRASH_REWARD, true)
        } else {
            (self.potential() - before - fuel, false)
        };
        let truncated = !terminal && self.steps >= STEP_LIMIT;
        self.done = terminal || truncated;
        Ok(StepResult { observation: self.encode(), reward, terminal, truncated })
    }

    /// `[x, y, vx, vy, angle, spin, leg_left, leg_right, pad_left, pad_right,
    /// pad_y]`, positions centred horizontally and scaled to roughly `[-1, 1]`.
    pub fn encode(&self) -> Vec<f64> {
        let hx = |x: f64| (x - WORLD_WIDTH / 2.0) / POSITION_SCALE;
        vec![
            hx(self.x),
            self.y / POSITION_SCALE,
            self.vx / VELOCITY_SCALE,
            self.vy / VELOCITY_SCALE,
            self.angle,
            self.spin / SPIN_SCALE,
            f64::from(u8::from(self.legs[0])),
            f64::from(u8::from(self.legs[1])),
            hx(self.pad_left()),
            hx(self.pad_right()),
            self.pad_y / POSITION_SCALE,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Lander {
    config: LanderConfig,
    state: Option<LanderState>,
}

impl Lander {
    pub fn new(config: LanderConfig) -> Self {
        Self { config, state: None }
    }

    pub fn state(&self) -> Option<&LanderState> {
        self.state.as_ref()
    }
}

impl Environment for Lander {
    fn reset(&mut self, rng: &mut RandomSource) -> Vec<f64> {
        let s = LanderState::reset(&self.config, rng);
        let enc = s.encode();
        self.state = Some(s);
        enc
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        let action = LanderAction::from_index(action)?;
        self.state.as_mut().ok_or_else(|| Error::Env("step before reset".into()))?.step(action)
    }

    fn observation_width(&self) -> usize {
        ENCODING_WIDTH
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn config_index(&self) -> usize {
        self.config.index
    }
}
