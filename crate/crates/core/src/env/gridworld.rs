//! Two-room pathfinding gridworld.
//!
//! The 12x4 grid is split by a wall in column 6 that covers rows 1 and 2;
//! rows 0 and 3 of that column are the hallways. Configuration `k` draws the
//! agent's start column from `[k, 5 + k)` and the goal column from
//! `[7 - k, 12 - k)`; rows are drawn from `[0, 4)` for both.

use std::ops::Range;

use rand::Rng;

use super::{Environment, StepResult};
use crate::rng::RandomSource;
use crate::{Error, Result};

pub const WIDTH: usize = 12;
pub const HEIGHT: usize = 4;
pub const PLANE: usize = WIDTH * HEIGHT;
pub const ENCODING_WIDTH: usize = 3 * PLANE;
pub const NUM_CONFIGS: usize = 8;
pub const STEP_LIMIT: usize = 100;
pub const WALL_COLUMN: usize = 6;
pub const WALL_ROWS: [usize; 2] = [1, 2];
pub const GOAL_REWARD: f64 = 100.0;
pub const STEP_COST: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridworldConfig {
    pub index: usize,
    pub start_x: Range<usize>,
    pub goal_x: Range<usize>,
    pub y: Range<usize>,
}

pub fn grid_config(k: usize) -> Result<GridworldConfig> {
    if k >= NUM_CONFIGS {
        return Err(Error::InvalidConfig(format!("gridworld configuration {k} outside [0, {})", NUM_CONFIGS)));
    }
    Ok(GridworldConfig { index: k, start_x: k..5 + k, goal_x: 7 - k..12 - k, y: 0..HEIGHT })
}

pub fn is_wall(x: usize, y: usize) -> bool {
    x == WALL_COLUMN && WALL_ROWS.contains(&y)
}

pub fn wall_cells() -> impl Iterator<Item = (usize, usize)> {
    WALL_ROWS.iter().map(|&y| (WALL_COLUMN, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::Up, GridAction::Down, GridAction::Left, GridAction::Right];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::Env(format!("gridworld action {i} outside [0, 4)")))
    }

    fn delta(self) -> (isize, isize) {
        match self {
            GridAction::Up => (0, 1),
            GridAction::Down => (0, -1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridState {
    pub agent: (usize, usize),
    pub goal: (usize, usize),
    pub steps: usize,
    pub done: bool,
}

impl GridState {
    /// Uniform start and goal placement; placements on walls or on top of
    /// each other are redrawn.
    pub fn reset<R: Rng + ?Sized>(config: &GridworldConfig, rng: &mut R) -> Self {
        let mut draw = |xs: &Range<usize>| loop {
            let x = rng.random_range(xs.clone());
            let y = rng.random_range(config.y.clone());
            if !is_wall(x, y) {
                break (x, y);
            }
        };
        loop {
            let agent = draw(&config.start_x);
            let goal = draw(&config.goal_x);
            if agent != goal {
                return Self { agent, goal, steps: 0, done: false };
            }
        }
    }

    pub fn step(&mut self, action: GridAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step called on a finished gridworld episode".into()));
        }
        let (dx, dy) = action.delta();
        let nx = self.agent.0 as isize + dx;
        let ny = self.agent.1 as isize + dy;
        if (0..WIDTH as isize).contains(&nx) && (0..HEIGHT as isize).contains(&ny) && !is_wall(nx as usize, ny as usize) {
            self.agent = (nx as usize, ny as usize);
        }
        self.steps += 1;
        let terminal = self.agent == self.goal;
        let truncated = !terminal && self.steps >= STEP_LIMIT;
        self.done = terminal || truncated;
        Ok(StepResult {
            observation: self.encode(),
            reward: if terminal { GOAL_REWARD } else { STEP_COST },
            terminal,
            truncated,
        })
    }

    /// Agent, goal and wall one-hot planes, each flattened as `y * 12 + x`.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = vec![0.0; ENCODING_WIDTH];
        v[cell(self.agent)] = 1.0;
        v[PLANE + cell(self.goal)] = 1.0;
        for c in wall_cells() {
            v[2 * PLANE + cell(c)] = 1.0;
        }
        v
    }
}

fn cell((x, y): (usize, usize)) -> usize {
    y * WIDTH + x
}

/// Length of a shortest agent-to-goal path, by breadth-first search.
pub fn shortest_path(from: (usize, usize), to: (usize, usize)) -> Option<usize> {
    let mut dist = vec![usize::MAX; PLANE];
    let mut queue = std::collections::VecDeque::new();
    dist[cell(from)] = 0;
    queue.push_back(from);
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == to {
            return Some(dist[cell(to)]);
        }
        for a in GridAction::ALL {
            let (dx, dy) = a.delta();
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if !(0..WIDTH as isize).contains(&nx) || !(0..HEIGHT as isize).contains(&ny) {
                continue;
            }
            let next = (nx as usize, ny as usize);
            if is_wall(next.0, next.1) || dist[cell(next)] != usize::MAX {
                continue;
            }
            dist[cell(next)] = dist[cell((x, y))] + 1;
            queue.push_back(next);
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct Gridworld {
    config: GridworldConfig,
    state: Option<GridState>,
}

impl Gridworld {
    pub fn new(config: GridworldConfig) -> Self {
        Self { config, state: None }
    }

    pub fn state(&self) -> Option<&GridState> {
        self.state.as_ref()
    }
}

impl Environment for Gridworld {
    fn reset(&mut self, rng: &mut RandomSource) -> Vec<f64> {
        let s = GridState::reset(&self.config, rng);
        let enc = s.encode();
        self.state = Some(s);
        enc
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        let action = GridAction::from_index(action)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::overlap;
    use crate::rng;

    #[test]
    fn config_intervals() {
        let c0 = grid_config(0).unwrap();
        assert_eq!((c0.start_x.clone(), c0.goal_x.clone()), (0..5, 7..12));
        let c1 = grid_config(1).unwrap();
        assert_eq!((c1.start_x.clone(), c1.goal_x.clone()), (1..6, 6..11));
        let c7 = grid_config(7).unwrap();
        assert_eq!((c7.start_x.clone(), c7.goal_x.clone()), (7..12, 0..5));
        assert!(grid_config(8).is_err());
    }

    #[test]
    fn resets_respect_intervals_and_walls() {
        let c = grid_config(0).unwrap();
        let mut r = rng::source(3);
        for _ in 0..10_000 {
            let s = GridState::reset(&c, &mut r);
            assert!(c.start_x.contains(&s.agent.0) && c.goal_x.contains(&s.goal.0));
            assert!(!is_wall(s.agent.0, s.agent.1) && !is_wall(s.goal.0, s.goal.1));
        }
        for k in 0..NUM_CONFIGS {
            let c = grid_config(k).unwrap();
            for _ in 0..2_000 {
                let s = GridState::reset(&c, &mut r);
                assert!(!is_wall(s.agent.0, s.agent.1) && !is_wall(s.goal.0, s.goal.1));
                assert_ne!(s.agent, s.goal);
            }
        }
    }

    #[test]
    fn reset_is_seed_deterministic() {
        let c = grid_config(4).unwrap();
        assert_eq!(GridState::reset(&c, &mut rng::source(9)), GridState::reset(&c, &mut rng::source(9)));
    }

    #[test]
    fn reaching_goal_pays_and_terminates() {
        let mut s = GridState { agent: (8, 2), goal: (9, 2), steps: 0, done: false };
        let r = s.step(GridAction::Right).unwrap();
        assert_eq!(r.reward, 100.0);
        assert!(r.terminal && !r.truncated);
        assert!(s.step(GridAction::Left).is_err());
    }

    #[test]
    fn blocked_moves_cost_one() {
        let mut s = GridState { agent: (0, 1), goal: (9, 2), steps: 0, done: false };
        let r = s.step(GridAction::Left).unwrap();
        assert_eq!((s.agent, r.reward, r.terminal), ((0, 1), -1.0, false));
        let mut s = GridState { agent: (5, 1), goal: (9, 2), steps: 0, done: false };
        let r = s.step(GridAction::Right).unwrap();
        assert_eq!((s.agent, r.reward), ((5, 1), -1.0));
        let mut s = GridState { agent: (5, 0), goal: (9, 2), steps: 0, done: false };
        s.step(GridAction::Right).unwrap();
        assert_eq!(s.agent, (6, 0));
    }

    #[test]
    fn truncates_at_step_limit_without_terminal() {
        let mut s = GridState { agent: (0, 0), goal: (9, 2), steps: 0, done: false };
        let mut last = None;
        for _ in 0..STEP_LIMIT {
            last = Some(s.step(GridAction::Left).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminal);
        assert!(s.step(GridAction::Left).is_err());
    }

    #[test]
    fn encoding_layout() {
        let s = GridState { agent: (0, 0), goal: (9, 3), steps: 0, done: false };
        let v = s.encode();
        assert_eq!(v.len(), 144);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[..PLANE].iter().sum::<f64>(), 1.0);
        assert_eq!(v[PLANE..2 * PLANE].iter().sum::<f64>(), 1.0);
        assert_eq!(v[PLANE + 3 * WIDTH + 9], 1.0);
        assert_eq!(v[2 * PLANE..].iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn every_start_reaches_every_goal() {
        for k in 0..NUM_CONFIGS {
            let c = grid_config(k).unwrap();
            for sx in c.start_x.clone() {
                for gx in c.goal_x.clone() {
                    for sy in 0..HEIGHT {
                        for gy in 0..HEIGHT {
                            if is_wall(sx, sy) || is_wall(gx, gy) {
                                continue;
                            }
                            assert!(shortest_path((sx, sy), (gx, gy)).is_some());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn divergence_from_training_config_grows() {
        // Interval overlap with config 0 is non-increasing and strictly
        // decreasing while positive; it reaches zero at k = 5, after which the
        // distance between interval centres keeps growing.
        let span = |r: &Range<usize>| (r.start as f64, r.end as f64);
        let centre = |r: &Range<usize>| (r.start + r.end) as f64 / 2.0;
        let c0 = grid_config(0).unwrap();
        let mut previous = (f64::INFINITY, -1.0);
        for k in 0..NUM_CONFIGS {
            let c = grid_config(k).unwrap();
            let o = overlap(span(&c.start_x), span(&c0.start_x)) + overlap(span(&c.goal_x), span(&c0.goal_x));
            let d = (centre(&c.start_x) - centre(&c0.start_x)).abs() + (centre(&c.goal_x) - centre(&c0.goal_x)).abs();
            assert!(o <= previous.0 && (o < previous.0 || o == 0.0), "config {k}");
            assert!(d > previous.1, "config {k}");
            previous = (o, d);
        }
    }
}
