//! Fitted Q-learning over any [`Estimator`].
//!
//! The loop is the usual DQN arrangement: epsilon-greedy acting, a FIFO
//! replay buffer, uniform minibatches and a periodically synced target copy.
//! Bootstrap masks are drawn once, when an experience is stored, and travel
//! with it for its whole life in the buffer.

use rand::Rng;

use crate::config::VersionTag;
use crate::env::EnvFamily;
use crate::estimators::{
    argmax, bootstrap_train_step, mccd_train_step, sample_mask, BootstrapMask, BootstrapSample, Estimator,
    EstimatorSpec, MccdSample, NextValues, Prediction,
};
use crate::nn::{AdamConfig, OptimizerState};
use crate::rng::{self, RandomSource};
use crate::snapshot::Snapshot;
use crate::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub mask: Option<BootstrapMask>,
}

/// Fixed-capacity FIFO ring of experiences.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, inserted: 0 })
    }

    pub fn push(&mut self, exp: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.items[slot] = exp;
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of insertions, evicted ones included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Experiences from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity { 0 } else { (self.inserted % self.capacity as u64) as usize };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, batch: usize, rng: &mut R) -> Vec<&'a Experience> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Linear decay from `start` to `end` over the first `decay_episodes`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between gradient steps.
    pub train_frequency: usize,
    pub warmup_steps: usize,
    /// Gradient steps between target-network syncs.
    pub target_sync_interval: usize,
    pub episodes: usize,
    pub snapshot_interval: usize,
    pub optimizer: AdamConfig,
}

impl AgentConfig {
    /// Defaults for a run of `episodes` episodes; epsilon decays over the
    /// first 20% of them.
    pub fn with_episodes(episodes: usize) -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_episodes: episodes / 5 },
            buffer_capacity: 50_000,
            batch_size: 32,
            train_frequency: 1,
            warmup_steps: 1_000,
            target_sync_interval: 500,
            episodes,
            snapshot_interval: 1_000,
            optimizer: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !unit(self.epsilon.start) || !unit(self.epsilon.end) {
            return Err(Error::InvalidConfig("epsilon values must lie in [0, 1]".into()));
        }
        for (name, v) in [
            ("buffer_capacity", self.buffer_capacity),
            ("batch_size", self.batch_size),
            ("train_frequency", self.train_frequency),
            ("target_sync_interval", self.target_sync_interval),
            ("snapshot_interval", self.snapshot_interval),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::with_episodes(10_000)
    }
}

/// Epsilon-greedy over the mean Q-values; ties go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(net: &Estimator, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    let prediction = net.predict(state, rng)?;
    Ok(epsilon_greedy(&prediction, net.num_actions(), epsilon, rng))
}

pub fn epsilon_greedy<R: Rng + ?Sized>(prediction: &Prediction, num_actions: usize, epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..num_actions)
    } else {
        prediction.estimate.greedy_action()
    }
}

/// Regression targets for a minibatch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `targets[i][k]`: target of sample `i` for head `k`.
    PerHead(Vec<Vec<f64>>),
    Single(Vec<f64>),
}

/// `r` for terminal samples, otherwise `r + gamma * max_a Qbar(s', a)`.
/// Bootstrap head `k` bootstraps from head `k` of the target network.
pub fn q_targets<R: Rng + ?Sized>(
    target_net: &Estimator,
    batch: &[&Experience],
    gamma: f64,
    rng: &mut R,
) -> Result<Targets> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("target computation needs a non-empty batch".into()));
    }
    let heads = target_net.heads();
    if heads == 0 {
        let mut out = Vec::with_capacity(batch.len());
        for e in batch {
            if e.terminal {
                out.push(e.reward);
                continue;
            }
            match target_net.next_values(&e.next_state, rng)? {
                NextValues::Single(v) => out.push(e.reward + gamma * v[argmax(&v)]),
                NextValues::PerHead(_) => unreachable!("headless estimator returned heads"),
            }
        }
        return Ok(Targets::Single(out));
    }
    let mut out = Vec::with_capacity(batch.len());
    for e in batch {
        if e.terminal {
            out.push(vec![e.reward; heads]);
            continue;
        }
        match target_net.next_values(&e.next_state, rng)? {
            NextValues::PerHead(m) => out.push(
                (0..heads)
                    .map(|k| {
                        let q = m.head(k);
                        e.reward + gamma * q[argmax(q)]
                    })
                    .collect(),
            ),
            NextValues::Single(_) => unreachable!("bootstrap estimator returned a single vector"),
        }
    }
    Ok(Targets::PerHead(out))
}

/// Discounted sum `sum_k gamma^k r_k`.
pub fn episode_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Applies one update of `net` on `batch` with the given targets.
pub fn train_on_batch<R: Rng + ?Sized>(
    net: &mut Estimator,
    batch: &[&Experience],
    targets: &Targets,
    optimizer: &mut OptimizerState,
    rng: &mut R,
) -> Result<f64> {
    match (net, targets) {
        (Estimator::Mccd(n), Targets::Single(t)) => {
            let samples: Vec<MccdSample<'_>> = batch
                .iter()
                .zip(t)
                .map(|(e, &target)| MccdSample { state: &e.state, action: e.action, target })
                .collect();
            mccd_train_step(n, &samples, optimizer, rng)
        }
        (Estimator::Bootstrap(n), Targets::PerHead(t)) => {
            let full = BootstrapMask::all(n.heads());
            let samples = bootstrap_samples(batch, t, &full);
            bootstrap_train_step(n, None, &samples, optimizer)
        }
        (Estimator::BootstrapPrior(n), Targets::PerHead(t)) => {
            let full = BootstrapMask::all(n.trainable.heads());
            let samples = bootstrap_samples(batch, t, &full);
            n.train_step(&samples, optimizer)
        }
        _ => Err(Error::Shape("target kind does not match the estimator".into())),
    }
}

fn bootstrap_samples<'a>(
    batch: &[&'a Experience],
    targets: &'a [Vec<f64>],
    full: &'a BootstrapMask,
) -> Vec<BootstrapSample<'a>> {
    batch
        .iter()
        .zip(targets)
        .map(|(e, t)| BootstrapSample {
            state: &e.state,
            action: e.action,
            mask: e.mask.as_ref().unwrap_or(full),
            targets: t,
        })
        .collect()
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub episode: usize,
    pub episode_return: f64,
    pub steps: usize,
    /// Mean minibatch loss over the episode's gradient steps (NaN if none).
    pub loss: f64,
    pub epsilon: f64,
    /// Mean greedy-action uncertainty over the states visited this episode.
    pub mean_uncertainty: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshots in episode order, starting with the untrained network.
    pub snapshots: Vec<Snapshot>,
    pub log: Vec<TrainLogRow>,
}

impl TrainOutcome {
    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("training always emits the initial snapshot")
    }
}

/// Independent random streams of one training run.
struct Streams {
    env: RandomSource,
    policy: RandomSource,
    masks: RandomSource,
    replay: RandomSource,
    dropout: RandomSource,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let s = |k| rng::source(rng::derive(seed, &[k]));
        Self { env: s(1), policy: s(2), masks: s(3), replay: s(4), dropout: s(5) }
    }

    fn digest(&self) -> String {
        [&self.env, &self.policy, &self.masks, &self.replay, &self.dropout]
            .iter()
            .map(|r| rng::digest(r))
            .collect::<Vec<_>>()
            .join(":")
    }
}

/// Replay, online and target networks of one agent, advanced one
/// environment step at a time.
#[derive(Debug, Clone)]
pub struct Learner {
    config: AgentConfig,
    online: Estimator,
    target: Estimator,
    optimizer: OptimizerState,
    buffer: ReplayBuffer,
    env_steps: u64,
    gradient_steps: u64,
}

impl Learner {
    pub fn new(online: Estimator, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            target: online.clone(),
            optimizer: OptimizerState::new(online.trainable(), config.optimizer),
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            online,
            config,
            env_steps: 0,
            gradient_steps: 0,
        })
    }

    pub fn online(&self) -> &Estimator {
        &self.online
    }

    pub fn target(&self) -> &Estimator {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    /// Stores one transition, drawing its bootstrap mask now.
    #[allow(clippy::too_many_arguments)]
    pub fn observe<R: Rng + ?Sized>(
        &mut self,
        state: Vec<f64>,
        action: usize,
        reward: f64,
        next_state: Vec<f64>,
        terminal: bool,
        mask_rng: &mut R,
    ) -> Result<()> {
        let mask = match self.online.mask_probability() {
            Some(p) => Some(sample_mask(p, self.online.heads(), mask_rng)?),
            None => None,
        };
        self.buffer.push(Experience { state, action, reward, next_state, terminal, mask });
        self.env_steps += 1;
        Ok(())
    }

    /// Runs a gradient step if warm-up is over and the train frequency
    /// divides the step count, syncing the target network on schedule.
    /// Returns the minibatch loss of the step, if one ran.
    pub fn maybe_train<R: Rng + ?Sized, D: Rng + ?Sized>(&mut self, replay_rng: &mut R, dropout_rng: &mut D) -> Result<Option<f64>> {
        let c = &self.config;
        if self.env_steps <= c.warmup_steps as u64 || self.env_steps % c.train_frequency as u64 != 0 {
            return Ok(None);
        }
        let batch = self.buffer.sample(c.batch_size, replay_rng);
        let targets = q_targets(&self.target, &batch, c.gamma, dropout_rng)?;
        let loss = train_on_batch(&mut self.online, &batch, &targets, &mut self.optimizer, dropout_rng)?;
        if !loss.is_finite() || !self.online.trainable().is_finite() {
            return Err(Error::Diverged { episode: 0, step: self.env_steps, loss });
        }
        self.gradient_steps += 1;
        if self.gradient_steps % c.target_sync_interval as u64 == 0 {
            self.target = self.online.clone();
        }
        Ok(Some(loss))
    }
}

/// Trains on configuration 0 of `family`.
pub fn train(
    family: EnvFamily,
    config: &AgentConfig,
    spec: &EstimatorSpec,
    version: Option<VersionTag>,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut env = family.make(0)?;
    let online = spec.build(family.observation_width(), family.num_actions(), rng::derive(seed, &[0]))?;
    let mut learner = Learner::new(online, *config)?;
    let mut streams = Streams::new(seed);
    let snapshot = |net: &Estimator, episode: usize, streams: &Streams| Snapshot {
        environment: family,
        version,
        estimator: net.clone(),
        episode,
        seed,
        rng_digest: streams.digest(),
    };

    let mut snapshots = vec![snapshot(learner.online(), 0, &streams)];
    let mut log = Vec::with_capacity(config.episodes);
    for episode in 1..=config.episodes {
        let epsilon = config.epsilon.value(episode - 1);
        let mut state = env.reset(&mut streams.env);
        let mut rewards = Vec::new();
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        let mut uncertainty_sum = 0.0;
        loop {
            let net = learner.online();
            let prediction = net.predict(&state, &mut streams.dropout)?;
            uncertainty_sum += prediction.estimate.greedy_uncertainty();
            let action = epsilon_greedy(&prediction, net.num_actions(), epsilon, &mut streams.policy);
            let step = env.step(action)?;
            rewards.push(step.reward);
            let over = step.episode_over();
            let next = step.observation;
            learner.observe(std::mem::take(&mut state), action, step.reward, next.clone(), step.terminal, &mut streams.masks)?;
            state = next;
            match learner.maybe_train(&mut streams.replay, &mut streams.dropout) {
                Ok(Some(loss)) => {
                    loss_sum += loss;
                    loss_count += 1;
                }
                Ok(None) => {}
                Err(Error::Diverged { step, loss, .. }) => return Err(Error::Diverged { episode, step, loss }),
                Err(e) => return Err(e),
            }
            if over {
                break;
            }
        }
        log.push(TrainLogRow {
            episode,
            episode_return: episode_return(&rewards, 1.0),
            steps: rewards.len(),
            loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN },
            epsilon,
            mean_uncertainty: uncertainty_sum / rewards.len() as f64,
        });
        if episode % config.snapshot_interval == 0 || episode == config.episodes {
            snapshots.push(snapshot(learner.online(), episode, &streams));
        }
    }
    Ok(TrainOutcome { snapshots, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{BootstrapNetwork, HeadMatrix};

    fn exp(tag: f64) -> Experience {
        Experience { state: vec![tag], action: 0, reward: tag, next_state: vec![tag], terminal: false, mask: None }
    }

    #[test]
    fn replay_is_fifo() {
        let mut b = ReplayBuffer::new(5).unwrap();
        for i in 0..8 {
            b.push(exp(i as f64));
        }
        assert_eq!(b.len(), 5);
        let kept: Vec<f64> = b.iter().map(|e| e.reward).collect();
        assert_eq!(kept, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(b.inserted(), 8);
    }

    #[test]
    fn epsilon_schedule_is_linear_then_flat() {
        let s = EpsilonSchedule { start: 1.0, end: 0.05, decay_episodes: 100 };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(100), 0.05);
        assert_eq!(s.value(5000), 0.05);
    }

    #[test]
    fn discounted_returns() {
        assert_eq!(episode_return(&[-1.0, -1.0, 100.0], 1.0), 98.0);
        assert!((episode_return(&[-1.0, -1.0, 100.0], 0.99) - 96.02).abs() < 1e-12);
        assert_eq!(episode_return(&[], 0.9), 0.0);
    }

    fn fixed_bootstrap(values: &[f64]) -> Estimator {
        // One head, zero hidden weights: the output equals the last-layer bias.
        let mut net = BootstrapNetwork::new(2, values.len(), 4, 1, 1.0, 0).unwrap();
        let layers = net.params.layers_mut();
        for l in layers.iter_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        layers[2].biases.copy_from_slice(values);
        Estimator::Bootstrap(net)
    }

    #[test]
    fn greedy_action_and_tie_break() {
        let mut r = rng::source(0);
        assert_eq!(select_action(&fixed_bootstrap(&[1.0, 5.0, 2.0, 0.0]), &[0.0, 0.0], 0.0, &mut r).unwrap(), 1);
        assert_eq!(select_action(&fixed_bootstrap(&[2.0; 4]), &[0.0, 0.0], 0.0, &mut r).unwrap(), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = fixed_bootstrap(&[1.0, 5.0, 2.0, 0.0]);
        let mut r = rng::source(3);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[select_action(&net, &[0.0, 0.0], 1.0, &mut r).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn target_arithmetic() {
        let net = fixed_bootstrap(&[50.0, 10.0]);
        let mut r = rng::source(0);
        let mut e = exp(0.0);
        e.state = vec![0.0, 0.0];
        e.next_state = vec![0.0, 0.0];
        e.reward = -1.0;
        let t = q_targets(&net, &[&e], 0.99, &mut r).unwrap();
        assert_eq!(t, Targets::PerHead(vec![vec![-1.0 + 0.99 * 50.0]]));
        let t = q_targets(&net, &[&e], 0.0, &mut r).unwrap();
        assert_eq!(t, Targets::PerHead(vec![vec![-1.0]]));
        e.terminal = true;
        e.reward = 100.0;
        let t = q_targets(&net, &[&e], 0.99, &mut r).unwrap();
        assert_eq!(t, Targets::PerHead(vec![vec![100.0]]));
        assert!(q_targets(&net, &[], 0.99, &mut r).is_err());
    }

    #[test]
    fn per_head_targets_use_matching_heads() {
        let mut net = BootstrapNetwork::new(2, 2, 4, 3, 1.0, 0).unwrap();
        let layers = net.params.layers_mut();
        for l in layers.iter_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        layers[2].biases.copy_from_slice(&[1.0, 2.0, 10.0, -5.0, 0.0, 7.0]);
        let net = Estimator::Bootstrap(net);
        let heads = HeadMatrix::new(3, 2, vec![1.0, 2.0, 10.0, -5.0, 0.0, 7.0]).unwrap();
        let e = Experience {
            state: vec![0.0; 2],
            action: 0,
            reward: 1.0,
            next_state: vec![0.0; 2],
            terminal: false,
            mask: None,
        };
        let t = q_targets(&net, &[&e], 0.5, &mut rng::source(0)).unwrap();
        let expected: Vec<f64> = (0..3).map(|k| 1.0 + 0.5 * heads.head(k).iter().cloned().fold(f64::MIN, f64::max)).collect();
        assert_eq!(t, Targets::PerHead(vec![expected]));
    }
}
