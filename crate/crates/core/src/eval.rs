//! Evaluation protocol: greedy rollouts per configuration, classifier
//! metrics, return and uncertainty sweeps, and the 1-D regression demo.
//!
//! Every rollout derives its random streams from `(seed, config, episode)`,
//! so results do not depend on the order in which episodes are run.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::agent::{episode_return, DEFAULT_GAMMA};
use crate::classifier::{classify, collect_in_distribution, fit_threshold, ClassLabel, Threshold, UncertaintySample};
use crate::config::VersionTag;
use crate::env::TraceRow;
use crate::estimators::{bootstrap_train_step, sample_mask, BootstrapMask, BootstrapNetwork, BootstrapSample};
use crate::nn::{AdamConfig, OptimizerState};
use crate::rng;
use crate::snapshot::Snapshot;
use crate::{Error, Result};

pub const DEFAULT_EVAL_EPISODES: usize = 30;

/// Stream tag separating threshold-fitting rollouts from evaluation rollouts.
const THRESHOLD_STREAM: u64 = 0x5448_5245_5348;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub config: usize,
    pub episode_seed: u64,
    pub episode_return: f64,
    pub discounted_return: f64,
    pub samples: Vec<UncertaintySample>,
    pub length: usize,
    /// Visited states with the greedy actions taken.
    pub trace: Vec<TraceRow>,
}

/// Seed of episode `episode` on configuration `config`.
pub fn episode_seed(seed: u64, config: usize, episode: usize) -> u64 {
    rng::derive(seed, &[config as u64, episode as u64])
}

/// `n_episodes` greedy episodes on configuration `config`.
pub fn run_eval(snapshot: &Snapshot, config: usize, n_episodes: usize, seed: u64) -> Result<Vec<EvalRecord>> {
    (0..n_episodes).map(|episode| run_episode(snapshot, config, episode, episode_seed(seed, config, episode))).collect()
}

fn run_episode(snapshot: &Snapshot, config: usize, episode: usize, seed: u64) -> Result<EvalRecord> {
    let net = &snapshot.estimator;
    let mut env = snapshot.environment.make(config)?;
    let mut env_rng = rng::source(rng::derive(seed, &[1]));
    let mut net_rng = rng::source(rng::derive(seed, &[2]));
    let mut state = env.reset(&mut env_rng);
    let mut rewards = Vec::new();
    let mut samples = Vec::new();
    let mut trace = Vec::new();
    loop {
        let prediction = net.predict(&state, &mut net_rng)?;
        samples.push(UncertaintySample {
            score: prediction.estimate.greedy_uncertainty(),
            config,
            episode,
            step: samples.len(),
        });
        let action = prediction.estimate.greedy_action();
        let step = env.step(action)?;
        rewards.push(step.reward);
        trace.push(TraceRow {
            episode,
            step: trace.len(),
            config,
            state: std::mem::take(&mut state),
            action,
            reward: step.reward,
            terminal: step.terminal,
        });
        if step.episode_over() {
            break;
        }
        state = step.observation;
    }
    Ok(EvalRecord {
        config,
        episode_seed: seed,
        episode_return: episode_return(&rewards, 1.0),
        discounted_return: episode_return(&rewards, DEFAULT_GAMMA),
        length: samples.len(),
        samples,
        trace,
    })
}

/// Positives are OOD-configuration samples, negatives training-configuration
/// samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

pub fn confusion(in_records: &[EvalRecord], ood_records: &[EvalRecord], threshold: &Threshold) -> Result<ConfusionCounts> {
    if in_records.is_empty() || ood_records.is_empty() {
        return Err(Error::InsufficientData("confusion needs in-distribution and OOD records".into()));
    }
    let mut c = ConfusionCounts::default();
    for s in in_records.iter().flat_map(|r| &r.samples) {
        match classify(s.score, threshold) {
            ClassLabel::OutOfDistribution => c.false_pos += 1,
            ClassLabel::InDistribution => c.true_neg += 1,
        }
    }
    for s in ood_records.iter().flat_map(|r| &r.samples) {
        match classify(s.score, threshold) {
            ClassLabel::OutOfDistribution => c.true_pos += 1,
            ClassLabel::InDistribution => c.false_neg += 1,
        }
    }
    Ok(c)
}

/// `(precision, recall, f1)`, with every 0/0 taken as 0.
pub fn precision_recall_f1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
    let recall = ratio(c.true_pos, c.true_pos + c.false_neg);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub version: Option<VersionTag>,
    /// Training seed of the evaluated snapshot.
    pub seed: u64,
    pub eval_seed: u64,
    pub config: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_uncertainty: f64,
    pub mean_return: f64,
}

/// Per-configuration averages over evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub config: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_discounted_return: f64,
    /// Mean over every visited state of every episode.
    pub mean_uncertainty: f64,
}

pub fn summarize(config: usize, records: &[EvalRecord]) -> ConfigSummary {
    let n = records.len().max(1) as f64;
    let samples: Vec<f64> = records.iter().flat_map(|r| r.samples.iter().map(|s| s.score)).collect();
    ConfigSummary {
        config,
        episodes: records.len(),
        mean_return: records.iter().map(|r| r.episode_return).sum::<f64>() / n,
        mean_discounted_return: records.iter().map(|r| r.discounted_return).sum::<f64>() / n,
        mean_uncertainty: mean(&samples),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub threshold: Threshold,
    /// One row per OOD configuration, in the order requested.
    pub rows: Vec<MetricsRow>,
    /// One entry per requested configuration, training configuration included.
    pub summaries: Vec<ConfigSummary>,
    /// Evaluation episodes, parallel to `summaries`.
    pub records: Vec<Vec<EvalRecord>>,
}

/// Fits the threshold on held-out training-configuration rollouts, then
/// scores every other requested configuration against fresh training-
/// configuration rollouts.
pub fn sweep(snapshot: &Snapshot, configs: &[usize], episodes: usize, seed: u64) -> Result<SweepResult> {
    if !configs.contains(&0) {
        return Err(Error::InvalidConfig("configuration 0 is required: the threshold is fitted on it".into()));
    }
    if let Some(&bad) = configs.iter().find(|&&k| k > snapshot.environment.max_config()) {
        return Err(Error::InvalidConfig(format!(
            "{} has no configuration {bad}",
            snapshot.environment
        )));
    }
    let fit: Vec<f64> = collect_in_distribution(snapshot, episodes, rng::derive(seed, &[THRESHOLD_STREAM]))?
        .iter()
        .map(|s| s.score)
        .collect();
    let threshold = fit_threshold(&fit)?;
    let in_records = run_eval(snapshot, 0, episodes, seed)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut all_records = Vec::new();
    for &k in configs {
        if k == 0 {
            summaries.push(summarize(0, &in_records));
            all_records.push(in_records.clone());
            continue;
        }
        let records = run_eval(snapshot, k, episodes, seed)?;
        let summary = summarize(k, &records);
        let (precision, recall, f1) = precision_recall_f1(&confusion(&in_records, &records, &threshold)?);
        rows.push(MetricsRow {
            version: snapshot.version,
            seed: snapshot.seed,
            eval_seed: seed,
            config: k,
            precision,
            recall,
            f1,
            mean_uncertainty: summary.mean_uncertainty,
            mean_return: summary.mean_return,
        });
        summaries.push(summary);
        all_records.push(records);
    }
    Ok(SweepResult { threshold, rows, summaries, records: all_records })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub low_config: usize,
    pub low_uncertainty: f64,
    pub high_config: usize,
    pub high_uncertainty: f64,
}

impl CurvePoint {
    pub fn gap(&self) -> f64 {
        self.high_uncertainty - self.low_uncertainty
    }
}

/// Mean uncertainty on two configurations for each snapshot of a run.
pub fn uncertainty_over_training(
    snapshots: &[Snapshot],
    configs: (usize, usize),
    episodes: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if snapshots.len() < 2 {
        return Err(Error::InsufficientData("an uncertainty curve needs at least 2 snapshots".into()));
    }
    let level = |s: &Snapshot, k: usize| -> Result<f64> { Ok(summarize(k, &run_eval(s, k, episodes, seed)?).mean_uncertainty) };
    snapshots
        .iter()
        .map(|s| {
            Ok(CurvePoint {
                episode: s.episode,
                low_config: configs.0,
                low_uncertainty: level(s, configs.0)?,
                high_config: configs.1,
                high_uncertainty: level(s, configs.1)?,
            })
        })
        .collect()
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either input is constant or the
/// lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub const TOY_MEMBERS: usize = 10;
const TOY_POINTS_PER_CLUSTER: usize = 50;
const TOY_NOISE: f64 = 0.1;
const TOY_STEPS: usize = 2_000;
const TOY_MASK_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRegression {
    pub xs: Vec<f64>,
    /// `members[i][k]`: prediction of member `k` at `xs[i]`.
    pub members: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl ToyRegression {
    /// Mean ensemble variance over grid points inside `[lo, hi]`.
    pub fn mean_variance_in(&self, lo: f64, hi: f64) -> f64 {
        let v: Vec<f64> = self.xs.iter().zip(&self.variance).filter(|(x, _)| (lo..=hi).contains(*x)).map(|(_, v)| *v).collect();
        mean(&v)
    }
}

/// Fits a 10-member bootstrap ensemble to `y = sin x + N(0, 0.1^2)` sampled
/// on `[-3, -1] u [1, 3]` and predicts on a grid over `[-6, 6]`.
pub fn toy_regression_demo(seed: u64) -> Result<ToyRegression> {
    let mut data_rng = rng::source(rng::derive(seed, &[1]));
    let noise = Normal::new(0.0, TOY_NOISE).expect("valid noise scale");
    let mut xs = Vec::with_capacity(2 * TOY_POINTS_PER_CLUSTER);
    for (lo, hi) in [(-3.0, -1.0), (1.0, 3.0)] {
        for _ in 0..TOY_POINTS_PER_CLUSTER {
            xs.push(data_rng.random_range(lo..=hi));
        }
    }
    let inputs: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let targets: Vec<Vec<f64>> =
        xs.iter().map(|&x| vec![x.sin() + noise.sample(&mut data_rng); TOY_MEMBERS]).collect();
    let mut mask_rng = rng::source(rng::derive(seed, &[2]));
    let masks: Vec<BootstrapMask> = xs
        .iter()
        .map(|_| sample_mask(TOY_MASK_PROBABILITY, TOY_MEMBERS, &mut mask_rng))
        .collect::<Result<_>>()?;

    let mut net = BootstrapNetwork::new(1, 1, 64, TOY_MEMBERS, TOY_MASK_PROBABILITY, rng::derive(seed, &[0]))?;
    let mut opt = OptimizerState::new(&net.params, AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() });
    let batch: Vec<BootstrapSample<'_>> = inputs
        .iter()
        .zip(&targets)
        .zip(&masks)
        .map(|((state, targets), mask)| BootstrapSample { state, action: 0, mask, targets })
        .collect();
    for _ in 0..TOY_STEPS {
        bootstrap_train_step(&mut net, None, &batch, &mut opt)?;
    }

    let grid: Vec<f64> = (0..=240).map(|i| -6.0 + 0.05 * i as f64).collect();
    let mut out = ToyRegression { xs: grid.clone(), members: Vec::new(), mean: Vec::new(), variance: Vec::new() };
    for x in grid {
        let heads = net.head_values(&[x])?;
        let stats = heads.statistics();
        out.members.push((0..TOY_MEMBERS).map(|k| heads.get(k, 0)).collect());
        out.mean.push(stats.mean[0]);
        out.variance.push(stats.variance[0]);
    }
    Ok(out)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn version_name(v: Option<VersionTag>) -> &'static str {
    v.map(VersionTag::name).unwrap_or("-")
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "version",
        "seed",
        "eval_seed",
        "config",
        "precision",
        "recall",
        "f1",
        "mean_uncertainty",
        "mean_return",
    ])?;
    for r in rows {
        w.write_record([
            version_name(r.version).to_string(),
            r.seed.to_string(),
            r.eval_seed.to_string(),
            r.config.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.mean_uncertainty.to_string(),
            r.mean_return.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Identifies the run an output row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey {
    pub version: Option<VersionTag>,
    pub seed: u64,
    pub eval_seed: u64,
}

impl RunKey {
    fn fields(&self) -> [String; 3] {
        [version_name(self.version).to_string(), self.seed.to_string(), self.eval_seed.to_string()]
    }
}

pub fn write_returns(path: &Path, rows: &[(RunKey, ConfigSummary)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "version",
        "seed",
        "eval_seed",
        "config",
        "episodes",
        "mean_return",
        "mean_discounted_return",
        "mean_uncertainty",
    ])?;
    for (key, s) in rows {
        let [v, seed, eval_seed] = key.fields();
        w.write_record([
            v,
            seed,
            eval_seed,
            s.config.to_string(),
            s.episodes.to_string(),
            s.mean_return.to_string(),
            s.mean_discounted_return.to_string(),
            s.mean_uncertainty.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_uncertainty_curve(path: &Path, rows: &[(RunKey, CurvePoint)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "version",
        "seed",
        "eval_seed",
        "episode",
        "low_config",
        "low_uncertainty",
        "high_config",
        "high_uncertainty",
    ])?;
    for (key, p) in rows {
        let [v, seed, eval_seed] = key.fields();
        w.write_record([
            v,
            seed,
            eval_seed,
            p.episode.to_string(),
            p.low_config.to_string(),
            p.low_uncertainty.to_string(),
            p.high_config.to_string(),
            p.high_uncertainty.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_toy_regression(path: &Path, demo: &ToyRegression) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["x".to_string()];
    header.extend((0..TOY_MEMBERS).map(|k| format!("member_{k}")));
    header.extend(["mean".to_string(), "variance".to_string()]);
    w.write_record(&header)?;
    for i in 0..demo.xs.len() {
        let mut row = vec![demo.xs[i].to_string()];
        row.extend(demo.members[i].iter().map(f64::to_string));
        row.push(demo.mean[i].to_string());
        row.push(demo.variance[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvFamily;
    use crate::estimators::EstimatorSpec;

    fn record(config: usize, scores: &[f64]) -> EvalRecord {
        EvalRecord {
            config,
            episode_seed: 0,
            episode_return: 0.0,
            discounted_return: 0.0,
            samples: scores
                .iter()
                .enumerate()
                .map(|(step, &score)| UncertaintySample { score, config, episode: 0, step })
                .collect(),
            length: scores.len(),
            trace: Vec::new(),
        }
    }

    #[test]
    fn metric_examples() {
        let c = |tp, fp, fn_| ConfusionCounts { true_pos: tp, false_pos: fp, true_neg: 0, false_neg: fn_ };
        let (p, r, f) = precision_recall_f1(&c(9, 1, 1));
        assert!((p - 0.9).abs() < 1e-15 && (r - 0.9).abs() < 1e-15 && (f - 0.9).abs() < 1e-15);
        assert_eq!(precision_recall_f1(&c(0, 0, 0)), (0.0, 0.0, 0.0));
        let (p, r, f) = precision_recall_f1(&c(5, 5, 0));
        assert_eq!((p, r), (0.5, 1.0));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn separable_scores_have_no_errors() {
        let t = Threshold { mean: 1.0, std: 0.5, c: 1.5, count: 4 };
        let c = confusion(&[record(0, &[0.1, 1.0, 1.5])], &[record(3, &[2.0, 9.0])], &t).unwrap();
        assert_eq!(c, ConfusionCounts { true_pos: 2, false_pos: 0, true_neg: 3, false_neg: 0 });
        let inf = Threshold { c: f64::INFINITY, ..t };
        let c = confusion(&[record(0, &[0.1, 1.0])], &[record(3, &[2.0, 9.0])], &inf).unwrap();
        assert_eq!((c.true_pos, c.false_pos), (0, 0));
        assert!(confusion(&[], &[record(3, &[1.0])], &t).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[0.0, 1.0, 2.0, 3.0], &[10.0, 8.0, 3.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[0.0, 1.0, 2.0], &[1.0, 5.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&[0.0, 1.0], &[2.0, 2.0]), None);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    fn untrained(family: EnvFamily) -> Snapshot {
        Snapshot {
            environment: family,
            version: Some(VersionTag::B10),
            estimator: EstimatorSpec::bootstrap(1.0).build(family.observation_width(), family.num_actions(), 3).unwrap(),
            episode: 0,
            seed: 3,
            rng_digest: String::new(),
        }
    }

    #[test]
    fn run_eval_records() {
        let s = untrained(EnvFamily::Gridworld);
        let a = run_eval(&s, 2, 30, 7).unwrap();
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|r| r.length == r.samples.len() && r.samples.iter().all(|x| x.config == 2)));
        assert_eq!(a, run_eval(&s, 2, 30, 7).unwrap());
    }

    #[test]
    fn sweep_requires_training_config() {
        let s = untrained(EnvFamily::Gridworld);
        assert!(sweep(&s, &[1, 5], 2, 0).is_err());
        let r = sweep(&s, &[0, 1, 5], 2, 0).unwrap();
        assert_eq!(r.rows.iter().map(|m| m.config).collect::<Vec<_>>(), vec![1, 5]);
        assert_eq!(r.summaries.len(), 3);
        for m in &r.rows {
            assert!((0.0..=1.0).contains(&m.f1));
        }
    }

    #[test]
    fn curve_with_one_config_is_flat() {
        let s = untrained(EnvFamily::Gridworld);
        let mut later = s.clone();
        later.episode = 10;
        let c = uncertainty_over_training(&[s.clone(), later], (4, 4), 2, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|p| p.low_uncertainty == p.high_uncertainty));
        assert!(uncertainty_over_training(&[s], (0, 7), 2, 1).is_err());
    }
}
