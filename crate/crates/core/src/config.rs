//! Run configuration: a flat TOML document with an explicit schema version.
//!
//! Every key is optional except `schema_version` and `environment`. A
//! version tag fills in the estimator fields; explicit estimator keys may
//! repeat the tag's values but never contradict them.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::{Table, Value};

use crate::agent::{AgentConfig, EpsilonSchedule};
use crate::env::EnvFamily;
use crate::estimators::{Architecture, EstimatorSpec, DEFAULT_HEADS};
use crate::{Error, Result};

pub const SCHEMA_VERSION: i64 = 1;

/// Named estimator variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VersionTag {
    Mc40,
    Mc80,
    B07,
    B10,
    Bp07,
    Bp10,
}

impl VersionTag {
    pub const ALL: [VersionTag; 6] =
        [VersionTag::Mc40, VersionTag::Mc80, VersionTag::B07, VersionTag::B10, VersionTag::Bp07, VersionTag::Bp10];

    pub fn name(self) -> &'static str {
        match self {
            VersionTag::Mc40 => "UB-MC40",
            VersionTag::Mc80 => "UB-MC80",
            VersionTag::B07 => "UB-B07",
            VersionTag::B10 => "UB-B10",
            VersionTag::Bp07 => "UB-BP07",
            VersionTag::Bp10 => "UB-BP10",
        }
    }

    /// Estimator fields implied by the tag. The prior scale defaults to 1.
    pub fn spec(self) -> EstimatorSpec {
        match self {
            VersionTag::Mc40 => EstimatorSpec::mccd(40),
            VersionTag::Mc80 => EstimatorSpec::mccd(80),
            VersionTag::B07 => EstimatorSpec::bootstrap(0.7),
            VersionTag::B10 => EstimatorSpec::bootstrap(1.0),
            VersionTag::Bp07 => EstimatorSpec::bootstrap_prior(0.7, 1.0),
            VersionTag::Bp10 => EstimatorSpec::bootstrap_prior(1.0, 1.0),
        }
    }
}

impl fmt::Display for VersionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VersionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VersionTag::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown version tag {s:?}")))
    }
}

const KNOWN_KEYS: &[&str] = &[
    "schema_version",
    "environment",
    "version",
    "architecture",
    "hidden",
    "heads",
    "mask_probability",
    "mc_passes",
    "prior_scale",
    "temperature",
    "weight_decay_scale",
    "entropy_scale",
    "gamma",
    "epsilon_start",
    "epsilon_end",
    "epsilon_decay_episodes",
    "buffer_capacity",
    "batch_size",
    "train_frequency",
    "warmup_steps",
    "target_sync_interval",
    "episodes",
    "snapshot_interval",
    "learning_rate",
    "seeds",
    "eval_episodes",
    "output_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub environment: EnvFamily,
    pub version: Option<VersionTag>,
    pub estimator: EstimatorSpec,
    pub agent: AgentConfig,
    pub seeds: Vec<u64>,
    /// Greedy episodes per configuration and seed during evaluation.
    pub eval_episodes: usize,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// Resolved values of every key, suitable for a manifest.
    pub fn to_table(&self) -> Table {
        let e = &self.estimator;
        let a = &self.agent;
        let mut t = Table::new();
        let int = |v: usize| Value::Integer(v as i64);
        t.insert("schema_version".into(), Value::Integer(SCHEMA_VERSION));
        t.insert("environment".into(), Value::String(self.environment.name().into()));
        if let Some(v) = self.version {
            t.insert("version".into(), Value::String(v.name().into()));
        }
        t.insert("architecture".into(), Value::String(e.architecture.tag().into()));
        t.insert("hidden".into(), int(e.hidden));
        t.insert("heads".into(), int(e.heads));
        t.insert("mask_probability".into(), Value::Float(e.mask_probability));
        t.insert("mc_passes".into(), int(e.mc_passes));
        t.insert("prior_scale".into(), Value::Float(e.prior_scale));
        t.insert("temperature".into(), Value::Float(e.temperature));
        t.insert("weight_decay_scale".into(), Value::Float(e.weight_decay_scale));
        t.insert("entropy_scale".into(), Value::Float(e.entropy_scale));
        t.insert("gamma".into(), Value::Float(a.gamma));
        t.insert("epsilon_start".into(), Value::Float(a.epsilon.start));
        t.insert("epsilon_end".into(), Value::Float(a.epsilon.end));
        t.insert("epsilon_decay_episodes".into(), int(a.epsilon.decay_episodes));
        t.insert("buffer_capacity".into(), int(a.buffer_capacity));
        t.insert("batch_size".into(), int(a.batch_size));
        t.insert("train_frequency".into(), int(a.train_frequency));
        t.insert("warmup_steps".into(), int(a.warmup_steps));
        t.insert("target_sync_interval".into(), int(a.target_sync_interval));
        t.insert("episodes".into(), int(a.episodes));
        t.insert("snapshot_interval".into(), int(a.snapshot_interval));
        t.insert("learning_rate".into(), Value::Float(a.optimizer.learning_rate));
        t.insert("seeds".into(), Value::Array(self.seeds.iter().map(|&s| Value::Integer(s as i64)).collect()));
        t.insert("eval_episodes".into(), int(self.eval_episodes));
        t.insert("output_dir".into(), Value::String(self.output_dir.display().to_string()));
        t
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        let unknown: Vec<&str> =
            table.keys().map(String::as_str).filter(|k| !KNOWN_KEYS.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidConfig(format!("unknown keys: {}", unknown.join(", "))));
        }
        let r = Reader(&table);

        match r.int("schema_version")? {
            Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::InvalidConfig(format!("unsupported schema_version {v}"))),
            None => return Err(Error::InvalidConfig("missing key: schema_version".into())),
        }
        let environment: EnvFamily = r
            .string("environment")?
            .ok_or_else(|| Error::InvalidConfig("missing key: environment".into()))?
            .parse()
            .map_err(|_| Error::InvalidConfig("environment must be \"gridworld\" or \"lander\"".into()))?;
        let version = r.string("version")?.map(|s| s.parse::<VersionTag>()).transpose()?;
        let estimator = read_estimator(&r, version)?;

        let episodes = r.usize("episodes")?.unwrap_or(10_000);
        let mut agent = AgentConfig::with_episodes(episodes);
        if let Some(v) = r.float("gamma")? {
            agent.gamma = v;
        }
        agent.epsilon = EpsilonSchedule {
            start: r.float("epsilon_start")?.unwrap_or(agent.epsilon.start),
            end: r.float("epsilon_end")?.unwrap_or(agent.epsilon.end),
            decay_episodes: r.usize("epsilon_decay_episodes")?.unwrap_or(agent.epsilon.decay_episodes),
        };
        for (key, field) in [
            ("buffer_capacity", &mut agent.buffer_capacity),
            ("batch_size", &mut agent.batch_size),
            ("train_frequency", &mut agent.train_frequency),
            ("warmup_steps", &mut agent.warmup_steps),
            ("target_sync_interval", &mut agent.target_sync_interval),
            ("snapshot_interval", &mut agent.snapshot_interval),
        ] {
            if let Some(v) = r.usize(key)? {
                *field = v;
            }
        }
        if let Some(v) = r.float("learning_rate")? {
            agent.optimizer.learning_rate = v;
        }
        agent.validate()?;

        let seeds = match table.get("seeds") {
            None => vec![0],
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                    _ => Err(Error::InvalidConfig("seeds must be non-negative integers".into())),
                })
                .collect::<Result<_>>()?,
            Some(_) => return Err(Error::InvalidConfig("seeds must be an array of integers".into())),
        };
        if seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        let eval_episodes = r.usize("eval_episodes")?.unwrap_or(30);
        let output_dir = PathBuf::from(r.string("output_dir")?.unwrap_or("runs"));
        Ok(RunConfig { environment, version, estimator, agent, seeds, eval_episodes, output_dir })
    }
}

fn read_estimator(r: &Reader<'_>, version: Option<VersionTag>) -> Result<EstimatorSpec> {
    let architecture = r
        .string("architecture")?
        .map(|s| Architecture::from_tag(s).ok_or_else(|| Error::InvalidConfig(format!("unknown architecture {s:?}"))))
        .transpose()?;
    let mut spec = match (version, architecture) {
        (Some(v), _) => v.spec(),
        (None, Some(Architecture::Mccd)) => EstimatorSpec::mccd(40),
        (None, Some(Architecture::Bootstrap)) => EstimatorSpec::bootstrap(1.0),
        (None, Some(Architecture::BootstrapPrior)) => EstimatorSpec::bootstrap_prior(1.0, 1.0),
        (None, None) => return Err(Error::InvalidConfig("missing key: version (or architecture)".into())),
    };
    let implied = version.map(VersionTag::spec);
    let conflict = |key: &str| {
        Error::InvalidConfig(format!("{key} contradicts version {}", version.map(VersionTag::name).unwrap_or("-")))
    };
    if let (Some(i), Some(a)) = (implied, architecture) {
        if i.architecture != a {
            return Err(conflict("architecture"));
        }
    }
    if let Some(v) = r.usize("heads")? {
        if implied.is_some_and(|i| i.heads != v) {
            return Err(conflict("heads"));
        }
        spec.heads = v;
    }
    if let Some(v) = r.float("mask_probability")? {
        if implied.is_some_and(|i| i.mask_probability != v) {
            return Err(conflict("mask_probability"));
        }
        spec.mask_probability = v;
    }
    if let Some(v) = r.usize("mc_passes")? {
        if implied.is_some_and(|i| i.mc_passes != v) {
            return Err(conflict("mc_passes"));
        }
        spec.mc_passes = v;
    }
    if spec.architecture != Architecture::Mccd && spec.heads == 0 {
        spec.heads = DEFAULT_HEADS;
    }
    if let Some(v) = r.usize("hidden")? {
        spec.hidden = v;
    }
    if let Some(v) = r.float("prior_scale")? {
        spec.prior_scale = v;
    }
    if let Some(v) = r.float("temperature")? {
        spec.temperature = v;
    }
    if let Some(v) = r.float("weight_decay_scale")? {
        spec.weight_decay_scale = v;
    }
    if let Some(v) = r.float("entropy_scale")? {
        spec.entropy_scale = v;
    }
    Ok(spec)
}

struct Reader<'a>(&'a Table);

impl<'a> Reader<'a> {
    fn int(&self, key: &str) -> Result<Option<i64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Integer(v)) => Ok(Some(*v)),
            Some(_) => Err(Error::InvalidConfig(format!("{key} must be an integer"))),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.int(key)? {
            Some(v) if v < 0 => Err(Error::InvalidConfig(format!("{key} must be non-negative"))),
            v => Ok(v.map(|v| v as usize)),
        }
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(Error::InvalidConfig(format!("{key} must be a number"))),
        }
    }

    fn string(&self, key: &str) -> Result<Option<&'a str>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(Error::InvalidConfig(format!("{key} must be a string"))),
        }
    }
}
