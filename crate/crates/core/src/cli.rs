//! Command-line front end: `train`, `eval`, `classify`, `demo-regression`.
//!
//! Every command writes a `manifest.toml` next to its outputs listing the
//! inputs, seeds, snapshot digests and produced files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use toml::{Table, Value};

use crate::agent::{train, TrainLogRow};
use crate::classifier::{classify, fit_threshold, score_states, Threshold};
use crate::config::{RunConfig, VersionTag};
use crate::env::{read_trace, trace_fields, trace_header, EnvFamily, TraceWriter};
use crate::eval::{
    sweep, toy_regression_demo, uncertainty_over_training, write_metrics, write_returns, write_toy_regression,
    write_uncertainty_curve, RunKey, DEFAULT_EVAL_EPISODES,
};
use crate::snapshot::{self, digest_bytes, Snapshot};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Parser)]
#[command(name = "ubood", version, about = "Uncertainty-based out-of-distribution detection for Q-learning agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent per seed on configuration 0.
    Train(TrainArgs),
    /// Evaluate snapshots on a set of configurations.
    Eval(EvalArgs),
    /// Label the states of an episode trace.
    Classify(ClassifyArgs),
    /// Fit the 1-D bootstrap regression demo.
    DemoRegression(DemoArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seeds` from the config.
    #[arg(long, value_parser = parse_list::<u64>)]
    pub seeds: Option<List<u64>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Snapshot files or directories; may be repeated.
    #[arg(long, required = true)]
    pub snapshot: Vec<PathBuf>,
    /// Comma-separated configuration indices; must include 0. Defaults to all.
    #[arg(long, value_parser = parse_list::<usize>)]
    pub configs: Option<List<usize>>,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_parser = parse_list::<u64>, default_value = "1000")]
    pub seeds: List<u64>,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Greedy episodes per configuration and seed.
    #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
    pub episodes: usize,
    /// Also write every evaluation episode to `traces.csv`.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Episode trace CSV.
    #[arg(long)]
    pub trace: PathBuf,
    /// Eval manifest whose threshold for this snapshot is reused as is.
    /// Without it the threshold is fitted on fresh training-configuration
    /// rollouts.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Seed for threshold rollouts and dropout sampling (first value used).
    #[arg(long, value_parser = parse_list::<u64>, default_value = "1000")]
    pub seeds: List<u64>,
    #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
    pub episodes: usize,
    #[arg(long, default_value = "classify")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Seed of the demo (first value used).
    #[arg(long, value_parser = parse_list::<u64>, default_value = "0")]
    pub seeds: List<u64>,
    #[arg(long, default_value = "demo")]
    pub out: PathBuf,
}

/// Comma-separated values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<List<T>, String> {
    let items = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("invalid list element {p:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if items.is_empty() {
        return Err("empty list".into());
    }
    Ok(List(items))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Classify(a) => cmd_classify(&a),
        Command::DemoRegression(a) => cmd_demo_regression(&a),
    }
}

fn int(v: impl TryInto<i64>) -> Value {
    Value::Integer(v.try_into().unwrap_or(i64::MAX))
}

fn file_entry(out: &Path, path: &Path) -> Result<Value> {
    let bytes = fs::read(path)?;
    let mut t = Table::new();
    let rel = path.strip_prefix(out).unwrap_or(path);
    t.insert("path".into(), Value::String(rel.display().to_string()));
    t.insert("sha256".into(), Value::String(digest_bytes(&bytes)));
    Ok(Value::Table(t))
}

fn write_manifest(out: &Path, command: &str, mut table: Table, outputs: &[PathBuf]) -> Result<()> {
    table.insert("command".into(), Value::String(command.into()));
    table.insert("tool_version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    let files = outputs.iter().map(|p| file_entry(out, p)).collect::<Result<Vec<_>>>()?;
    table.insert("outputs".into(), Value::Array(files));
    let text = toml::to_string(&table).map_err(|e| Error::InvalidConfig(format!("cannot encode manifest: {e}")))?;
    fs::write(out.join(MANIFEST), text)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.0.clone();
    }
    let out = config.output_dir.clone();
    let snap_dir = out.join("snapshots");
    fs::create_dir_all(&snap_dir)?;

    let mut outputs = Vec::new();
    for &seed in &config.seeds {
        eprintln!("training {} seed {seed}", config.version.map(VersionTag::name).unwrap_or(config.estimator.architecture.tag()));
        let outcome = train(config.environment, &config.agent, &config.estimator, config.version, seed)?;
        for s in &outcome.snapshots {
            let path = snap_dir.join(snapshot::file_name(seed, s.episode));
            s.save(&path)?;
            outputs.push(path);
        }
        let log_path = out.join(format!("train_log_seed{seed}.csv"));
        write_train_log(&log_path, &outcome.log)?;
        outputs.push(log_path);
    }
    let mut manifest = Table::new();
    manifest.insert("config".into(), Value::Table(config.to_table()));
    manifest.insert("config_file".into(), Value::String(args.config.display().to_string()));
    write_manifest(&out, "train", manifest, &outputs)
}

pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "return", "steps", "loss", "epsilon", "mean_uncertainty"])?;
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.episode_return.to_string(),
            r.steps.to_string(),
            r.loss.to_string(),
            r.epsilon.to_string(),
            r.mean_uncertainty.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads snapshot files, expanding directories (and their `snapshots`
/// subdirectory) to every `snapshot_*.txt` inside, sorted by name.
pub fn load_snapshots(paths: &[PathBuf]) -> Result<Vec<(PathBuf, Snapshot)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let dir = if p.join("snapshots").is_dir() { p.join("snapshots") } else { p.clone() };
            let mut found: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("snapshot_") && n.ends_with(".txt"))
                })
                .collect();
            if found.is_empty() {
                return Err(Error::Snapshot(format!("no snapshot files in {}", dir.display())));
            }
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    files
        .into_iter()
        .map(|f| {
            let s = Snapshot::load(&f).map_err(|e| match e {
                Error::Io(io) => Error::Snapshot(format!("cannot read {}: {io}", f.display())),
                other => other,
            })?;
            Ok((f, s))
        })
        .collect()
}

type RunId = (EnvFamily, Option<&'static str>, u64);

fn threshold_table(key: &RunKey, t: &Threshold) -> Value {
    let mut e = Table::new();
    e.insert("version".into(), Value::String(key.version.map(VersionTag::name).unwrap_or("-").into()));
    e.insert("seed".into(), int(key.seed));
    e.insert("eval_seed".into(), int(key.eval_seed));
    e.insert("mean".into(), Value::Float(t.mean));
    e.insert("std".into(), Value::Float(t.std));
    e.insert("c".into(), Value::Float(t.c));
    e.insert("count".into(), int(t.count));
    Value::Table(e)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let loaded = load_snapshots(&args.snapshot)?;
    let mut runs: BTreeMap<RunId, Vec<&Snapshot>> = BTreeMap::new();
    for (_, s) in &loaded {
        runs.entry((s.environment, s.version.map(VersionTag::name), s.seed)).or_default().push(s);
    }
    for series in runs.values_mut() {
        series.sort_by_key(|s| s.episode);
    }
    fs::create_dir_all(&args.out)?;

    let mut metrics = Vec::new();
    let mut returns = Vec::new();
    let mut curve = Vec::new();
    let mut thresholds = Vec::new();
    let mut traces: Option<TraceWriter<File>> = None;
    for ((family, _, _), series) in &runs {
        let configs = match &args.configs {
            Some(c) => c.0.clone(),
            None => (0..family.num_configs()).collect(),
        };
        let final_snapshot = *series.last().expect("groups are never empty");
        let high = configs.iter().copied().max().unwrap_or(0);
        for &eval_seed in &args.seeds.0 {
            let key = RunKey { version: final_snapshot.version, seed: final_snapshot.seed, eval_seed };
            let result = sweep(final_snapshot, &configs, args.episodes, eval_seed)?;
            thresholds.push(threshold_table(&key, &result.threshold));
            metrics.extend(result.rows);
            returns.extend(result.summaries.into_iter().map(|s| (key, s)));
            if args.trace {
                if traces.is_none() {
                    traces = Some(TraceWriter::new(File::create(args.out.join("traces.csv"))?, family.observation_width())?);
                }
                let w = traces.as_mut().expect("just created");
                for row in result.records.iter().flatten().flat_map(|r| &r.trace) {
                    w.write(row)?;
                }
            }
            if series.len() >= 2 {
                let owned: Vec<Snapshot> = series.iter().map(|s| (*s).clone()).collect();
                let points = uncertainty_over_training(&owned, (0, high), args.episodes, eval_seed)?;
                curve.extend(points.into_iter().map(|p| (key, p)));
            }
        }
    }

    let mut outputs = vec![args.out.join("metrics.csv"), args.out.join("returns.csv")];
    write_metrics(&outputs[0], &metrics)?;
    write_returns(&outputs[1], &returns)?;
    if !curve.is_empty() {
        let p = args.out.join("uncertainty_curve.csv");
        write_uncertainty_curve(&p, &curve)?;
        outputs.push(p);
    }
    if let Some(w) = traces {
        w.finish()?;
        outputs.push(args.out.join("traces.csv"));
    }

    let mut manifest = Table::new();
    let snaps = loaded
        .iter()
        .map(|(path, s)| {
            let mut t = Table::new();
            t.insert("path".into(), Value::String(path.display().to_string()));
            t.insert("sha256".into(), Value::String(digest_bytes(&fs::read(path)?)));
            t.insert("environment".into(), Value::String(s.environment.name().into()));
            t.insert("version".into(), Value::String(s.version.map(VersionTag::name).unwrap_or("-").into()));
            t.insert("seed".into(), int(s.seed));
            t.insert("episode".into(), int(s.episode));
            Ok(Value::Table(t))
        })
        .collect::<Result<Vec<_>>>()?;
    manifest.insert("snapshots".into(), Value::Array(snaps));
    if let Some(c) = &args.configs {
        manifest.insert("configs".into(), Value::Array(c.0.iter().map(|&k| int(k)).collect()));
    }
    manifest.insert("seeds".into(), Value::Array(args.seeds.0.iter().map(|&s| int(s)).collect()));
    manifest.insert("episodes".into(), int(args.episodes));
    manifest.insert("thresholds".into(), Value::Array(thresholds));
    write_manifest(&args.out, "eval", manifest, &outputs)
}

/// Finds the threshold recorded for `snapshot` in an eval manifest.
pub fn threshold_from_manifest(path: &Path, snapshot: &Snapshot) -> Result<Threshold> {
    let text = fs::read_to_string(path)?;
    let table: Table = text.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
    let version = snapshot.version.map(VersionTag::name).unwrap_or("-");
    let entries = table.get("thresholds").and_then(Value::as_array).map(Vec::as_slice).unwrap_or_default();
    let entry = entries
        .iter()
        .filter_map(Value::as_table)
        .find(|t| {
            t.get("version").and_then(Value::as_str) == Some(version)
                && t.get("seed").and_then(Value::as_integer) == i64::try_from(snapshot.seed).ok()
        })
        .ok_or_else(|| {
            Error::InvalidConfig(format!("{} has no threshold for {version} seed {}", path.display(), snapshot.seed))
        })?;
    let float = |k: &str| {
        entry.get(k).and_then(Value::as_float).ok_or_else(|| Error::InvalidConfig(format!("threshold entry lacks {k}")))
    };
    let count = entry.get("count").and_then(Value::as_integer).unwrap_or(0);
    Ok(Threshold { mean: float("mean")?, std: float("std")?, c: float("c")?, count: count.max(0) as usize })
}

pub fn cmd_classify(args: &ClassifyArgs) -> Result<()> {
    let snapshot = Snapshot::load(&args.snapshot)?;
    let seed = args.seeds.0[0];
    let (width, rows) = read_trace(BufReader::new(File::open(&args.trace)?))?;
    if width != snapshot.estimator.input_width() {
        return Err(Error::Dimension { expected: snapshot.estimator.input_width(), actual: width });
    }
    let threshold = match &args.manifest {
        Some(m) => threshold_from_manifest(m, &snapshot)?,
        None => {
            let samples = crate::classifier::collect_in_distribution(&snapshot, args.episodes, seed)?;
            fit_threshold(&samples.iter().map(|s| s.score).collect::<Vec<_>>())?
        }
    };
    let states: Vec<Vec<f64>> = rows.iter().map(|r| r.state.clone()).collect();
    let scores = score_states(&snapshot.estimator, &states, seed)?;

    fs::create_dir_all(&args.out)?;
    let labeled = args.out.join("labeled.csv");
    let mut w = csv::Writer::from_path(&labeled)?;
    let mut header = trace_header(width);
    header.extend(["score".to_string(), "label".to_string()]);
    w.write_record(&header)?;
    for (row, score) in rows.iter().zip(&scores) {
        let mut rec = trace_fields(row);
        rec.push(score.to_string());
        rec.push(classify(*score, &threshold).name().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    drop(w);

    let mut manifest = Table::new();
    manifest.insert("snapshot".into(), file_entry(Path::new(""), &args.snapshot)?);
    manifest.insert("trace".into(), file_entry(Path::new(""), &args.trace)?);
    manifest.insert("seed".into(), int(seed));
    let key = RunKey { version: snapshot.version, seed: snapshot.seed, eval_seed: seed };
    manifest.insert("threshold".into(), threshold_table(&key, &threshold));
    if let Some(m) = &args.manifest {
        manifest.insert("threshold_source".into(), Value::String(m.display().to_string()));
    }
    write_manifest(&args.out, "classify", manifest, &[labeled])
}

pub fn cmd_demo_regression(args: &DemoArgs) -> Result<()> {
    let seed = args.seeds.0[0];
    let demo = toy_regression_demo(seed)?;
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("toy_regression.csv");
    write_toy_regression(&path, &demo)?;
    let mut manifest = Table::new();
    manifest.insert("seed".into(), int(seed));
    write_manifest(&args.out, "demo-regression", manifest, &[path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<usize>("0,1,5").unwrap(), List(vec![0, 1, 5]));
        assert_eq!(parse_list::<u64>(" 3 ").unwrap(), List(vec![3]));
        assert!(parse_list::<usize>("0,x").is_err());
        assert!(parse_list::<usize>("-1").is_err());
    }

    #[test]
    fn command_line_shapes() {
        let cli = Cli::try_parse_from(["ubood", "eval", "--snapshot", "a.txt", "--configs", "0,1,5", "--seeds", "1,2"]).unwrap();
        match cli.command {
            Command::Eval(a) => {
                assert_eq!(a.configs, Some(List(vec![0, 1, 5])));
                assert_eq!(a.seeds, List(vec![1, 2]));
                assert_eq!(a.episodes, DEFAULT_EVAL_EPISODES);
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from(["ubood", "train"]).is_err());
        assert!(Cli::try_parse_from(["ubood", "eval"]).is_err());
    }
}
