//! Versioned plain-text snapshots of trained estimators.
//!
//! ```text
//! ubood-snapshot v1
//! environment gridworld
//! version UB-B10
//! architecture bootstrap
//! ...
//! network trainable 3
//! layer 144 64 relu dense
//! weights 9216 <values>
//! biases 64 <values>
//! ...
//! end
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::VersionTag;
use crate::env::EnvFamily;
use crate::estimators::{Architecture, BootstrapNetwork, BootstrapPriorNetwork, Estimator, MccdNetwork};
use crate::nn::{Activation, LayerKind, LayerParams, LayerSpec, ParameterSet};
use crate::{Error, Result};

pub const FORMAT_HEADER: &str = "ubood-snapshot v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub environment: EnvFamily,
    pub version: Option<VersionTag>,
    pub estimator: Estimator,
    /// Training episodes completed when the snapshot was taken.
    pub episode: usize,
    pub seed: u64,
    /// Fingerprint of the training random streams at snapshot time.
    pub rng_digest: String,
}

impl Snapshot {
    pub fn to_text(&self) -> String {
        let e = &self.estimator;
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} {v}");
        };
        kv("ubood-snapshot", &"v1");
        kv("environment", &self.environment.name());
        kv("version", &self.version.map(VersionTag::name).unwrap_or("-"));
        kv("architecture", &e.architecture().tag());
        kv("actions", &e.num_actions());
        kv("heads", &e.heads());
        let (p, passes, beta, wd, es) = match e {
            Estimator::Mccd(n) => (1.0, n.mc_passes(), 0.0, n.weight_decay_scale, n.entropy_scale),
            Estimator::Bootstrap(n) => (n.mask_probability(), 0, 0.0, 0.0, 0.0),
            Estimator::BootstrapPrior(n) => (n.trainable.mask_probability(), 0, n.prior_scale(), 0.0, 0.0),
        };
        kv("mask_probability", &float(p));
        kv("mc_passes", &passes);
        kv("prior_scale", &float(beta));
        kv("temperature", &float(e.trainable().temperature()));
        kv("weight_decay_scale", &float(wd));
        kv("entropy_scale", &float(es));
        kv("seed", &self.seed);
        kv("episode", &self.episode);
        kv("rng_digest", &self.rng_digest);
        write_network(&mut out, "trainable", e.trainable());
        if let Estimator::BootstrapPrior(n) = e {
            write_network(&mut out, "prior", n.prior());
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines { inner: text.lines(), line: 0 };
        let header = lines.next()?;
        if header != FORMAT_HEADER {
            return Err(Error::Snapshot(format!("unsupported snapshot header {header:?}, expected {FORMAT_HEADER:?}")));
        }
        let environment: EnvFamily = lines.value("environment")?.parse()?;
        let version = match lines.value("version")? {
            "-" => None,
            v => Some(v.parse()?),
        };
        let arch_tag = lines.value("architecture")?;
        let architecture = Architecture::from_tag(arch_tag)
            .ok_or_else(|| Error::Snapshot(format!("unknown architecture {arch_tag:?}")))?;
        let actions: usize = lines.parsed("actions")?;
        let heads: usize = lines.parsed("heads")?;
        let mask_probability: f64 = lines.parsed("mask_probability")?;
        let mc_passes: usize = lines.parsed("mc_passes")?;
        let prior_scale: f64 = lines.parsed("prior_scale")?;
        let temperature: f64 = lines.parsed("temperature")?;
        let weight_decay_scale: f64 = lines.parsed("weight_decay_scale")?;
        let entropy_scale: f64 = lines.parsed("entropy_scale")?;
        let seed: u64 = lines.parsed("seed")?;
        let episode: usize = lines.parsed("episode")?;
        let rng_digest = lines.value("rng_digest")?.to_string();

        let trainable = read_network(&mut lines, "trainable", temperature)?;
        let estimator = match architecture {
            Architecture::Mccd => Estimator::Mccd(MccdNetwork::from_params(
                trainable,
                actions,
                mc_passes,
                weight_decay_scale,
                entropy_scale,
            )?),
            Architecture::Bootstrap => {
                Estimator::Bootstrap(BootstrapNetwork::from_params(trainable, actions, heads, mask_probability)?)
            }
            Architecture::BootstrapPrior => {
                let prior = read_network(&mut lines, "prior", temperature)?;
                let net = BootstrapNetwork::from_params(trainable, actions, heads, mask_probability)?;
                Estimator::BootstrapPrior(BootstrapPriorNetwork::from_parts(net, prior, prior_scale)?)
            }
        };
        if lines.next()? != "end" {
            return Err(Error::Snapshot(format!("line {}: expected end marker", lines.line)));
        }
        if estimator.input_width() != environment.observation_width() || actions != environment.num_actions() {
            return Err(Error::Snapshot(format!("network shape does not fit the {environment} environment")));
        }
        Ok(Snapshot { environment, version, estimator, episode, seed, rng_digest })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// SHA-256 of the serialized form, hex encoded.
    pub fn digest(&self) -> String {
        digest_bytes(self.to_text().as_bytes())
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical file name of a snapshot inside a run directory.
pub fn file_name(seed: u64, episode: usize) -> String {
    format!("snapshot_seed{seed}_ep{episode:06}.txt")
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_values(out: &mut String, name: &str, values: &[f64]) {
    let _ = write!(out, "{name} {}", values.len());
    for v in values {
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
}

fn write_network(out: &mut String, role: &str, params: &ParameterSet) {
    let _ = writeln!(out, "network {role} {}", params.layers().len());
    for (spec, layer) in params.specs().iter().zip(params.layers()) {
        let activation = match spec.activation {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        let kind = match spec.kind {
            LayerKind::Dense => "dense",
            LayerKind::ConcreteDropoutDense => "concrete_dropout_dense",
        };
        let _ = writeln!(out, "layer {} {} {activation} {kind}", spec.input_width, spec.output_width);
        write_values(out, "weights", &layer.weights);
        write_values(out, "biases", &layer.biases);
        if let Some(logit) = layer.dropout_logit {
            let _ = writeln!(out, "logit {}", float(logit));
        }
    }
}

fn read_network(lines: &mut Lines<'_>, role: &str, temperature: f64) -> Result<ParameterSet> {
    let head = lines.fields("network")?;
    if head.len() != 2 || head[0] != role {
        return Err(lines.error(&format!("expected `network {role} <layers>`")));
    }
    let count: usize = head[1].parse().map_err(|_| lines.error("bad layer count"))?;
    let mut specs = Vec::with_capacity(count);
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let f = lines.fields("layer")?;
        if f.len() != 4 {
            return Err(lines.error("expected `layer <in> <out> <activation> <kind>`"));
        }
        let input_width: usize = f[0].parse().map_err(|_| lines.error("bad input width"))?;
        let output_width: usize = f[1].parse().map_err(|_| lines.error("bad output width"))?;
        let activation = match f[2] {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => return Err(lines.error(&format!("unknown activation {other:?}"))),
        };
        let kind = match f[3] {
            "dense" => LayerKind::Dense,
            "concrete_dropout_dense" => LayerKind::ConcreteDropoutDense,
            other => return Err(lines.error(&format!("unknown layer kind {other:?}"))),
        };
        let weights = lines.values("weights")?;
        let biases = lines.values("biases")?;
        let dropout_logit = match kind {
            LayerKind::Dense => None,
            LayerKind::ConcreteDropoutDense => Some(lines.parsed("logit")?),
        };
        specs.push(LayerSpec { input_width, output_width, activation, kind });
        layers.push(LayerParams { weights, biases, dropout_logit });
    }
    ParameterSet::from_parts(specs, layers, temperature).map_err(|e| Error::Snapshot(e.to_string()))
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn error(&self, msg: &str) -> Error {
        Error::Snapshot(format!("line {}: {msg}", self.line))
    }

    fn next(&mut self) -> Result<&'a str> {
        self.line += 1;
        self.inner.next().ok_or_else(|| Error::Snapshot(format!("truncated snapshot at line {}", self.line)))
    }

    /// Fields after the expected leading key.
    fn fields(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut parts = line.split_ascii_whitespace();
        if parts.next() != Some(key) {
            return Err(self.error(&format!("expected key {key:?}")));
        }
        Ok(parts.collect())
    }

    fn value(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(self.error(&format!("expected key {key:?}"))),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.value(key)?;
        v.parse().map_err(|_| self.error(&format!("cannot parse {key} value {v:?}")))
    }

    fn values(&mut self, key: &str) -> Result<Vec<f64>> {
        let f = self.fields(key)?;
        let n: usize = f.first().and_then(|s| s.parse().ok()).ok_or_else(|| self.error("missing value count"))?;
        if f.len() != n + 1 {
            return Err(self.error(&format!("{key}: expected {n} values, found {}", f.len().saturating_sub(1))));
        }
        f[1..].iter().map(|s| s.parse().map_err(|_| self.error(&format!("bad number {s:?}")))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorSpec;
    use crate::rng;

    fn snapshot(spec: EstimatorSpec, version: Option<VersionTag>) -> Snapshot {
        let family = EnvFamily::Lander;
        Snapshot {
            environment: family,
            version,
            estimator: spec.build(family.observation_width(), family.num_actions(), 17).unwrap(),
            episode: 1000,
            seed: 17,
            rng_digest: "abc:def".into(),
        }
    }

    fn states(n: usize) -> Vec<Vec<f64>> {
        let mut r = rng::source(5);
        (0..n).map(|_| (0..11).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect()).collect()
    }

    #[test]
    fn round_trip_is_exact_for_every_architecture() {
        for (spec, tag) in [
            (EstimatorSpec::bootstrap(0.7), Some(VersionTag::B07)),
            (EstimatorSpec::bootstrap_prior(1.0, 2.5), None),
            (EstimatorSpec::mccd(40), Some(VersionTag::Mc40)),
        ] {
            let s = snapshot(spec, tag);
            let back = Snapshot::from_text(&s.to_text()).unwrap();
            assert_eq!(back, s);
            for x in states(100) {
                let mut r1 = rng::source(9);
                let mut r2 = rng::source(9);
                assert_eq!(
                    s.estimator.uncertainty_of(&x, &mut r1).unwrap(),
                    back.estimator.uncertainty_of(&x, &mut r2).unwrap()
                );
            }
        }
    }

    #[test]
    fn prior_is_preserved() {
        let s = snapshot(EstimatorSpec::bootstrap_prior(0.7, 1.0), None);
        let back = Snapshot::from_text(&s.to_text()).unwrap();
        match (&s.estimator, &back.estimator) {
            (Estimator::BootstrapPrior(a), Estimator::BootstrapPrior(b)) => assert_eq!(a.prior(), b.prior()),
            _ => panic!("architecture changed"),
        }
    }

    #[test]
    fn truncation_is_an_error() {
        let text = snapshot(EstimatorSpec::bootstrap(1.0), None).to_text();
        for cut in [0, 10, text.len() / 3, text.len() - 5] {
            assert!(Snapshot::from_text(&text[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let text = snapshot(EstimatorSpec::bootstrap(1.0), None).to_text().replacen("v1", "v9", 1);
        let err = Snapshot::from_text(&text).unwrap_err().to_string();
        assert!(err.contains("header"), "{err}");
    }

    #[test]
    fn digest_tracks_content() {
        let a = snapshot(EstimatorSpec::bootstrap(1.0), None);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.episode += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
