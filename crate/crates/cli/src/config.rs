//! Run configuration. A flat `key = value` file is read first, command-line
//! flags are laid over it, and the result is resolved into a [`RunConfig`]
//! with every default filled in.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use morphtraj::backend::BackendKind;
use morphtraj::{BackendDescriptor, Feature, LengthPolicy, MorphMode, SearchConfig, StftConfig, CANONICAL_RATE};
use serde::{Deserialize, Serialize, Serializer};

use crate::metrics;

/// Overrides the remote endpoint from any config source.
pub const ENDPOINT_ENV: &str = "MORPHTRAJ_ENDPOINT";

pub const KEYS: &[&str] = &[
    "source",
    "target",
    "backend",
    "n",
    "tol",
    "max_iters",
    "feature",
    "mode",
    "target_p",
    "out",
    "prompt",
    "distance",
    "fad_extractor",
    "fid_extractor",
    "source_set",
    "length_policy",
    "cache_dir",
    "plot",
    "eval",
    "n_fft",
    "hop",
    "n_mels",
    "fmin_hz",
    "fmax_hz",
    "log_floor",
];

/// Relative values of these keys are taken from the config file's directory.
const PATH_KEYS: &[&str] = &["source", "target", "out", "source_set", "cache_dir"];

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Unresolved key/value settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses config text. Blank lines and lines starting with `#` are
    /// skipped; values may be wrapped in double quotes.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut out = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got {line:?}", i + 1))?;
            let key = normalize_key(k);
            let mut value = v.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            if out.values.contains_key(&key) {
                bail!("line {}: duplicate key {key:?}", i + 1);
            }
            let value = match base {
                Some(dir) if PATH_KEYS.contains(&key.as_str()) && Path::new(value).is_relative() => {
                    dir.join(value).to_string_lossy().into_owned()
                }
                _ => value.to_string(),
            };
            out.set(&key, value).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path.parent()).with_context(|| format!("in config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = normalize_key(key);
        if !KEYS.contains(&key.as_str()) {
            bail!("unknown config key {key:?}");
        }
        self.values.insert(key, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// `other` wins on every key it sets.
    pub fn overlay(mut self, other: Settings) -> Self {
        self.values.extend(other.values);
        self
    }

    fn parsed<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| anyhow!("bad value {v:?} for {key}: {e}")),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).filter(|v| !v.is_empty()).map(PathBuf::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score the trajectory right after a morph run.
    pub enabled: bool,
    pub distance: String,
    pub fad_extractor: String,
    pub fid_extractor: String,
    /// Reference clips for the Fréchet distances; the pair when absent.
    pub source_set: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            enabled: false,
            distance: metrics::DEFAULT_DISTANCE.into(),
            fad_extractor: metrics::DEFAULT_FAD_EXTRACTOR.into(),
            fid_extractor: metrics::DEFAULT_FID_EXTRACTOR.into(),
            source_set: None,
        }
    }
}

fn serialize_redacted<S: Serializer>(d: &BackendDescriptor, s: S) -> Result<S::Ok, S::Error> {
    d.redacted().serialize(s)
}

/// Fully resolved settings of one run. Serialises with the remote endpoint
/// removed.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(serialize_with = "serialize_redacted")]
    pub backend: BackendDescriptor,
    pub prompt: Option<String>,
    pub search: SearchConfig,
    pub mode: MorphMode,
    /// SPDP first component of the single static hybrid.
    pub target_p: f64,
    pub length_policy: LengthPolicy,
    pub stft: StftConfig,
    pub out: PathBuf,
    pub plot: bool,
    pub eval: EvalOptions,
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Applies defaults. `endpoint` (normally from [`ENDPOINT_ENV`]) replaces
    /// the endpoint of a remote backend.
    pub fn resolve(s: &Settings, endpoint: Option<String>) -> Result<Self> {
        let need = |key: &str| s.path(key).ok_or_else(|| anyhow!("missing required setting `{key}`"));
        let mut backend: BackendDescriptor = s.parsed("backend", BackendDescriptor::new(BackendKind::LinearMel))?;
        if let (BackendKind::Remote { endpoint: e }, Some(env)) = (&mut backend.kind, endpoint) {
            *e = env.trim().to_string();
        }

        let d = StftConfig::default();
        let stft = StftConfig {
            n_fft: s.parsed("n_fft", d.n_fft)?,
            hop: s.parsed("hop", d.hop)?,
            n_mels: s.parsed("n_mels", d.n_mels)?,
            fmin_hz: s.parsed("fmin_hz", d.fmin_hz)?,
            fmax_hz: s.parsed("fmax_hz", d.fmax_hz)?,
            log_floor: s.parsed("log_floor", d.log_floor)?,
            ..d
        };
        let sd = SearchConfig::default();
        let search = SearchConfig {
            n_points: s.parsed("n", sd.n_points)?,
            tol: s.parsed("tol", sd.tol)?,
            max_iters: s.parsed("max_iters", sd.max_iters)?,
            feature: s.parsed("feature", sd.feature)?,
        };
        let ed = EvalOptions::default();
        let eval = EvalOptions {
            enabled: s.parsed("eval", ed.enabled)?,
            distance: s.get("distance").map_or(ed.distance, str::to_string),
            fad_extractor: s.get("fad_extractor").map_or(ed.fad_extractor, str::to_string),
            fid_extractor: s.get("fid_extractor").map_or(ed.fid_extractor, str::to_string),
            source_set: s.path("source_set"),
        };

        Ok(Self {
            source: need("source")?,
            target: need("target")?,
            backend,
            prompt: s.get("prompt").map(str::to_string),
            search,
            mode: s.parsed("mode", MorphMode::Cyclostationary)?,
            target_p: s.parsed("target_p", 0.5)?,
            length_policy: s.parsed("length_policy", LengthPolicy::default())?,
            stft,
            out: need("out")?,
            plot: s.parsed("plot", false)?,
            eval,
            cache_dir: s.path("cache_dir"),
        })
    }

    /// Checks everything that can fail before any output is created.
    pub fn validate(&self, rendering: bool) -> Result<()> {
        for (what, p) in [("source", &self.source), ("target", &self.target)] {
            if !p.is_file() {
                bail!("{what} file {} does not exist", p.display());
            }
        }
        self.search.validate()?;
        self.stft.validate(CANONICAL_RATE)?;
        if let BackendKind::Remote { endpoint } = &self.backend.kind {
            if endpoint.is_empty() {
                bail!("remote backend needs an endpoint: set {ENDPOINT_ENV} or use remote:<url>");
            }
        }
        if !rendering {
            return Ok(());
        }
        match self.mode {
            MorphMode::Static if !(self.target_p > 0.0 && self.target_p < 1.0) => {
                bail!("target_p must be in (0, 1), got {}", self.target_p)
            }
            MorphMode::Cyclostationary if self.search.n_points < 3 => {
                bail!("cyclostationary mode needs n >= 3, got {}", self.search.n_points)
            }
            _ => {}
        }
        if self.eval.enabled {
            metrics::distance(&self.eval.distance, self.stft)?;
            metrics::extractor(&self.eval.fad_extractor, self.stft)?;
            metrics::extractor(&self.eval.fid_extractor, self.stft)?;
            if let Some(dir) = &self.eval.source_set {
                if !dir.is_dir() {
                    bail!("source set directory {} does not exist", dir.display());
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Feature named in a setting, for callers outside a full run.
pub fn parse_feature(s: &str) -> Result<Feature> {
    s.parse().map_err(|e| anyhow!("{e}"))
}
