//! Command-line front end for `morphtraj`.
//!
//! `morph` and `alphas` read settings from an optional `key = value` file
//! (`--config`) with flags taking precedence. Every run writes `run.json`
//! with the resolved settings; the remote endpoint is read from
//! `MORPHTRAJ_ENDPOINT` and never written out.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{EvalOptions, RunConfig, Settings, ENDPOINT_ENV};

#[derive(Debug, Parser)]
#[command(name = "morphtraj", version, about = "Perceptually uniform sound morphing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search morph factors, render the clips and write a trajectory.
    Morph(RunArgs),
    /// Search morph factors only and write schedule.json.
    Alphas(RunArgs),
    /// Score written trajectories.
    Eval(EvalArgs),
    /// Draw log-mel spectrograms of a written trajectory.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// linear-mel, warped:<exp>, crossfade, additive-sine or remote[:<url>],
    /// followed by optional `;key=value` parameters.
    #[arg(long)]
    pub backend: Option<String>,
    /// Number of trajectory points, endpoints included.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// log-mel, mfcc, spectral-contrast or reduced-mel:<k>.
    #[arg(long)]
    pub feature: Option<String>,
    /// static, cyclostationary or dynamic.
    #[arg(long)]
    pub mode: Option<String>,
    /// SPDP target of the static hybrid.
    #[arg(long)]
    pub target_p: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Initial text prompt for the remote backend.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Score the trajectory after rendering.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub eval: Option<bool>,
    /// lmd or cmd:<program {a} {b}>.
    #[arg(long)]
    pub distance: Option<String>,
    #[arg(long)]
    pub fad_extractor: Option<String>,
    #[arg(long)]
    pub fid_extractor: Option<String>,
    #[arg(long)]
    pub source_set: Option<PathBuf>,
    /// pad or truncate.
    #[arg(long)]
    pub length_policy: Option<String>,
    /// Disk cache for remote renders.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Write spectrogram images under plots/.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub plot: Option<bool>,
}

impl RunArgs {
    /// Flags that were given, as settings.
    pub fn to_settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let fields: [(&str, Option<String>); 19] = [
            ("source", path(&self.source)),
            ("target", path(&self.target)),
            ("backend", self.backend.clone()),
            ("n", self.n.map(|v| v.to_string())),
            ("tol", self.tol.map(|v| v.to_string())),
            ("max_iters", self.max_iters.map(|v| v.to_string())),
            ("feature", self.feature.clone()),
            ("mode", self.mode.clone()),
            ("target_p", self.target_p.map(|v| v.to_string())),
            ("out", path(&self.out)),
            ("prompt", self.prompt.clone()),
            ("eval", self.eval.map(|v| v.to_string())),
            ("distance", self.distance.clone()),
            ("fad_extractor", self.fad_extractor.clone()),
            ("fid_extractor", self.fid_extractor.clone()),
            ("source_set", path(&self.source_set)),
            ("length_policy", self.length_policy.clone()),
            ("cache_dir", path(&self.cache_dir)),
            ("plot", self.plot.map(|v| v.to_string())),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                s.set(k, v)?;
            }
        }
        Ok(s)
    }

    /// File settings overlaid by flags, plus the endpoint from the environment.
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let env = std::env::var(ENDPOINT_ENV).ok().filter(|v| !v.trim().is_empty());
        RunConfig::resolve(&file.overlay(self.to_settings()?), env)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// manifest.json, a run directory, or a directory of run directories.
    pub manifest: PathBuf,
    /// Where reports go; defaults to the run (or batch) directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = metrics::DEFAULT_DISTANCE)]
    pub distance: String,
    #[arg(long, default_value = metrics::DEFAULT_FAD_EXTRACTOR)]
    pub fad_extractor: String,
    #[arg(long, default_value = metrics::DEFAULT_FID_EXTRACTOR)]
    pub fid_extractor: String,
    /// Reference clips for FAD/FID instead of the pair.
    #[arg(long)]
    pub source_set: Option<PathBuf>,
    /// Warn when a trajectory was searched with a different feature.
    #[arg(long)]
    pub feature: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// manifest.json or its run directory.
    pub manifest: PathBuf,
    /// Directory that receives plots/; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Morph(a) => commands::morph(&a.resolve()?),
        Command::Alphas(a) => commands::alphas(&a.resolve()?),
        Command::Eval(a) => {
            let req = commands::EvalRequest {
                path: a.manifest,
                out: a.out,
                options: EvalOptions {
                    enabled: true,
                    distance: a.distance,
                    fad_extractor: a.fad_extractor,
                    fid_extractor: a.fid_extractor,
                    source_set: a.source_set,
                },
                feature: a.feature,
            };
            commands::eval(&req).map(|_| ())
        }
        Command::Plot(a) => commands::plot(&a.manifest, a.out.as_deref()).map(|_| ()),
    }
}
