//! The `morph`, `alphas`, `eval` and `plot` subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use morphtraj::backend::{BackendKind, Partial};
use morphtraj::eval::write_reports_csv;
use morphtraj::features::magnitude_spectrogram;
use morphtraj::modes::{cyclostationary_morph, dynamic_morph, static_morph, write_trajectory};
use morphtraj::{
    binary_search_alphas, evaluate, load_wav, AdditiveSineBackend, AlphaSchedule, AudioClip, CrossfadeBackend,
    EvalSetup, LinearMelBackend, MetricReport, MorphBackend, MorphMode, PreparedPair, RemoteBackend, RemoteOptions,
    SpdpContext, StftConfig, WarpedBackend,
};

use crate::config::{parse_feature, EvalOptions, RunConfig};
use crate::metrics;
use crate::output::{load_clip_dir, spectrogram_tiles, write_atomic, write_plots, LoadedRun, Staging};

fn load_pair(cfg: &RunConfig) -> Result<PreparedPair> {
    let src = load_wav(&cfg.source).with_context(|| format!("loading source {}", cfg.source.display()))?;
    let tgt = load_wav(&cfg.target).with_context(|| format!("loading target {}", cfg.target.display()))?;
    Ok(PreparedPair::new(&src, &tgt, cfg.length_policy)?)
}

/// Strongest spectral peak of a clip, as a single partial with the clip's
/// RMS-equivalent amplitude.
fn dominant_partial(clip: &AudioClip, cfg: &StftConfig) -> Result<Partial> {
    let mags = magnitude_spectrogram(clip, cfg)?;
    let mean: Vec<f64> = mags.column_iter().map(|c| c.mean()).collect();
    let k = (1..mean.len())
        .max_by(|&a, &b| mean[a].total_cmp(&mean[b]))
        .context("spectrum has no bins above DC")?;
    let rms = (clip.samples().iter().map(|s| s * s).sum::<f64>() / clip.len() as f64).sqrt();
    Ok(Partial {
        freq_hz: k as f64 * clip.sample_rate() as f64 / cfg.n_fft as f64,
        amp: (rms * std::f64::consts::SQRT_2).min(1.0),
    })
}

/// Builds the configured backend. The additive-sine backend replaces the pair
/// with its own sine endpoints.
pub fn build_backend(cfg: &RunConfig, pair: PreparedPair) -> Result<(Box<dyn MorphBackend>, PreparedPair)> {
    let oracle = cfg.backend.param::<bool>("oracle")?.unwrap_or(true);
    let backend: Box<dyn MorphBackend> = match &cfg.backend.kind {
        BackendKind::LinearMel => Box::new(LinearMelBackend::new(&pair, cfg.stft)?.with_oracle(oracle)),
        BackendKind::Warped { exponent } => Box::new(WarpedBackend::wrap(
            LinearMelBackend::new(&pair, cfg.stft)?.with_oracle(oracle),
            *exponent,
        )?),
        BackendKind::Crossfade => Box::new(CrossfadeBackend::new(&pair)),
        BackendKind::AdditiveSine => {
            let b = AdditiveSineBackend::new(
                vec![dominant_partial(pair.source(), &cfg.stft)?],
                vec![dominant_partial(pair.target(), &cfg.stft)?],
                pair.len(),
                pair.sample_rate(),
            )?;
            let pair = b.endpoints()?;
            return Ok((Box::new(b), pair));
        }
        BackendKind::Remote { endpoint } => {
            let mut opts = RemoteOptions {
                cache_dir: cfg.cache_dir.clone(),
                ..Default::default()
            };
            opts.apply(&cfg.backend)?;
            if let Some(p) = &cfg.prompt {
                opts.init_prompt = p.clone();
            }
            if opts.init_prompt.is_empty() {
                warn!("remote backend without a prompt; the service starts from an empty text condition");
            }
            info!("registering the pair with the remote service");
            Box::new(RemoteBackend::connect(endpoint, &pair, &opts)?)
        }
    };
    Ok((backend, pair))
}

fn report_unconverged(schedule: &AlphaSchedule) {
    for (i, ok) in schedule.converged.iter().enumerate() {
        if !ok {
            warn!(
                "point {i}: target {:.4} reached {:.4} (outside tol {})",
                schedule.targets[i].first(),
                schedule.achieved[i].first(),
                schedule.tol
            );
        }
    }
}

struct Scorer {
    distance: Box<dyn morphtraj::PerceptualDistance>,
    fad: Box<dyn morphtraj::EmbeddingExtractor>,
    fid: Box<dyn morphtraj::EmbeddingExtractor>,
    source_set: Option<Vec<AudioClip>>,
}

impl Scorer {
    fn new(opts: &EvalOptions, stft: StftConfig) -> Result<Self> {
        Ok(Self {
            distance: metrics::distance(&opts.distance, stft)?,
            fad: metrics::extractor(&opts.fad_extractor, stft)?,
            fid: metrics::extractor(&opts.fid_extractor, stft)?,
            source_set: opts.source_set.as_deref().map(load_clip_dir).transpose()?,
        })
    }

    fn score(&self, clips: &[AudioClip], originals: &PreparedPair, stft: StftConfig) -> Result<MetricReport> {
        let setup = EvalSetup {
            distance: self.distance.as_ref(),
            fad_extractor: self.fad.as_ref(),
            fid_extractor: self.fid.as_ref(),
            cfg: stft,
        };
        Ok(evaluate(clips, originals, self.source_set.as_deref(), &setup)?)
    }
}

fn csv_bytes(rows: &[(String, MetricReport)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_reports_csv(&mut buf, rows)?;
    Ok(buf)
}

fn out_label(path: &Path) -> String {
    path.file_name().map_or_else(|| "trajectory".into(), |n| n.to_string_lossy().into_owned())
}

/// Searches, renders and writes one trajectory.
pub fn morph(cfg: &RunConfig) -> Result<()> {
    cfg.validate(true)?;
    let scorer = cfg.eval.enabled.then(|| Scorer::new(&cfg.eval, cfg.stft)).transpose()?;
    let pair = load_pair(cfg)?;
    let (backend, pair) = build_backend(cfg, pair)?;
    info!("{} morph with {} on {} samples", cfg.mode, cfg.backend.redacted(), pair.len());

    let traj = match cfg.mode {
        MorphMode::Static => static_morph(backend.as_ref(), &pair, cfg.target_p, &cfg.search, &cfg.stft)?,
        MorphMode::Cyclostationary => cyclostationary_morph(backend.as_ref(), &pair, &cfg.search, &cfg.stft)?,
        MorphMode::Dynamic => dynamic_morph(backend.as_ref(), &pair, &cfg.search, &cfg.stft)?,
    };
    report_unconverged(&traj.schedule);
    let report = scorer
        .map(|s| s.score(&traj.clips, &traj.pair, cfg.stft))
        .transpose()?;
    let tiles = cfg.plot.then(|| spectrogram_tiles(&traj.clips, &cfg.stft)).transpose()?;

    let staging = Staging::new(&cfg.out)?;
    let dir = staging.path();
    write_trajectory(&traj, dir)?;
    write_atomic(&dir.join("schedule.json"), traj.schedule.to_json()?.as_bytes())?;
    write_atomic(&dir.join("run.json"), cfg.to_json()?.as_bytes())?;
    if let Some(tiles) = tiles {
        write_plots(&tiles, dir)?;
    }
    if let Some(r) = report {
        write_atomic(&dir.join("report.json"), r.to_json()?.as_bytes())?;
        write_atomic(&dir.join("report.csv"), &csv_bytes(&[(out_label(&cfg.out), r)])?)?;
    }
    staging.commit()?;
    info!("wrote {}", cfg.out.display());
    Ok(())
}

/// Runs the alpha search only and writes the schedule.
pub fn alphas(cfg: &RunConfig) -> Result<()> {
    cfg.validate(false)?;
    let pair = load_pair(cfg)?;
    let (backend, pair) = build_backend(cfg, pair)?;
    let ctx = SpdpContext::new(&pair, cfg.search.feature, &cfg.stft)?;
    let schedule = binary_search_alphas(backend.as_ref(), &ctx, &cfg.search)?;
    report_unconverged(&schedule);
    for (a, p) in schedule.alphas.iter().zip(&schedule.achieved) {
        info!("alpha {a:.6} -> spdp {:.6}", p.first());
    }

    let staging = Staging::new(&cfg.out)?;
    write_atomic(&staging.path().join("schedule.json"), schedule.to_json()?.as_bytes())?;
    write_atomic(&staging.path().join("run.json"), cfg.to_json()?.as_bytes())?;
    staging.commit()?;
    Ok(())
}

/// Manifests named by an eval argument: a manifest file, a run directory, or
/// a directory whose subdirectories are runs.
pub fn find_manifests(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        bail!("{} does not exist", path.display());
    }
    if path.join("manifest.json").is_file() {
        return Ok(vec![path.join("manifest.json")]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path().join("manifest.json")))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        bail!("no manifest.json in {} or its subdirectories", path.display());
    }
    Ok(found)
}

#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub path: PathBuf,
    pub out: Option<PathBuf>,
    pub options: EvalOptions,
    /// Feature the caller expected the trajectory to be searched with.
    pub feature: Option<String>,
}

/// Scores one trajectory or a batch. Single runs get `report.json` and
/// `report.csv`; batches get one CSV row per run plus `reports/<label>.json`.
pub fn eval(req: &EvalRequest) -> Result<Vec<(String, MetricReport)>> {
    let manifests = find_manifests(&req.path)?;
    let expected = req.feature.as_deref().map(parse_feature).transpose()?;
    let batch = manifests.len() > 1 || (req.path.is_dir() && !req.path.join("manifest.json").is_file());
    // validate the metric specs before any scoring
    metrics::distance(&req.options.distance, StftConfig::default())?;
    metrics::extractor(&req.options.fad_extractor, StftConfig::default())?;
    metrics::extractor(&req.options.fid_extractor, StftConfig::default())?;

    let mut rows = Vec::with_capacity(manifests.len());
    for m in &manifests {
        let run = LoadedRun::load(m)?;
        if let Some(f) = expected {
            if f != run.manifest.feature {
                warn!(
                    "{}: searched with {}, evaluation requested for {f}; scoring anyway",
                    m.display(),
                    run.manifest.feature
                );
            }
        }
        let stft = run.stft.unwrap_or_default();
        let report = Scorer::new(&req.options, stft)?
            .score(&run.clips, &run.originals, stft)
            .with_context(|| format!("scoring {}", m.display()))?;
        info!("{}:\n{report}", run.label());
        rows.push((run.label(), report));
    }

    if batch {
        let out = req.out.clone().unwrap_or_else(|| req.path.clone());
        for (label, r) in &rows {
            write_atomic(&out.join("reports").join(format!("{label}.json")), r.to_json()?.as_bytes())?;
        }
        write_atomic(&out.join("report.csv"), &csv_bytes(&rows)?)?;
    } else {
        let out = req
            .out
            .clone()
            .unwrap_or_else(|| manifests[0].parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
        write_atomic(&out.join("report.json"), rows[0].1.to_json()?.as_bytes())?;
        write_atomic(&out.join("report.csv"), &csv_bytes(&rows)?)?;
    }
    Ok(rows)
}

/// Writes spectrogram images for a written trajectory.
pub fn plot(manifest: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let run = LoadedRun::load(manifest)?;
    let stft = run.stft.unwrap_or_default();
    let tiles = spectrogram_tiles(&run.clips, &stft)?;
    write_plots(&tiles, out.unwrap_or(&run.dir))
}
