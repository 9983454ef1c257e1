//! Static, cyclostationary and dynamic morphs built on the alpha search.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioClip, PreparedPair};
use crate::backend::MorphBackend;
use crate::error::{Error, Result};
use crate::features::StftConfig;
use crate::spdp::{
    binary_search_alphas, search_target, AlphaSchedule, ProbeCache, SearchConfig, SpdpContext, SpdpPoint,
};

pub const MIN_SEGMENT_SECS: f64 = 0.05;
pub const DYNAMIC_CROSSFADE_SECS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphMode {
    Static,
    Cyclostationary,
    Dynamic,
}

impl fmt::Display for MorphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MorphMode::Static => "static",
            MorphMode::Cyclostationary => "cyclostationary",
            MorphMode::Dynamic => "dynamic",
        })
    }
}

impl FromStr for MorphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(MorphMode::Static),
            "cyclostationary" | "cyclo" => Ok(MorphMode::Cyclostationary),
            "dynamic" => Ok(MorphMode::Dynamic),
            other => Err(Error::InvalidArgument(format!("unknown morph mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MorphTrajectory {
    pub mode: MorphMode,
    pub pair: PreparedPair,
    pub schedule: AlphaSchedule,
    /// One clip per schedule entry, endpoints included.
    pub clips: Vec<AudioClip>,
    /// Time-sliced concatenation, dynamic mode only.
    pub dynamic: Option<AudioClip>,
}

/// Renders every alpha of a schedule. Calls run concurrently; each clip
/// depends only on its own alpha.
pub fn render_schedule(backend: &dyn MorphBackend, alphas: &[f64]) -> Result<Vec<AudioClip>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(alphas.len()).max(1);
    let chunk = alphas.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = alphas
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&a| backend.render(a)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut clips = Vec::with_capacity(alphas.len());
        for h in handles {
            clips.extend(h.join().expect("render worker panicked")?);
        }
        Ok(clips)
    })
}

/// One hybrid at SPDP first component `target_p`, between the two endpoints.
pub fn static_morph(
    backend: &dyn MorphBackend,
    pair: &PreparedPair,
    target_p: f64,
    cfg: &SearchConfig,
    stft: &StftConfig,
) -> Result<MorphTrajectory> {
    if !(target_p > 0.0 && target_p < 1.0) {
        return Err(Error::InvalidArgument(format!("static target must be in (0, 1), got {target_p}")));
    }
    cfg.validate()?;
    let ctx = SpdpContext::new(pair, cfg.feature, stft)?;
    let mut cache = ProbeCache::new();
    let hit = search_target(backend, &ctx, &mut cache, target_p, 0.0, cfg.tol, cfg.max_iters)?;
    let schedule = AlphaSchedule {
        alphas: vec![0.0, hit.alpha, 1.0],
        targets: vec![SpdpPoint::START, SpdpPoint::from_first(target_p), SpdpPoint::END],
        achieved: vec![
            ctx.measure_backend(backend, 0.0)?,
            hit.achieved,
            ctx.measure_backend(backend, 1.0)?,
        ],
        converged: vec![true, hit.converged, true],
        feature: cfg.feature,
        tol: cfg.tol,
        probes: vec![0, hit.probes, 0],
    };
    let clips = render_schedule(backend, &schedule.alphas)?;
    Ok(MorphTrajectory {
        mode: MorphMode::Static,
        pair: pair.clone(),
        schedule,
        clips,
        dynamic: None,
    })
}

/// `cfg.n_points` hybrids at evenly spaced SPDP.
pub fn cyclostationary_morph(
    backend: &dyn MorphBackend,
    pair: &PreparedPair,
    cfg: &SearchConfig,
    stft: &StftConfig,
) -> Result<MorphTrajectory> {
    if cfg.n_points < 3 {
        return Err(Error::InvalidArgument(format!(
            "cyclostationary morph needs at least 3 points, got {}",
            cfg.n_points
        )));
    }
    let ctx = SpdpContext::new(pair, cfg.feature, stft)?;
    let schedule = binary_search_alphas(backend, &ctx, cfg)?;
    let clips = render_schedule(backend, &schedule.alphas)?;
    Ok(MorphTrajectory {
        mode: MorphMode::Cyclostationary,
        pair: pair.clone(),
        schedule,
        clips,
        dynamic: None,
    })
}

/// Start sample of each of `n` equal segments of `len` samples; the last
/// segment takes the remainder.
pub fn segment_bounds(len: usize, n: usize) -> Vec<usize> {
    let seg = len / n;
    (0..n).map(|i| i * seg).chain(std::iter::once(len)).collect()
}

/// Concatenates slice `i` of `clips[i]` at its own time position, joining
/// neighbours with equal-power crossfades of `fade` samples centred on each
/// boundary.
pub fn concat_segments(clips: &[AudioClip], fade: usize) -> Result<AudioClip> {
    let first = clips
        .first()
        .ok_or_else(|| Error::InvalidArgument("no clips to concatenate".into()))?;
    let (len, rate) = (first.len(), first.sample_rate());
    if clips.iter().any(|c| c.len() != len || c.sample_rate() != rate) {
        return Err(Error::ShapeMismatch("clips differ in length or rate".into()));
    }
    let n = clips.len();
    let bounds = segment_bounds(len, n);
    if len / n < fade.max(1) {
        return Err(Error::ClipTooShort(format!(
            "{len} samples cannot hold {n} segments longer than the {fade}-sample crossfade"
        )));
    }
    let mut out = vec![0.0; len];
    for i in 0..n {
        let src = clips[i].samples();
        out[bounds[i]..bounds[i + 1]].copy_from_slice(&src[bounds[i]..bounds[i + 1]]);
    }
    let half = fade / 2;
    for i in 1..n {
        let start = bounds[i] - half;
        let (prev, next) = (clips[i - 1].samples(), clips[i].samples());
        for k in 0..fade {
            let t = start + k;
            let theta = std::f64::consts::FRAC_PI_2 * (k as f64 + 0.5) / fade as f64;
            out[t] = theta.cos() * prev[t] + theta.sin() * next[t];
        }
    }
    Ok(AudioClip::new(out, rate)?.clamped())
}

/// Searches the schedule, then plays segment `i` of the output from the clip
/// at `alpha_i`, so the sound moves from source to target over time.
pub fn dynamic_morph(
    backend: &dyn MorphBackend,
    pair: &PreparedPair,
    cfg: &SearchConfig,
    stft: &StftConfig,
) -> Result<MorphTrajectory> {
    cfg.validate()?;
    let rate = pair.sample_rate() as f64;
    let min_seg = (MIN_SEGMENT_SECS * rate).ceil() as usize;
    if pair.len() / cfg.n_points < min_seg {
        return Err(Error::ClipTooShort(format!(
            "{} samples cannot hold {} segments of {} ms",
            pair.len(),
            cfg.n_points,
            MIN_SEGMENT_SECS * 1000.0
        )));
    }
    let ctx = SpdpContext::new(pair, cfg.feature, stft)?;
    let schedule = binary_search_alphas(backend, &ctx, cfg)?;
    let clips = render_schedule(backend, &schedule.alphas)?;
    let fade = (DYNAMIC_CROSSFADE_SECS * rate).round() as usize;
    let dynamic = concat_segments(&clips, fade)?;
    Ok(MorphTrajectory {
        mode: MorphMode::Dynamic,
        pair: pair.clone(),
        schedule,
        clips,
        dynamic: Some(dynamic),
    })
}

/// On-disk index of a written trajectory. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub mode: MorphMode,
    pub alphas: Vec<f64>,
    pub targets: Vec<SpdpPoint>,
    pub achieved: Vec<SpdpPoint>,
    pub clip_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_file: Option<String>,
    pub feature: crate::spdp::Feature,
    pub original_files: Vec<String>,
}

pub fn clip_file_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(2);
    format!("clips/{i:0width$}.wav")
}

/// Writes clips, originals and `manifest.json` under `dir`.
pub fn write_trajectory(traj: &MorphTrajectory, dir: &Path) -> Result<TrajectoryManifest> {
    for sub in ["clips", "originals"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let n = traj.clips.len();
    let mut clip_files = Vec::with_capacity(n);
    for (i, clip) in traj.clips.iter().enumerate() {
        let name = clip_file_name(i, n);
        write_wav(clip, dir.join(&name))?;
        clip_files.push(name);
    }
    let dynamic_file = match &traj.dynamic {
        Some(clip) => {
            let name = "clips/dynamic.wav".to_string();
            write_wav(clip, dir.join(&name))?;
            Some(name)
        }
        None => None,
    };
    let original_files = vec!["originals/source.wav".to_string(), "originals/target.wav".to_string()];
    write_wav(traj.pair.source(), dir.join(&original_files[0]))?;
    write_wav(traj.pair.target(), dir.join(&original_files[1]))?;

    let manifest = TrajectoryManifest {
        mode: traj.mode,
        alphas: traj.schedule.alphas.clone(),
        targets: traj.schedule.targets.clone(),
        achieved: traj.schedule.achieved.clone(),
        clip_files,
        dynamic_file,
        feature: traj.schedule.feature,
        original_files,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
