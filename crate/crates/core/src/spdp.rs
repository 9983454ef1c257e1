//! Sound perceptual distance proportion and the constant-increment search.
//!
//! SPDP places a clip between the two endpoints of a pair by the ratio of its
//! feature-space distances to each of them. The search finds morph factors
//! whose SPDP first components are evenly spaced from 0 to 1.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audio::{AudioClip, PreparedPair};
use crate::backend::{MorphBackend, Probe};
use crate::error::{Error, Result};
use crate::features::{
    log_mel, mfcc, spectral_contrast, LogMelSpectrogram, PcaBasis, StftConfig,
    DEFAULT_CONTRAST_BANDS, DEFAULT_CONTRAST_QUANTILE, DEFAULT_MFCC_COEFFS,
};

/// Feature space in which SPDP distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Feature {
    #[default]
    LogMel,
    /// Log-mel frames projected onto the first `n` principal axes of the pair.
    ReducedMel(usize),
    Mfcc,
    SpectralContrast,
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::LogMel => f.write_str("log-mel"),
            Feature::ReducedMel(n) => write!(f, "reduced-mel({n})"),
            Feature::Mfcc => f.write_str("mfcc"),
            Feature::SpectralContrast => f.write_str("spectral-contrast"),
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "log-mel" | "logmel" | "mel" => return Ok(Feature::LogMel),
            "mfcc" => return Ok(Feature::Mfcc),
            "spectral-contrast" | "contrast" => return Ok(Feature::SpectralContrast),
            "reduced-mel" | "pca" => return Ok(Feature::ReducedMel(2)),
            _ => {}
        }
        let n = s
            .strip_prefix("reduced-mel(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("reduced-mel:"))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature '{s}'")))?;
        let n: usize = n
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad component count in '{s}'")))?;
        if n == 0 {
            return Err(Error::InvalidArgument("reduced-mel needs at least one component".into()));
        }
        Ok(Feature::ReducedMel(n))
    }
}

impl Serialize for Feature {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `[d0, d1] / (d0 + d1)`: proportion of distance to the source and target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpdpPoint {
    pub p: [f64; 2],
}

impl SpdpPoint {
    pub const START: SpdpPoint = SpdpPoint { p: [0.0, 1.0] };
    pub const END: SpdpPoint = SpdpPoint { p: [1.0, 0.0] };

    pub fn from_first(p0: f64) -> Self {
        Self { p: [p0, 1.0 - p0] }
    }

    pub fn from_distances(d0: f64, d1: f64) -> Result<Self> {
        let sum = d0 + d1;
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::DegenerateSpdp);
        }
        Ok(Self {
            p: [d0 / sum, d1 / sum],
        })
    }

    pub fn first(&self) -> f64 {
        self.p[0]
    }
}

/// Endpoint features of one pair, ready to score any number of probes.
#[derive(Debug, Clone)]
pub struct SpdpContext {
    feature: Feature,
    cfg: StftConfig,
    sample_rate: u32,
    len: usize,
    basis: Option<PcaBasis>,
    f0: DMatrix<f64>,
    f1: DMatrix<f64>,
}

impl SpdpContext {
    pub fn new(pair: &PreparedPair, feature: Feature, cfg: &StftConfig) -> Result<Self> {
        Self::from_clips(pair.source(), pair.target(), feature, cfg)
    }

    /// Endpoints must already share rate and length.
    pub fn from_clips(x0: &AudioClip, x1: &AudioClip, feature: Feature, cfg: &StftConfig) -> Result<Self> {
        if x0.sample_rate() != x1.sample_rate() || x0.len() != x1.len() {
            return Err(Error::ShapeMismatch(format!(
                "endpoints differ: {} samples @ {} Hz vs {} @ {} Hz",
                x0.len(),
                x0.sample_rate(),
                x1.len(),
                x1.sample_rate()
            )));
        }
        let mut ctx = Self {
            feature,
            cfg: *cfg,
            sample_rate: x0.sample_rate(),
            len: x0.len(),
            basis: None,
            f0: DMatrix::zeros(0, 0),
            f1: DMatrix::zeros(0, 0),
        };
        if feature == Feature::SpectralContrast {
            ctx.f0 = ctx.clip_features(x0)?;
            ctx.f1 = ctx.clip_features(x1)?;
        } else {
            let (m0, m1) = (log_mel(x0, cfg)?, log_mel(x1, cfg)?);
            if let Feature::ReducedMel(n) = feature {
                ctx.basis = Some(PcaBasis::fit(&[&m0, &m1], n)?);
            }
            ctx.f0 = ctx.mel_features(&m0)?;
            ctx.f1 = ctx.mel_features(&m1)?;
        }
        if ctx.f0 == ctx.f1 {
            return Err(Error::DegenerateSpdp);
        }
        Ok(ctx)
    }

    pub fn feature(&self) -> Feature {
        self.feature
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Contrast is computed from linear magnitudes and cannot use a mel probe.
    pub fn needs_audio(&self) -> bool {
        self.feature == Feature::SpectralContrast
    }

    pub fn mel_features(&self, mel: &LogMelSpectrogram) -> Result<DMatrix<f64>> {
        match self.feature {
            Feature::LogMel => Ok(mel.values().clone()),
            Feature::ReducedMel(_) => self.basis.as_ref().expect("basis fitted for reduced-mel").project(mel),
            Feature::Mfcc => mfcc(mel, DEFAULT_MFCC_COEFFS),
            Feature::SpectralContrast => Err(Error::InvalidArgument(
                "spectral contrast needs audio, not a mel spectrogram".into(),
            )),
        }
    }

    pub fn clip_features(&self, clip: &AudioClip) -> Result<DMatrix<f64>> {
        if clip.sample_rate() != self.sample_rate || (self.len > 0 && clip.len() != self.len) {
            return Err(Error::ShapeMismatch(format!(
                "probe has {} samples @ {} Hz, pair has {} @ {} Hz",
                clip.len(),
                clip.sample_rate(),
                self.len,
                self.sample_rate
            )));
        }
        match self.feature {
            Feature::SpectralContrast => spectral_contrast(
                clip,
                &self.cfg,
                DEFAULT_CONTRAST_BANDS,
                DEFAULT_CONTRAST_QUANTILE,
            ),
            _ => self.mel_features(&log_mel(clip, &self.cfg)?),
        }
    }

    pub fn measure_features(&self, f: &DMatrix<f64>) -> Result<SpdpPoint> {
        if f.shape() != self.f0.shape() {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix {:?}, endpoints {:?}",
                f.shape(),
                self.f0.shape()
            )));
        }
        SpdpPoint::from_distances((f - &self.f0).norm(), (f - &self.f1).norm())
    }

    pub fn measure_clip(&self, clip: &AudioClip) -> Result<SpdpPoint> {
        self.measure_features(&self.clip_features(clip)?)
    }

    pub fn measure(&self, probe: &Probe) -> Result<SpdpPoint> {
        match probe {
            Probe::Audio(clip) => self.measure_clip(clip),
            Probe::Mel(mel) => self.measure_features(&self.mel_features(mel)?),
        }
    }

    /// SPDP of `backend` at `alpha`, using its cheapest probe this feature allows.
    pub fn measure_backend(&self, backend: &dyn MorphBackend, alpha: f64) -> Result<SpdpPoint> {
        if self.needs_audio() {
            self.measure_clip(&backend.render(alpha)?)
        } else {
            self.measure(&backend.probe(alpha)?)
        }
    }
}

/// SPDP of `x_alpha` relative to the endpoints `x0` and `x1`.
pub fn spdp(
    x_alpha: &AudioClip,
    x0: &AudioClip,
    x1: &AudioClip,
    feature: Feature,
    cfg: &StftConfig,
) -> Result<SpdpPoint> {
    SpdpContext::from_clips(x0, x1, feature, cfg)?.measure_clip(x_alpha)
}

/// `n_points` targets evenly spaced from `[0, 1]` to `[1, 0]`.
pub fn constant_spdp_targets(n_points: usize) -> Result<Vec<SpdpPoint>> {
    if n_points < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 points, got {n_points}")));
    }
    let last = (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| match i {
            0 => SpdpPoint::START,
            i if i + 1 == n_points => SpdpPoint::END,
            i => SpdpPoint::from_first(i as f64 / last),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_points: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub feature: Feature,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_points: 5,
            tol: 1e-2,
            max_iters: 40,
            feature: Feature::LogMel,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::InvalidArgument(format!("n_points must be >= 2, got {}", self.n_points)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        Ok(())
    }

    /// Bisection probes needed per target when SPDP is linear in alpha.
    pub fn probe_budget(&self) -> usize {
        (1.0 / self.tol).log2().ceil().max(0.0) as usize + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub alphas: Vec<f64>,
    pub targets: Vec<SpdpPoint>,
    pub achieved: Vec<SpdpPoint>,
    pub converged: Vec<bool>,
    pub feature: Feature,
    pub tol: f64,
    /// Backend probes spent on each point; zero at the endpoints.
    #[serde(skip)]
    pub probes: Vec<usize>,
}

impl AlphaSchedule {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    /// Consecutive differences of the achieved first components.
    pub fn increments(&self) -> Vec<f64> {
        self.achieved.windows(2).map(|w| w[1].first() - w[0].first()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Outcome of bisecting for one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetHit {
    pub alpha: f64,
    pub achieved: SpdpPoint,
    pub converged: bool,
    pub probes: usize,
}

/// Per-search memo of SPDP by alpha.
#[derive(Default)]
pub struct ProbeCache {
    points: HashMap<u64, SpdpPoint>,
    misses: usize,
}

impl ProbeCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of distinct alphas sent to the backend.
    pub fn backend_calls(&self) -> usize {
        self.misses
    }

    pub fn measure(&mut self, backend: &dyn MorphBackend, ctx: &SpdpContext, alpha: f64) -> Result<SpdpPoint> {
        let key = alpha.to_bits();
        if let Some(p) = self.points.get(&key) {
            return Ok(*p);
        }
        let p = ctx.measure_backend(backend, alpha)?;
        self.misses += 1;
        self.points.insert(key, p);
        Ok(p)
    }
}

/// Bisects `[lower, 1]` for the alpha whose SPDP first component is within
/// `tol` of `target`. Keeps the last midpoint when `max_iters` runs out.
pub fn search_target(
    backend: &dyn MorphBackend,
    ctx: &SpdpContext,
    cache: &mut ProbeCache,
    target: f64,
    lower: f64,
    tol: f64,
    max_iters: usize,
) -> Result<TargetHit> {
    if !(0.0..=1.0).contains(&lower) {
        return Err(Error::InvalidArgument(format!("lower bound {lower} outside [0, 1]")));
    }
    let (mut t1, mut t2) = (lower, 1.0);
    let mut mid = 0.5 * (t1 + t2);
    let mut p = cache.measure(backend, ctx, mid)?;
    let mut probes = 1;
    while (p.first() - target).abs() > tol && probes < max_iters {
        if p.first() > target {
            t2 = mid;
        } else {
            t1 = mid;
        }
        mid = 0.5 * (t1 + t2);
        p = cache.measure(backend, ctx, mid)?;
        probes += 1;
    }
    let converged = (p.first() - target).abs() <= tol;
    if !converged {
        log::warn!(
            "no alpha within {tol} of target {target} after {probes} probes; keeping alpha {mid} (spdp {})",
            p.first()
        );
    }
    Ok(TargetHit {
        alpha: mid,
        achieved: p,
        converged,
        probes,
    })
}

/// Finds alphas whose SPDP points step evenly from source to target. The
/// endpoints stay at 0 and 1; every interior search starts from the previous
/// alpha, so the schedule is nondecreasing.
pub fn binary_search_alphas(
    backend: &dyn MorphBackend,
    ctx: &SpdpContext,
    cfg: &SearchConfig,
) -> Result<AlphaSchedule> {
    cfg.validate()?;
    if ctx.feature() != cfg.feature {
        return Err(Error::InvalidArgument(format!(
            "context measures {} but search asks for {}",
            ctx.feature(),
            cfg.feature
        )));
    }
    let targets = constant_spdp_targets(cfg.n_points)?;
    let n = targets.len();
    let mut cache = ProbeCache::new();

    let mut alphas = vec![0.0; n];
    let mut achieved = vec![SpdpPoint::START; n];
    let mut converged = vec![true; n];
    let mut probes = vec![0; n];
    alphas[n - 1] = 1.0;
    achieved[0] = ctx.measure_backend(backend, 0.0)?;
    achieved[n - 1] = ctx.measure_backend(backend, 1.0)?;

    let mut alpha_cur = 0.0;
    for i in 1..n - 1 {
        let hit = search_target(
            backend,
            ctx,
            &mut cache,
            targets[i].first(),
            alpha_cur,
            cfg.tol,
            cfg.max_iters,
        )?;
        alphas[i] = hit.alpha;
        achieved[i] = hit.achieved;
        converged[i] = hit.converged;
        probes[i] = hit.probes;
        alpha_cur = hit.alpha;
    }

    Ok(AlphaSchedule {
        alphas,
        targets,
        achieved,
        converged,
        feature: cfg.feature,
        tol: cfg.tol,
        probes,
    })
}
