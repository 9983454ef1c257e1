//! Objective scores for a morph trajectory: midpoint MFCC balance, Fréchet
//! distances to the source material, consecutive perceptual distances,
//! endpoint reconstruction error and timbral step size.

use std::fmt;
use std::io;
use std::path::PathBuf;
use std::process::Command;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioClip, PreparedPair};
use crate::error::{Error, Result};
use crate::features::{log_mel, mfcc, timbre_point, StftConfig, DEFAULT_MFCC_COEFFS};

/// Covariance ridge for sets too small to have full rank.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

// An axis whose range is below this fraction of its magnitude counts as constant.
const DEGENERATE_AXIS_RTOL: f64 = 1e-6;

/// Runs `f` over `items` on at most `available_parallelism` threads,
/// preserving order.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

pub trait PerceptualDistance: Send + Sync {
    fn name(&self) -> String;
    fn distance(&self, a: &AudioClip, b: &AudioClip) -> Result<f64>;
}

/// Log-mel distance: root mean square of the log-mel difference.
#[derive(Debug, Clone, Default)]
pub struct Lmd {
    pub cfg: StftConfig,
}

impl Lmd {
    pub fn new(cfg: StftConfig) -> Self {
        Self { cfg }
    }
}

impl PerceptualDistance for Lmd {
    fn name(&self) -> String {
        "lmd".into()
    }

    fn distance(&self, a: &AudioClip, b: &AudioClip) -> Result<f64> {
        let (ma, mb) = (log_mel(a, &self.cfg)?, log_mel(b, &self.cfg)?);
        if ma.values().shape() != mb.values().shape() {
            return Err(Error::ShapeMismatch(format!(
                "log-mel shapes {:?} and {:?}",
                ma.values().shape(),
                mb.values().shape()
            )));
        }
        let n = ma.values().len().max(1) as f64;
        Ok(((ma.values() - mb.values()).norm_squared() / n).sqrt())
    }
}

/// Substitutes `{a}` and `{b}` in an argument template.
fn fill_template(args: &[String], a: &str, b: Option<&str>) -> Vec<String> {
    args.iter()
        .map(|arg| {
            let s = arg.replace("{a}", a);
            match b {
                Some(b) => s.replace("{b}", b),
                None => s,
            }
        })
        .collect()
}

fn run_command(program: &str, args: &[String]) -> Result<String> {
    let out = Command::new(program)
        .args(args)
        .output()
        .map_err(|e| Error::External(format!("cannot run {program}: {e}")))?;
    if !out.status.success() {
        return Err(Error::External(format!(
            "{program} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    String::from_utf8(out.stdout).map_err(|_| Error::External(format!("{program} printed non-UTF-8 output")))
}

fn parse_floats(program: &str, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::External(format!("{program} printed '{t}', expected a finite number")))
        })
        .collect()
}

/// Delegates to an executable that receives two WAV paths through `{a}` and
/// `{b}` in its argument template and prints one number.
#[derive(Debug, Clone)]
pub struct ExternalCommandDistance {
    pub program: String,
    pub args: Vec<String>,
    pub label: String,
}

impl ExternalCommandDistance {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        let program = program.into();
        let label = format!(
            "external:{}",
            PathBuf::from(&program).file_name().map_or(program.clone(), |n| n.to_string_lossy().into_owned())
        );
        Self { program, args, label }
    }

    /// `"prog arg {a} {b}"`, split on whitespace.
    pub fn from_command_line(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty external command".into()))?;
        let args: Vec<String> = parts.collect();
        if !args.iter().any(|a| a.contains("{a}")) || !args.iter().any(|a| a.contains("{b}")) {
            return Err(Error::InvalidArgument("external distance needs {a} and {b} placeholders".into()));
        }
        Ok(Self::new(program, args))
    }
}

impl PerceptualDistance for ExternalCommandDistance {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn distance(&self, a: &AudioClip, b: &AudioClip) -> Result<f64> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let (pa, pb) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
        write_wav(a, &pa)?;
        write_wav(b, &pb)?;
        let args = fill_template(&self.args, &pa.to_string_lossy(), Some(&pb.to_string_lossy()));
        let vals = parse_floats(&self.program, &run_command(&self.program, &args)?)?;
        match vals.as_slice() {
            [d] if *d >= 0.0 => Ok(*d),
            _ => Err(Error::External(format!(
                "{} should print one nonnegative number, printed {vals:?}",
                self.program
            ))),
        }
    }
}

pub trait EmbeddingExtractor: Send + Sync {
    fn name(&self) -> String;
    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Per-band mean over frames.
    Mean,
    /// Per-band mean followed by per-band population std.
    MeanStd,
}

/// Time-pooled log-mel band statistics.
#[derive(Debug, Clone)]
pub struct MelStats {
    pub cfg: StftConfig,
    pub pooling: Pooling,
}

impl MelStats {
    pub fn new(cfg: StftConfig, pooling: Pooling) -> Self {
        Self { cfg, pooling }
    }
}

impl EmbeddingExtractor for MelStats {
    fn name(&self) -> String {
        match self.pooling {
            Pooling::Mean => "mel-mean".into(),
            Pooling::MeanStd => "mel-mean-std".into(),
        }
    }

    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let mel = log_mel(clip, &self.cfg)?;
        let v = mel.values();
        let frames = v.nrows() as f64;
        let means: Vec<f64> = v.column_iter().map(|c| c.sum() / frames).collect();
        match self.pooling {
            Pooling::Mean => Ok(means),
            Pooling::MeanStd => {
                let stds = v
                    .column_iter()
                    .zip(&means)
                    .map(|(c, m)| (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / frames).sqrt());
                Ok(means.iter().copied().chain(stds).collect())
            }
        }
    }
}

/// Executable that receives one WAV path through `{a}` and prints a
/// whitespace-separated vector.
#[derive(Debug, Clone)]
pub struct ExternalCommandExtractor {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalCommandExtractor {
    pub fn from_command_line(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty external command".into()))?;
        let args: Vec<String> = parts.collect();
        if !args.iter().any(|a| a.contains("{a}")) {
            return Err(Error::InvalidArgument("external extractor needs an {a} placeholder".into()));
        }
        Ok(Self { program, args })
    }
}

impl EmbeddingExtractor for ExternalCommandExtractor {
    fn name(&self) -> String {
        format!(
            "external:{}",
            PathBuf::from(&self.program)
                .file_name()
                .map_or(self.program.clone(), |n| n.to_string_lossy().into_owned())
        )
    }

    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let pa = dir.path().join("a.wav");
        write_wav(clip, &pa)?;
        let args = fill_template(&self.args, &pa.to_string_lossy(), None);
        let v = parse_floats(&self.program, &run_command(&self.program, &args)?)?;
        if v.is_empty() {
            return Err(Error::External(format!("{} printed no embedding", self.program)));
        }
        Ok(v)
    }
}

/// Mean and covariance of an embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    /// Unbiased covariance (zero for a single sample).
    pub fn fit(set: &[Vec<f64>]) -> Result<Self> {
        let first = set.first().ok_or_else(|| Error::InvalidArgument("empty embedding set".into()))?;
        let d = first.len();
        if d == 0 || set.iter().any(|v| v.len() != d) {
            return Err(Error::ShapeMismatch("embeddings differ in dimension".into()));
        }
        let n = set.len();
        let mut mean = DVector::zeros(d);
        for v in set {
            mean += DVector::from_column_slice(v);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for v in set {
            let c = DVector::from_column_slice(v) - &mean;
            cov.ger(1.0, &c, &c, 1.0);
        }
        if n > 1 {
            cov /= (n - 1) as f64;
        }
        Ok(Self { mean, cov, n })
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn trace_sqrt_psd(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, using the symmetric
/// form `Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))` for the cross term.
pub fn frechet_from_stats(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::ShapeMismatch("Gaussian statistics differ in dimension".into()));
    }
    let sa = psd_sqrt(cov_a);
    let cross = trace_sqrt_psd(&(&sa * cov_b * &sa));
    let value = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::InvalidArgument("Fréchet distance is not finite".into()));
    }
    Ok(value.max(0.0))
}

/// Fréchet distance between Gaussian fits of two embedding sets. Sets with
/// fewer than `dim + 1` members get a small ridge on both covariances.
pub fn frechet_distance(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let (mut a, mut b) = (GaussianStats::fit(set_a)?, GaussianStats::fit(set_b)?);
    let d = a.mean.len();
    if b.mean.len() != d {
        return Err(Error::ShapeMismatch(format!("embedding dims {d} and {}", b.mean.len())));
    }
    if a.n < d + 1 || b.n < d + 1 {
        for s in [&mut a, &mut b] {
            for i in 0..d {
                s.cov[(i, i)] += COVARIANCE_RIDGE;
            }
        }
    }
    frechet_from_stats(&a.mean, &a.cov, &b.mean, &b.cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub total: f64,
    pub mean: f64,
    /// Population std over the consecutive distances.
    pub std: f64,
}

pub fn distance_stats(distances: &[f64]) -> Result<DistanceStats> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("need at least one distance".into()));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::InvalidArgument(format!("distance {d} is not a nonnegative number")));
    }
    let n = distances.len() as f64;
    let total: f64 = distances.iter().sum();
    let mean = total / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(DistanceStats {
        total,
        mean,
        std: var.sqrt(),
    })
}

fn need_two(clips: &[AudioClip]) -> Result<()> {
    if clips.len() < 2 {
        return Err(Error::InvalidArgument(format!("trajectory needs at least 2 clips, got {}", clips.len())));
    }
    Ok(())
}

/// Distances between consecutive clips.
pub fn consecutive_distances(clips: &[AudioClip], d: &dyn PerceptualDistance) -> Result<Vec<f64>> {
    need_two(clips)?;
    let pairs: Vec<(&AudioClip, &AudioClip)> = clips.windows(2).map(|w| (&w[0], &w[1])).collect();
    parallel_map(&pairs, |(a, b)| d.distance(a, b))
}

pub fn trajectory_distances(clips: &[AudioClip], d: &dyn PerceptualDistance) -> Result<DistanceStats> {
    distance_stats(&consecutive_distances(clips, d)?)
}

/// `|d0 / (d0 + d1) - 0.5|` for MFCC distances from the middle clip to the
/// original endpoints. Needs an odd number of clips.
pub fn mfccs_error(clips: &[AudioClip], originals: &PreparedPair, cfg: &StftConfig) -> Result<f64> {
    if clips.len() % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "midpoint needs an odd number of clips, got {}",
            clips.len()
        )));
    }
    let mf = |c: &AudioClip| -> Result<DMatrix<f64>> { mfcc(&log_mel(c, cfg)?, DEFAULT_MFCC_COEFFS) };
    let mid = mf(&clips[(clips.len() - 1) / 2])?;
    let (m0, m1) = (mf(originals.source())?, mf(originals.target())?);
    if mid.shape() != m0.shape() {
        return Err(Error::ShapeMismatch(format!("midpoint MFCC {:?} vs {:?}", mid.shape(), m0.shape())));
    }
    let (d0, d1) = ((&mid - m0).norm(), (&mid - m1).norm());
    if !(d0 + d1 > 0.0) {
        return Err(Error::DegenerateSpdp);
    }
    Ok((d0 / (d0 + d1) - 0.5).abs())
}

/// Mean distance between the trajectory's end clips and the originals.
pub fn endpoint_error(clips: &[AudioClip], originals: &PreparedPair, d: &dyn PerceptualDistance) -> Result<f64> {
    need_two(clips)?;
    let first = d.distance(&clips[0], originals.source())?;
    let last = d.distance(&clips[clips.len() - 1], originals.target())?;
    Ok(0.5 * (first + last))
}

/// Mean step length through (log-attack time, centroid, flux) space, each
/// axis min-max normalised over the trajectory. Constant axes contribute 0.
pub fn timbral_distance(clips: &[AudioClip], cfg: &StftConfig) -> Result<f64> {
    need_two(clips)?;
    let points = parallel_map(clips, |c| timbre_point(c, cfg).map(|p| p.as_array()))?;
    let mut norm = vec![[0.0; 3]; points.len()];
    for axis in 0..3 {
        let vals: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = vals.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if hi - lo <= DEGENERATE_AXIS_RTOL * scale {
            continue;
        }
        for (n, v) in norm.iter_mut().zip(&vals) {
            n[axis] = (v - lo) / (hi - lo);
        }
    }
    let steps: f64 = norm
        .windows(2)
        .map(|w| (0..3).map(|k| (w[1][k] - w[0][k]).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(steps / (clips.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub distance: String,
    pub fad_extractor: String,
    pub fid_extractor: String,
    pub feature_config: StftConfig,
    pub n_clips: usize,
    pub source_set_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` when the trajectory has no middle clip.
    pub mfccs_e: Option<f64>,
    pub fad: f64,
    pub fid: f64,
    pub d_total: f64,
    pub d_mean: f64,
    pub d_std: f64,
    pub d_endpoint: f64,
    pub l2_timbre: f64,
    pub provenance: Provenance,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mfccs_e {
            Some(v) => writeln!(f, "mfccs_e     {v:.6}")?,
            None => writeln!(f, "mfccs_e     n/a (even number of clips)")?,
        }
        writeln!(f, "fad         {:.6}  [{}]", self.fad, self.provenance.fad_extractor)?;
        writeln!(f, "fid         {:.6}  [{}]", self.fid, self.provenance.fid_extractor)?;
        writeln!(f, "d_total     {:.6}  [{}]", self.d_total, self.provenance.distance)?;
        writeln!(f, "d_mean      {:.6} +/- {:.6}", self.d_mean, self.d_std)?;
        writeln!(f, "d_endpoint  {:.6}", self.d_endpoint)?;
        write!(f, "l2_timbre   {:.6}", self.l2_timbre)
    }
}

/// What `evaluate` needs beyond the clips themselves.
pub struct EvalSetup<'a> {
    pub distance: &'a dyn PerceptualDistance,
    pub fad_extractor: &'a dyn EmbeddingExtractor,
    pub fid_extractor: &'a dyn EmbeddingExtractor,
    pub cfg: StftConfig,
}

impl fmt::Debug for EvalSetup<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvalSetup")
            .field("distance", &self.distance.name())
            .field("fad_extractor", &self.fad_extractor.name())
            .field("fid_extractor", &self.fid_extractor.name())
            .finish()
    }
}

/// Scores a trajectory. Fréchet distances compare the trajectory clips with
/// `source_set`, or with the two originals when no set is given.
pub fn evaluate(
    clips: &[AudioClip],
    originals: &PreparedPair,
    source_set: Option<&[AudioClip]>,
    setup: &EvalSetup<'_>,
) -> Result<MetricReport> {
    need_two(clips)?;
    let pair_set = [originals.source().clone(), originals.target().clone()];
    let sources: &[AudioClip] = source_set.unwrap_or(&pair_set);
    if sources.is_empty() {
        return Err(Error::InvalidArgument("source set is empty".into()));
    }

    let mfccs_e = if clips.len() % 2 == 1 {
        Some(mfccs_error(clips, originals, &setup.cfg)?)
    } else {
        None
    };
    let fd = |ex: &dyn EmbeddingExtractor| -> Result<f64> {
        let a = parallel_map(clips, |c| ex.embed(c))?;
        let b = parallel_map(sources, |c| ex.embed(c))?;
        frechet_distance(&a, &b)
    };
    let fad = fd(setup.fad_extractor)?;
    let fid = fd(setup.fid_extractor)?;
    let stats = trajectory_distances(clips, setup.distance)?;
    let d_endpoint = endpoint_error(clips, originals, setup.distance)?;
    let l2_timbre = timbral_distance(clips, &setup.cfg)?;

    Ok(MetricReport {
        mfccs_e,
        fad,
        fid,
        d_total: stats.total,
        d_mean: stats.mean,
        d_std: stats.std,
        d_endpoint,
        l2_timbre,
        provenance: Provenance {
            distance: setup.distance.name(),
            fad_extractor: setup.fad_extractor.name(),
            fid_extractor: setup.fid_extractor.name(),
            feature_config: setup.cfg,
            n_clips: clips.len(),
            source_set_size: sources.len(),
        },
    })
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    trajectory: &'a str,
    mfccs_e: Option<f64>,
    fad: f64,
    fid: f64,
    d_total: f64,
    d_mean: f64,
    d_std: f64,
    d_endpoint: f64,
    l2_timbre: f64,
    distance: &'a str,
    fad_extractor: &'a str,
    fid_extractor: &'a str,
    n_clips: usize,
}

/// One CSV row per labelled report, with a header.
pub fn write_reports_csv<W: io::Write>(out: W, reports: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (label, r) in reports {
        w.serialize(CsvRow {
            trajectory: label,
            mfccs_e: r.mfccs_e,
            fad: r.fad,
            fid: r.fid,
            d_total: r.d_total,
            d_mean: r.d_mean,
            d_std: r.d_std,
            d_endpoint: r.d_endpoint,
            l2_timbre: r.l2_timbre,
            distance: &r.provenance.distance,
            fad_extractor: &r.provenance.fad_extractor,
            fid_extractor: &r.provenance.fid_extractor,
            n_clips: r.provenance.n_clips,
        })?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
