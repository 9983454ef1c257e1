//! Spectral features: log-mel spectrograms, MFCCs, spectral centroid, flux
//! and contrast, log-attack time, and PCA-reduced mel frames.
//!
//! All matrices are `frames x coefficients` (`nalgebra::DMatrix<f64>`).

pub mod export;
pub mod mel;
pub mod pca;
pub mod stft;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

pub use mel::MelFilterbank;
pub use pca::{pca_reduce_mel, PcaBasis};
pub use stft::Stft;

pub const DEFAULT_MFCC_COEFFS: usize = 13;
pub const CONTRAST_FMIN_HZ: f64 = 200.0;
pub const DEFAULT_CONTRAST_BANDS: usize = 6;
pub const DEFAULT_CONTRAST_QUANTILE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 160,
            window: Window::Hann,
            n_mels: 64,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl StftConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_fft == 0 || !self.n_fft.is_power_of_two() {
            return bad(format!("n_fft {} is not a power of two", self.n_fft));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return bad(format!("hop {} must be in 1..=n_fft", self.hop));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be positive".into());
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(0.0 <= self.fmin_hz && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got {}..{}",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    pub fn frame_count(&self, len: usize) -> usize {
        stft::frame_count(len, self.n_fft, self.hop)
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<()> {
        self.validate(clip.sample_rate())?;
        if clip.len() < self.n_fft {
            return Err(Error::ClipTooShort(format!(
                "{} samples, analysis window is {}",
                clip.len(),
                self.n_fft
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    values: DMatrix<f64>,
    config: StftConfig,
}

impl LogMelSpectrogram {
    pub fn from_values(values: DMatrix<f64>, config: StftConfig) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("log-mel values must be finite".into()));
        }
        Ok(Self { values, config })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

/// Power spectrogram `frames x (n_fft / 2 + 1)`.
pub fn power_spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Result<DMatrix<f64>> {
    let mags = magnitude_spectrogram(clip, cfg)?;
    Ok(mags.map(|m| m * m))
}

/// Magnitude spectrogram `frames x (n_fft / 2 + 1)`.
pub fn magnitude_spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Result<DMatrix<f64>> {
    cfg.check_clip(clip)?;
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let spectra = stft.forward(clip.samples());
    Ok(DMatrix::from_fn(spectra.len(), stft.n_bins(), |f, k| spectra[f][k].norm()))
}

pub fn mel_filterbank(cfg: &StftConfig, sample_rate: u32) -> MelFilterbank {
    MelFilterbank::new(sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin_hz, cfg.fmax_hz)
}

/// Log-mel power from an already computed power spectrogram.
pub fn log_mel_from_power(
    power: &DMatrix<f64>,
    cfg: &StftConfig,
    sample_rate: u32,
) -> Result<LogMelSpectrogram> {
    let fb = mel_filterbank(cfg, sample_rate);
    let floor = cfg.log_floor;
    let mut values = DMatrix::zeros(power.nrows(), cfg.n_mels);
    let mut frame = vec![0.0; power.ncols()];
    let mut mel = vec![0.0; cfg.n_mels];
    for f in 0..power.nrows() {
        for (k, v) in frame.iter_mut().enumerate() {
            *v = power[(f, k)];
        }
        fb.apply(&frame, &mut mel);
        for (m, &p) in mel.iter().enumerate() {
            values[(f, m)] = p.max(floor).ln();
        }
    }
    LogMelSpectrogram::from_values(values, *cfg)
}

/// Natural-log mel power, floored at `cfg.log_floor`.
pub fn log_mel(clip: &AudioClip, cfg: &StftConfig) -> Result<LogMelSpectrogram> {
    let power = power_spectrogram(clip, cfg)?;
    log_mel_from_power(&power, cfg, clip.sample_rate())
}

/// Orthonormal DCT-II along the mel axis, first `n_coeffs` kept.
pub fn mfcc(mel: &LogMelSpectrogram, n_coeffs: usize) -> Result<DMatrix<f64>> {
    let n = mel.n_mels();
    if n_coeffs == 0 || n_coeffs > n {
        return Err(Error::InvalidArgument(format!(
            "n_coeffs must be in 1..={n}, got {n_coeffs}"
        )));
    }
    Ok(mel.values() * dct_basis(n, n_coeffs).transpose())
}

/// Rows are the first `n_coeffs` orthonormal DCT-II basis vectors of length `n`.
pub fn dct_basis(n: usize, n_coeffs: usize) -> DMatrix<f64> {
    use std::f64::consts::PI;
    DMatrix::from_fn(n_coeffs, n, |k, i| {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
    })
}

fn bin_freqs(cfg: &StftConfig, sample_rate: u32) -> Vec<f64> {
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_fft / 2 + 1).map(|k| k as f64 * bin_hz).collect()
}

/// Per-frame magnitude-weighted mean frequency in Hz; silent frames give 0.
pub fn spectral_centroid(clip: &AudioClip, cfg: &StftConfig) -> Result<Vec<f64>> {
    let mags = magnitude_spectrogram(clip, cfg)?;
    let freqs = bin_freqs(cfg, clip.sample_rate());
    Ok(mags
        .row_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().zip(&freqs).map(|(m, f)| m * f).sum::<f64>() / total
            } else {
                0.0
            }
        })
        .collect())
}

/// Distance between consecutive unit-normalised magnitude spectra; one value
/// per frame from the second on. A zero spectrum normalises to zero.
pub fn spectral_flux(clip: &AudioClip, cfg: &StftConfig) -> Result<Vec<f64>> {
    let mags = magnitude_spectrogram(clip, cfg)?;
    if mags.nrows() < 2 {
        return Err(Error::ClipTooShort(format!(
            "spectral flux needs 2 frames, clip has {}",
            mags.nrows()
        )));
    }
    let unit: Vec<Vec<f64>> = mags
        .row_iter()
        .map(|row| {
            let norm = row.norm();
            if norm > 0.0 {
                row.iter().map(|m| m / norm).collect()
            } else {
                vec![0.0; row.len()]
            }
        })
        .collect();
    Ok(unit
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Frequency range `[lo, hi)` of contrast band `b`: band 0 is everything below
/// `fmin`, then octaves from `fmin`; the last band runs up to Nyquist.
pub fn contrast_band_edges(n_bands: usize, fmin_hz: f64, nyquist: f64) -> Vec<(f64, f64)> {
    (0..n_bands)
        .map(|b| {
            let lo = if b == 0 { 0.0 } else { fmin_hz * 2f64.powi(b as i32 - 1) };
            let hi = if b + 1 == n_bands {
                f64::INFINITY
            } else {
                fmin_hz * 2f64.powi(b as i32)
            };
            (lo.min(nyquist), hi.min(nyquist + 1e-9))
        })
        .collect()
}

/// Spectral contrast over a magnitude spectrogram whose bin `k` sits at
/// `k * bin_hz`. Per band: mean log of the top-quantile magnitudes minus mean
/// log of the bottom-quantile magnitudes.
pub fn contrast_from_magnitudes(
    mags: &DMatrix<f64>,
    bin_hz: f64,
    n_bands: usize,
    quantile: f64,
    floor: f64,
) -> Result<DMatrix<f64>> {
    if n_bands == 0 {
        return Err(Error::InvalidArgument("n_bands must be positive".into()));
    }
    if !(quantile > 0.0 && quantile < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "quantile must be in (0, 0.5), got {quantile}"
        )));
    }
    let nyquist = (mags.ncols().saturating_sub(1)) as f64 * bin_hz;
    let edges = contrast_band_edges(n_bands, CONTRAST_FMIN_HZ, nyquist);
    let bins: Vec<Vec<usize>> = edges
        .iter()
        .enumerate()
        .map(|(b, &(lo, hi))| {
            (0..mags.ncols())
                .filter(|&k| {
                    let f = k as f64 * bin_hz;
                    f >= lo && (f < hi || (b + 1 == n_bands && f <= hi))
                })
                .collect()
        })
        .collect();

    let mut out = DMatrix::zeros(mags.nrows(), n_bands);
    let mut band = Vec::new();
    for f in 0..mags.nrows() {
        for (b, idx) in bins.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            band.clear();
            band.extend(idx.iter().map(|&k| mags[(f, k)].max(floor).ln()));
            band.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let take = ((quantile * band.len() as f64).round() as usize).max(1);
            let valley = band[..take].iter().sum::<f64>() / take as f64;
            let peak = band[band.len() - take..].iter().sum::<f64>() / take as f64;
            out[(f, b)] = peak - valley;
        }
    }
    Ok(out)
}

pub fn spectral_contrast(
    clip: &AudioClip,
    cfg: &StftConfig,
    n_bands: usize,
    quantile: f64,
) -> Result<DMatrix<f64>> {
    let mags = magnitude_spectrogram(clip, cfg)?;
    let bin_hz = clip.sample_rate() as f64 / cfg.n_fft as f64;
    contrast_from_magnitudes(&mags, bin_hz, n_bands, quantile, cfg.log_floor)
}

pub const ENVELOPE_HOP_SECS: f64 = 0.01;
pub const ATTACK_LOW: f64 = 0.1;
pub const ATTACK_HIGH: f64 = 0.9;

/// RMS over consecutive 10 ms blocks, smoothed by a centred 3-point moving
/// average (edge points average their available neighbours).
pub fn energy_envelope(clip: &AudioClip) -> Vec<f64> {
    let hop = ((ENVELOPE_HOP_SECS * clip.sample_rate() as f64).round() as usize).max(1);
    let rms: Vec<f64> = clip
        .samples()
        .chunks(hop)
        .map(|c| (c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    (0..rms.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(rms.len() - 1);
            rms[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// `log10` of the time the smoothed envelope takes to rise from 10% to 90% of
/// its maximum. Crossing times are interpolated between envelope points and
/// the attack is at least one envelope hop.
pub fn log_attack_time(clip: &AudioClip) -> Result<f64> {
    let env = energy_envelope(clip);
    let peak = env.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Silent("log-attack time of a silent clip".into()));
    }
    let hop_secs = ((ENVELOPE_HOP_SECS * clip.sample_rate() as f64).round().max(1.0))
        / clip.sample_rate() as f64;
    let crossing = |level: f64| -> f64 {
        let thr = level * peak;
        let i = env.iter().position(|&e| e >= thr).unwrap_or(env.len() - 1);
        if i == 0 {
            return 0.0;
        }
        let (a, b) = (env[i - 1], env[i]);
        let frac = if b > a { (thr - a) / (b - a) } else { 1.0 };
        (i as f64 - 1.0 + frac) * hop_secs
    };
    let attack = (crossing(ATTACK_HIGH) - crossing(ATTACK_LOW)).max(hop_secs);
    Ok(attack.log10())
}

/// Position of a clip in the three-axis timbre space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimbrePoint {
    pub log_attack_time: f64,
    pub spectral_centroid: f64,
    pub spectral_flux: f64,
}

impl TimbrePoint {
    pub fn as_array(&self) -> [f64; 3] {
        [self.log_attack_time, self.spectral_centroid, self.spectral_flux]
    }
}

pub fn timbre_point(clip: &AudioClip, cfg: &StftConfig) -> Result<TimbrePoint> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(TimbrePoint {
        log_attack_time: log_attack_time(clip)?,
        spectral_centroid: mean(&spectral_centroid(clip, cfg)?),
        spectral_flux: mean(&spectral_flux(clip, cfg)?),
    })
}
