//! Morph generators `M(alpha) -> AudioClip`.
//!
//! The synthetic backends are closed-form and exist so the search and the
//! metrics can be checked against known answers. [`RemoteBackend`] talks to a
//! diffusion service over JSON/HTTP.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{decode_wav_bytes, encode_wav_bytes, resample, AudioClip, PreparedPair};
use crate::error::{Error, Result};
use crate::features::{log_mel, mel_filterbank, LogMelSpectrogram, MelFilterbank, Stft, StftConfig};

pub const GRIFFIN_LIM_ITERS: usize = 32;
pub const GRIFFIN_LIM_MOMENTUM: f64 = 0.99;
/// Multiplicative updates fitting bin powers to the interpolated mel frame.
pub const MEL_FIT_ITERS: usize = 200;

/// What a backend hands to SPDP for one alpha.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    Audio(AudioClip),
    /// Feature-space output without resynthesis.
    Mel(LogMelSpectrogram),
}

pub trait MorphBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Deterministic clip for `alpha` in `[0, 1]`.
    fn render(&self, alpha: f64) -> Result<AudioClip>;

    /// Cheapest representation SPDP can score; audio unless overridden.
    fn probe(&self, alpha: f64) -> Result<Probe> {
        Ok(Probe::Audio(self.render(alpha)?))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    LinearMel,
    Warped { exponent: f64 },
    Crossfade,
    AdditiveSine,
    /// Empty endpoint means "supplied elsewhere".
    Remote { endpoint: String },
}

/// Backend choice as written on the command line: `kind[:arg][;key=value]*`,
/// e.g. `linear-mel`, `warped:3`, `remote:http://host:8000;ddim_steps=50`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub params: BTreeMap<String, String>,
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            BackendKind::LinearMel => "linear-mel",
            BackendKind::Warped { .. } => "warped",
            BackendKind::Crossfade => "crossfade",
            BackendKind::AdditiveSine => "additive-sine",
            BackendKind::Remote { .. } => "remote",
        }
    }

    /// Same descriptor with any remote endpoint removed, for writing to disk.
    pub fn redacted(&self) -> Self {
        let mut out = self.clone();
        if let BackendKind::Remote { endpoint } = &mut out.kind {
            endpoint.clear();
        }
        out
    }

    pub fn param<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.params
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad value '{v}' for backend parameter {key}")))
            })
            .transpose()
    }

    fn validate(&self) -> Result<()> {
        let allowed: &[&str] = match &self.kind {
            BackendKind::LinearMel => &["oracle"],
            BackendKind::Warped { exponent } => {
                if !(*exponent > 0.0 && exponent.is_finite()) {
                    return Err(Error::InvalidArgument(format!("warp exponent must be > 0, got {exponent}")));
                }
                &["oracle"]
            }
            BackendKind::Crossfade | BackendKind::AdditiveSine => &[],
            BackendKind::Remote { .. } => &[
                "t_inv",
                "t_adapt",
                "lora_rank",
                "ddim_steps",
                "guidance_w",
                "prompt",
                "parallel",
                "timeout_secs",
            ],
        };
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "{} backend has no parameter '{k}'",
                self.kind_name()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind_name())?;
        match &self.kind {
            BackendKind::Warped { exponent } => write!(f, ":{exponent}")?,
            BackendKind::Remote { endpoint } if !endpoint.is_empty() => write!(f, ":{endpoint}")?,
            _ => {}
        }
        for (k, v) in &self.params {
            write!(f, ";{k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for BackendDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(';');
        let head = parts.next().unwrap_or_default();
        let (name, arg) = match head.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (head, None),
        };
        let no_arg = |kind: BackendKind| match arg {
            None => Ok(kind),
            Some(a) => Err(Error::InvalidArgument(format!("backend '{name}' takes no argument, got '{a}'"))),
        };
        let kind = match name.trim().to_ascii_lowercase().as_str() {
            "linear-mel" => no_arg(BackendKind::LinearMel)?,
            "crossfade" => no_arg(BackendKind::Crossfade)?,
            "additive-sine" => no_arg(BackendKind::AdditiveSine)?,
            "warped" => {
                let a = arg.ok_or_else(|| Error::InvalidArgument("warped needs an exponent, e.g. warped:3".into()))?;
                let exponent = a
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad warp exponent '{a}'")))?;
                BackendKind::Warped { exponent }
            }
            "remote" => BackendKind::Remote {
                endpoint: arg.unwrap_or_default().trim().to_string(),
            },
            other => return Err(Error::InvalidArgument(format!("unknown backend '{other}'"))),
        };
        let mut params = BTreeMap::new();
        for p in parts.filter(|p| !p.trim().is_empty()) {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("backend parameter '{p}' is not key=value")))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        let d = Self { kind, params };
        d.validate()?;
        Ok(d)
    }
}

impl Serialize for BackendDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Interpolates log-mel linearly between the endpoints. In oracle mode the
/// probe is that interpolated matrix itself. Rendered audio fits STFT
/// magnitudes to the interpolated mel and reconstructs phase iteratively, so
/// its log-mel matches the interpolation only approximately.
pub struct LinearMelBackend {
    pair: PreparedPair,
    cfg: StftConfig,
    stft: Stft,
    oracle: bool,
    mel0: DMatrix<f64>,
    mel1: DMatrix<f64>,
    mags0: Vec<Vec<f64>>,
    mags1: Vec<Vec<f64>>,
    fb: MelFilterbank,
}

impl fmt::Debug for LinearMelBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearMelBackend")
            .field("len", &self.pair.len())
            .field("oracle", &self.oracle)
            .finish()
    }
}

impl LinearMelBackend {
    /// Oracle mode on.
    pub fn new(pair: &PreparedPair, cfg: StftConfig) -> Result<Self> {
        let mel0 = log_mel(pair.source(), &cfg)?.values().clone();
        let mel1 = log_mel(pair.target(), &cfg)?.values().clone();
        let stft = Stft::new(cfg.n_fft, cfg.hop);
        let mags = |clip: &AudioClip| -> Vec<Vec<f64>> {
            stft.forward(clip.samples())
                .into_iter()
                .map(|frame| frame.iter().map(|c| c.norm()).collect())
                .collect()
        };
        let (mags0, mags1) = (mags(pair.source()), mags(pair.target()));
        Ok(Self {
            pair: pair.clone(),
            cfg,
            stft,
            oracle: true,
            mel0,
            mel1,
            mags0,
            mags1,
            fb: mel_filterbank(&cfg, pair.sample_rate()),
        })
    }

    pub fn with_oracle(mut self, oracle: bool) -> Self {
        self.oracle = oracle;
        self
    }

    pub fn is_oracle(&self) -> bool {
        self.oracle
    }

    pub fn pair(&self) -> &PreparedPair {
        &self.pair
    }

    /// `(1 - alpha) * mel0 + alpha * mel1`.
    pub fn interpolated_mel(&self, alpha: f64) -> Result<LogMelSpectrogram> {
        check_alpha(alpha)?;
        let values = if alpha == 0.0 {
            self.mel0.clone()
        } else if alpha == 1.0 {
            self.mel1.clone()
        } else {
            &self.mel0 * (1.0 - alpha) + &self.mel1 * alpha
        };
        LogMelSpectrogram::from_values(values, self.cfg)
    }

    /// Linear STFT magnitudes whose mel projection matches
    /// [`interpolated_mel`](Self::interpolated_mel). Starts from the geometric
    /// blend of the endpoint powers and rescales bins until each frame's mel
    /// power agrees with the target.
    pub fn target_magnitudes(&self, alpha: f64) -> Result<Vec<Vec<f64>>> {
        let mel = self.interpolated_mel(alpha)?;
        let eps = self.cfg.log_floor * 1e-3;
        let n_bins = self.stft.n_bins();
        let mut coverage = vec![0.0; n_bins];
        self.fb.apply_transpose(&vec![1.0; self.cfg.n_mels], &mut coverage);

        let mut current = vec![0.0; self.cfg.n_mels];
        let mut ratio = vec![0.0; self.cfg.n_mels];
        let mut gain = vec![0.0; n_bins];
        let mut out = Vec::with_capacity(self.mags0.len());
        for (f, (a, b)) in self.mags0.iter().zip(&self.mags1).enumerate() {
            let mut power: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x * x).max(eps).powf(1.0 - alpha) * (y * y).max(eps).powf(alpha))
                .collect();
            let want: Vec<f64> = mel.values().row(f).iter().map(|v| v.exp()).collect();
            for _ in 0..MEL_FIT_ITERS {
                self.fb.apply(&power, &mut current);
                for ((r, w), c) in ratio.iter_mut().zip(&want).zip(&current) {
                    *r = w / c.max(f64::MIN_POSITIVE);
                }
                self.fb.apply_transpose(&ratio, &mut gain);
                for ((p, g), cov) in power.iter_mut().zip(&gain).zip(&coverage) {
                    if *cov > 0.0 {
                        *p *= g / cov;
                    }
                }
            }
            out.push(power.into_iter().map(f64::sqrt).collect());
        }
        Ok(out)
    }

    fn resynthesize(&self, alpha: f64) -> Result<AudioClip> {
        let len = self.pair.len();
        let target = self.target_magnitudes(alpha)?;

        // start from the phase of the plain crossfade
        let mix: Vec<f64> = self
            .pair
            .source()
            .samples()
            .iter()
            .zip(self.pair.target().samples())
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        let with_target_magnitude = |spectra: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
            target
                .iter()
                .zip(spectra)
                .map(|(m, ph)| {
                    m.iter()
                        .zip(ph)
                        .map(|(&mag, c)| {
                            let n = c.norm();
                            if n > 0.0 {
                                c * (mag / n)
                            } else {
                                Complex64::new(mag, 0.0)
                            }
                        })
                        .collect()
                })
                .collect()
        };
        // accelerated consistency projection with momentum
        let mut t = self.stft.forward(&mix);
        let mut prev: Option<Vec<Vec<Complex64>>> = None;
        for _ in 0..GRIFFIN_LIM_ITERS {
            let c = self.stft.forward(&self.stft.inverse(&with_target_magnitude(&t), len));
            t = match &prev {
                Some(p) => c
                    .iter()
                    .zip(p)
                    .map(|(cf, pf)| cf.iter().zip(pf).map(|(x, y)| x + (x - y) * GRIFFIN_LIM_MOMENTUM).collect())
                    .collect(),
                None => c.clone(),
            };
            prev = Some(c);
        }
        let signal = self.stft.inverse(&with_target_magnitude(&t), len);
        Ok(AudioClip::new(signal, self.pair.sample_rate())?.clamped())
    }
}

impl MorphBackend for LinearMelBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::LinearMel).with_param("oracle", self.oracle)
    }

    fn render(&self, alpha: f64) -> Result<AudioClip> {
        check_alpha(alpha)?;
        if alpha == 0.0 {
            return Ok(self.pair.source().clone());
        }
        if alpha == 1.0 {
            return Ok(self.pair.target().clone());
        }
        self.resynthesize(alpha)
    }

    fn probe(&self, alpha: f64) -> Result<Probe> {
        if self.oracle {
            Ok(Probe::Mel(self.interpolated_mel(alpha)?))
        } else {
            Ok(Probe::Audio(self.render(alpha)?))
        }
    }
}

/// [`LinearMelBackend`] at effective blend `alpha^exponent`.
#[derive(Debug)]
pub struct WarpedBackend {
    inner: LinearMelBackend,
    exponent: f64,
}

impl WarpedBackend {
    pub fn new(pair: &PreparedPair, cfg: StftConfig, exponent: f64) -> Result<Self> {
        Self::wrap(LinearMelBackend::new(pair, cfg)?, exponent)
    }

    pub fn wrap(inner: LinearMelBackend, exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::InvalidArgument(format!("warp exponent must be > 0, got {exponent}")));
        }
        Ok(Self { inner, exponent })
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    fn warp(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(alpha.powf(self.exponent))
    }
}

impl MorphBackend for WarpedBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Warped {
            exponent: self.exponent,
        })
        .with_param("oracle", self.inner.is_oracle())
    }

    fn render(&self, alpha: f64) -> Result<AudioClip> {
        self.inner.render(self.warp(alpha)?)
    }

    fn probe(&self, alpha: f64) -> Result<Probe> {
        self.inner.probe(self.warp(alpha)?)
    }
}

/// Time-domain `(1 - alpha) * x0 + alpha * x1`.
#[derive(Debug, Clone)]
pub struct CrossfadeBackend {
    pair: PreparedPair,
}

impl CrossfadeBackend {
    pub fn new(pair: &PreparedPair) -> Self {
        Self { pair: pair.clone() }
    }
}

impl MorphBackend for CrossfadeBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Crossfade)
    }

    fn render(&self, alpha: f64) -> Result<AudioClip> {
        check_alpha(alpha)?;
        if alpha == 0.0 {
            return Ok(self.pair.source().clone());
        }
        if alpha == 1.0 {
            return Ok(self.pair.target().clone());
        }
        let mix = self
            .pair
            .source()
            .samples()
            .iter()
            .zip(self.pair.target().samples())
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        Ok(AudioClip::new(mix, self.pair.sample_rate())?.clamped())
    }
}

/// One sinusoidal partial: frequency in Hz and peak amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub freq_hz: f64,
    pub amp: f64,
}

/// Sum of sinusoids whose frequencies and amplitudes move linearly with alpha.
#[derive(Debug, Clone)]
pub struct AdditiveSineBackend {
    partials0: Vec<Partial>,
    partials1: Vec<Partial>,
    len: usize,
    sample_rate: u32,
}

impl AdditiveSineBackend {
    pub fn new(partials0: Vec<Partial>, partials1: Vec<Partial>, len: usize, sample_rate: u32) -> Result<Self> {
        if partials0.len() != partials1.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} source partials vs {} target partials",
                partials0.len(),
                partials1.len()
            )));
        }
        if partials0.is_empty() || len == 0 || sample_rate == 0 {
            return Err(Error::InvalidArgument("need partials, a length and a sample rate".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        for p in partials0.iter().chain(&partials1) {
            if !(p.freq_hz >= 0.0 && p.freq_hz < nyquist) || !p.amp.is_finite() {
                return Err(Error::InvalidArgument(format!("partial {p:?} invalid below {nyquist} Hz")));
            }
        }
        Ok(Self {
            partials0,
            partials1,
            len,
            sample_rate,
        })
    }

    /// Renders both endpoints as a prepared pair.
    pub fn endpoints(&self) -> Result<PreparedPair> {
        PreparedPair::new(&self.render(0.0)?, &self.render(1.0)?, Default::default())
    }
}

impl MorphBackend for AdditiveSineBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::AdditiveSine)
    }

    fn render(&self, alpha: f64) -> Result<AudioClip> {
        check_alpha(alpha)?;
        let sr = self.sample_rate as f64;
        let partials: Vec<(f64, f64)> = self
            .partials0
            .iter()
            .zip(&self.partials1)
            .map(|(a, b)| {
                (
                    (1.0 - alpha) * a.freq_hz + alpha * b.freq_hz,
                    (1.0 - alpha) * a.amp + alpha * b.amp,
                )
            })
            .collect();
        let samples = (0..self.len)
            .map(|n| {
                let t = n as f64 / sr;
                partials
                    .iter()
                    .map(|(f, a)| a * (2.0 * std::f64::consts::PI * f * t).sin())
                    .sum()
            })
            .collect();
        Ok(AudioClip::new(samples, self.sample_rate)?.clamped())
    }
}

// ---- remote wire protocol ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    pub t_inv: Option<usize>,
    pub t_adapt: usize,
    pub lora_rank: usize,
    pub ddim_steps: usize,
    pub guidance_w: Option<f64>,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            t_inv: None,
            t_adapt: 150,
            lora_rank: 4,
            ddim_steps: 100,
            guidance_w: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRequest {
    pub source_wav_b64: String,
    pub target_wav_b64: String,
    pub init_prompt: String,
    pub opt: PairOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResponse {
    pub pair_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphRequest {
    pub pair_id: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphResponse {
    pub wav_b64: String,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_id: String,
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub opt: PairOptions,
    pub init_prompt: String,
    /// Where generated clips are kept; `None` disables the disk cache.
    pub cache_dir: Option<PathBuf>,
    /// Lets concurrent `render` calls reach the service at the same time.
    pub parallel: bool,
    pub timeout: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            opt: PairOptions::default(),
            init_prompt: String::new(),
            cache_dir: None,
            parallel: false,
            timeout: Duration::from_secs(600),
        }
    }
}

impl RemoteOptions {
    /// Applies the remote-specific parameters of a descriptor.
    pub fn apply(&mut self, d: &BackendDescriptor) -> Result<()> {
        if let Some(v) = d.param("t_inv")? {
            self.opt.t_inv = Some(v);
        }
        if let Some(v) = d.param("t_adapt")? {
            self.opt.t_adapt = v;
        }
        if let Some(v) = d.param("lora_rank")? {
            self.opt.lora_rank = v;
        }
        if let Some(v) = d.param("ddim_steps")? {
            self.opt.ddim_steps = v;
        }
        if let Some(v) = d.param("guidance_w")? {
            self.opt.guidance_w = Some(v);
        }
        if let Some(v) = d.param::<String>("prompt")? {
            self.init_prompt = v;
        }
        if let Some(v) = d.param("parallel")? {
            self.parallel = v;
        }
        if let Some(v) = d.param::<u64>("timeout_secs")? {
            self.timeout = Duration::from_secs(v);
        }
        Ok(())
    }
}

const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build()
        .into()
}

fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}{}", endpoint.trim_end_matches('/'), path)
}

fn transport(e: ureq::Error) -> Error {
    Error::Transport(e.to_string())
}

fn read_reply<T: serde::de::DeserializeOwned>(mut resp: ureq::http::Response<ureq::Body>) -> Result<T> {
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .with_config()
        .limit(MAX_BODY_BYTES)
        .read_to_vec()
        .map_err(transport)?;
    if !(200..300).contains(&status) {
        let message = serde_json::from_slice::<serde_json::Value>(&body)
            .ok()
            .and_then(|v| {
                ["error", "detail", "message"]
                    .iter()
                    .find_map(|k| v.get(k).map(|m| m.as_str().map(str::to_string).unwrap_or_else(|| m.to_string())))
            })
            .unwrap_or_else(|| String::from_utf8_lossy(&body).trim().to_string());
        return Err(Error::Service { status, message });
    }
    serde_json::from_slice(&body).map_err(|e| Error::Payload(format!("unexpected response: {e}")))
}

/// `GET /health` on a diffusion service.
pub fn remote_health(endpoint: &str, timeout: Duration) -> Result<HealthResponse> {
    let resp = agent(timeout).get(join_url(endpoint, "/health")).call().map_err(transport)?;
    read_reply(resp)
}

/// Client for one pair registered with a diffusion service.
pub struct RemoteBackend {
    endpoint: String,
    agent: ureq::Agent,
    pair_id: String,
    len: usize,
    sample_rate: u32,
    cache_dir: Option<PathBuf>,
    parallel: bool,
    gate: Mutex<()>,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // endpoint omitted: it may carry credentials
        f.debug_struct("RemoteBackend")
            .field("pair_id", &self.pair_id)
            .field("len", &self.len)
            .finish()
    }
}

impl RemoteBackend {
    /// Uploads the pair with `POST /pairs`.
    pub fn connect(endpoint: &str, pair: &PreparedPair, opts: &RemoteOptions) -> Result<Self> {
        let agent = agent(opts.timeout);
        let req = PairRequest {
            source_wav_b64: B64.encode(encode_wav_bytes(pair.source())?),
            target_wav_b64: B64.encode(encode_wav_bytes(pair.target())?),
            init_prompt: opts.init_prompt.clone(),
            opt: opts.opt.clone(),
        };
        let resp = agent
            .post(join_url(endpoint, "/pairs"))
            .send_json(&req)
            .map_err(transport)?;
        let PairResponse { pair_id } = read_reply(resp)?;
        if pair_id.is_empty() {
            return Err(Error::Payload("service returned an empty pair_id".into()));
        }
        Ok(Self {
            endpoint: endpoint.to_string(),
            agent,
            pair_id,
            len: pair.len(),
            sample_rate: pair.sample_rate(),
            cache_dir: opts.cache_dir.clone(),
            parallel: opts.parallel,
            gate: Mutex::new(()),
        })
    }

    pub fn pair_id(&self) -> &str {
        &self.pair_id
    }

    /// Cache file for `alpha`, quantised to 1e-6.
    pub fn cache_path(&self, alpha: f64) -> Option<PathBuf> {
        let dir = self.cache_dir.as_ref()?;
        let id: String = self
            .pair_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let q = (alpha * 1e6).round() as u64;
        Some(dir.join(id).join(format!("{q:07}.wav")))
    }

    fn fetch(&self, alpha: f64) -> Result<Vec<u8>> {
        let _guard = if self.parallel {
            None
        } else {
            Some(self.gate.lock().unwrap_or_else(|e| e.into_inner()))
        };
        let resp = self
            .agent
            .post(join_url(&self.endpoint, "/morph"))
            .send_json(&MorphRequest {
                pair_id: self.pair_id.clone(),
                alpha,
            })
            .map_err(transport)?;
        let reply: MorphResponse = read_reply(resp)?;
        let wav = B64
            .decode(reply.wav_b64.trim())
            .map_err(|e| Error::Payload(format!("wav_b64 is not base64: {e}")))?;
        let clip = decode_wav_bytes(&wav).map_err(|e| Error::Payload(format!("wav_b64 is not a WAV file: {e}")))?;
        if clip.sample_rate() != reply.sample_rate {
            return Err(Error::Payload(format!(
                "sample_rate {} disagrees with WAV header {}",
                reply.sample_rate,
                clip.sample_rate()
            )));
        }
        Ok(wav)
    }

    fn conform(&self, wav: &[u8]) -> Result<AudioClip> {
        let clip = decode_wav_bytes(wav)?;
        let clip = resample(&clip, self.sample_rate)?;
        Ok(clip.with_len(self.len).clamped())
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("cache path has a parent");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

impl MorphBackend for RemoteBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Remote {
            endpoint: String::new(),
        })
    }

    fn render(&self, alpha: f64) -> Result<AudioClip> {
        check_alpha(alpha)?;
        let cached = self.cache_path(alpha);
        if let Some(path) = &cached {
            if let Ok(bytes) = std::fs::read(path) {
                return self.conform(&bytes);
            }
        }
        let wav = self.fetch(alpha)?;
        if let Some(path) = &cached {
            write_atomically(path, &wav)?;
        }
        self.conform(&wav)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::LengthPolicy;
    use crate::features::spectral_centroid;
    use crate::spdp::{Feature, SpdpContext};

    fn sine(freq: f64, amp: f64, len: usize) -> AudioClip {
        let s = (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 16_000.0).sin())
            .collect();
        AudioClip::new(s, 16_000).unwrap()
    }

    fn pair() -> PreparedPair {
        PreparedPair::new(&sine(440.0, 0.5, 6000), &sine(1000.0, 0.4, 6000), LengthPolicy::PadShorter).unwrap()
    }

    #[test]
    fn descriptors_parse_and_print() {
        for s in ["linear-mel", "warped:3", "crossfade", "additive-sine", "remote:http://h:8000/x;ddim_steps=50"] {
            let d: BackendDescriptor = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        let d: BackendDescriptor = "remote:http://secret@h".parse().unwrap();
        assert_eq!(d.redacted().to_string(), "remote");
        assert!("warped:0".parse::<BackendDescriptor>().is_err());
        assert!("warped:-1".parse::<BackendDescriptor>().is_err());
        assert!("warped".parse::<BackendDescriptor>().is_err());
        assert!("crossfade:2".parse::<BackendDescriptor>().is_err());
        assert!("linear-mel;bogus=1".parse::<BackendDescriptor>().is_err());
        assert!("granular".parse::<BackendDescriptor>().is_err());
        let d: BackendDescriptor = "linear-mel;oracle=false".parse().unwrap();
        assert_eq!(d.param::<bool>("oracle").unwrap(), Some(false));
    }

    #[test]
    fn linear_mel_oracle_spdp() {
        let p = pair();
        let b = LinearMelBackend::new(&p, StftConfig::default()).unwrap();
        let ctx = SpdpContext::new(&p, Feature::LogMel, &StftConfig::default()).unwrap();
        assert_eq!(ctx.measure(&b.probe(0.0).unwrap()).unwrap().p, [0.0, 1.0]);
        let mid = ctx.measure(&b.probe(0.5).unwrap()).unwrap();
        assert!((mid.first() - 0.5).abs() < 1e-12);
        let firsts: Vec<f64> = (0..=10)
            .map(|i| ctx.measure(&b.probe(i as f64 / 10.0).unwrap()).unwrap().first())
            .collect();
        assert!(firsts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn linear_mel_endpoints_and_resynthesis() {
        let p = pair();
        let b = LinearMelBackend::new(&p, StftConfig::default()).unwrap();
        assert_eq!(&b.render(0.0).unwrap(), p.source());
        assert_eq!(&b.render(1.0).unwrap(), p.target());
        let mid = b.render(0.5).unwrap();
        assert_eq!(mid.len(), p.len());
        assert!(mid.peak() <= 1.0);
        assert_eq!(b.render(0.5).unwrap(), mid);
        // resynthesised audio still lands between the endpoints
        let ctx = SpdpContext::new(&p, Feature::LogMel, &StftConfig::default()).unwrap();
        let pt = ctx.measure_clip(&mid).unwrap().first();
        assert!(pt > 0.2 && pt < 0.8, "{pt}");
        assert!(b.render(1.5).is_err());
    }

    #[test]
    fn warped_matches_linear_at_unit_exponent() {
        let p = pair();
        let lin = LinearMelBackend::new(&p, StftConfig::default()).unwrap();
        let w = WarpedBackend::new(&p, StftConfig::default(), 1.0).unwrap();
        for a in [0.1, 0.37, 0.9] {
            assert_eq!(w.probe(a).unwrap(), lin.probe(a).unwrap());
        }
        assert!(WarpedBackend::new(&p, StftConfig::default(), 0.0).is_err());
    }

    #[test]
    fn warped_uniform_grid_is_nonuniform() {
        let p = pair();
        let w = WarpedBackend::new(&p, StftConfig::default(), 3.0).unwrap();
        let ctx = SpdpContext::new(&p, Feature::LogMel, &StftConfig::default()).unwrap();
        let firsts: Vec<f64> = (0..5)
            .map(|i| ctx.measure(&w.probe(i as f64 / 4.0).unwrap()).unwrap().first())
            .collect();
        let incs: Vec<f64> = firsts.windows(2).map(|w| w[1] - w[0]).collect();
        for (got, want) in incs.iter().zip([1.0 / 64.0, 7.0 / 64.0, 19.0 / 64.0, 37.0 / 64.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn crossfade_examples() {
        let x = sine(440.0, 0.5, 3000);
        let neg = AudioClip::new(x.samples().iter().map(|s| -s).collect(), 16_000).unwrap();
        let p = PreparedPair::new(&x, &neg, LengthPolicy::PadShorter).unwrap();
        let b = CrossfadeBackend::new(&p);
        assert_eq!(&b.render(0.0).unwrap(), p.source());
        assert!(b.render(0.5).unwrap().samples().iter().all(|&s| s == 0.0));

        let q = pair();
        let b = CrossfadeBackend::new(&q);
        let ctx = SpdpContext::new(&q, Feature::LogMel, &StftConfig::default()).unwrap();
        let pt = ctx.measure_clip(&b.render(0.5).unwrap()).unwrap().first();
        assert!((pt - 0.5).abs() > 1e-3);
    }

    #[test]
    fn additive_sine_examples() {
        let p0 = vec![Partial { freq_hz: 300.0, amp: 0.2 }];
        let p1 = vec![Partial { freq_hz: 600.0, amp: 0.6 }];
        let b = AdditiveSineBackend::new(p0, p1, 16_000, 16_000).unwrap();
        let src = b.render(0.0).unwrap();
        let want = sine(300.0, 0.2, 16_000);
        assert!(src.samples().iter().zip(want.samples()).all(|(a, b)| (a - b).abs() < 1e-12));

        let mid = b.render(0.5).unwrap();
        let c = spectral_centroid(&mid, &StftConfig::default()).unwrap();
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        assert!((mean - 450.0).abs() < 10.0, "{mean}");

        for a in [0.0, 0.25, 0.5, 1.0] {
            let want = (1.0 - a) * 0.2 + a * 0.6;
            let peak = b.render(a).unwrap().peak();
            assert!((peak - want).abs() <= 0.05 * want, "alpha {a}: {peak}");
        }

        let two = vec![Partial { freq_hz: 1.0, amp: 1.0 }; 2];
        assert!(AdditiveSineBackend::new(two, vec![Partial { freq_hz: 1.0, amp: 1.0 }], 10, 16_000).is_err());
    }

    #[test]
    fn wire_types_serialise_to_protocol_fields() {
        let req = PairRequest {
            source_wav_b64: "AA==".into(),
            target_wav_b64: "AQ==".into(),
            init_prompt: "a dog barking".into(),
            opt: PairOptions::default(),
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "source_wav_b64": "AA==",
                "target_wav_b64": "AQ==",
                "init_prompt": "a dog barking",
                "opt": {"t_inv": null, "t_adapt": 150, "lora_rank": 4, "ddim_steps": 100, "guidance_w": null}
            })
        );
        let m = serde_json::to_value(MorphRequest { pair_id: "p1".into(), alpha: 0.25 }).unwrap();
        assert_eq!(m, serde_json::json!({"pair_id": "p1", "alpha": 0.25}));
        let h: HealthResponse = serde_json::from_str(r#"{"status":"ok","model_id":"m"}"#).unwrap();
        assert_eq!(h.status, "ok");
    }

    #[test]
    fn remote_options_from_descriptor() {
        let d: BackendDescriptor = "remote:http://x;ddim_steps=20;guidance_w=2.5;parallel=true".parse().unwrap();
        let mut o = RemoteOptions::default();
        o.apply(&d).unwrap();
        assert_eq!(o.opt.ddim_steps, 20);
        assert_eq!(o.opt.guidance_w, Some(2.5));
        assert!(o.parallel);
        let bad: BackendDescriptor = "remote:http://x;lora_rank=many".parse().unwrap();
        assert!(RemoteOptions::default().apply(&bad).is_err());
    }
}
