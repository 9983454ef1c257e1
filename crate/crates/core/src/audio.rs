//! Audio clips and the I/O around them.
//!
//! Everything downstream consumes [`AudioClip`]: mono `f64` samples at a known
//! rate. Analysis runs at [`CANONICAL_RATE`]; [`prepare_pair`] brings a
//! source/target pair to that rate and to a common length.

use std::fmt;
use std::io::{Cursor, Read, Seek};
use std::path::Path;
use std::str::FromStr;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis sample rate for every feature and metric.
pub const CANONICAL_RATE: u32 = 16_000;

#[derive(Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl fmt::Debug for AudioClip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AudioClip")
            .field("len", &self.samples.len())
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl AudioClip {
    /// Wraps raw samples. Samples must be finite; values outside `[-1, 1]`
    /// are accepted here and clamped by [`AudioClip::clamped`] where needed.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} is not finite"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    pub fn clamped(mut self) -> Self {
        for s in &mut self.samples {
            *s = s.clamp(-1.0, 1.0);
        }
        self
    }

    /// Scales so the largest magnitude is 1. Silent clips are returned as is.
    pub fn peak_normalized(mut self) -> Self {
        let peak = self.peak();
        if peak > 0.0 {
            for s in &mut self.samples {
                *s /= peak;
            }
        }
        self
    }

    /// Returns a clip of exactly `len` samples, zero padded or truncated.
    pub fn with_len(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav(std::io::BufReader::new(file))
}

pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
    decode_wav(Cursor::new(bytes))
}

fn decode_wav<R: Read>(reader: R) -> Result<AudioClip> {
    let mut reader = WavReader::new(reader)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels (only mono and stereo are read)"
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1_i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()?
        }
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {format:?} samples"
            )))
        }
    };
    if interleaved.len() < channels {
        return Err(Error::EmptyAudio);
    }
    let samples: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate).map(AudioClip::clamped)
}

fn pcm16_spec(sample_rate: u32) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

fn to_pcm16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn write_pcm16<W: std::io::Write + Seek>(clip: &AudioClip, out: W) -> Result<()> {
    let mut writer = WavWriter::new(out, pcm16_spec(clip.sample_rate))?;
    let mut samples = writer.get_i16_writer(clip.len() as u32);
    for &s in clip.samples() {
        samples.write_sample(to_pcm16(s));
    }
    samples.flush()?;
    writer.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM mono.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_pcm16(clip, std::io::BufWriter::new(file))
}

/// Encodes as an in-memory 16-bit PCM mono WAV file.
pub fn encode_wav_bytes(clip: &AudioClip) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    write_pcm16(clip, &mut buf)?;
    Ok(buf.into_inner())
}

/// Windowed-sinc resampler settings. `zero_crossings` is the half length of the
/// interpolation kernel measured in zero crossings of the (low-passed) sinc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleQuality {
    pub zero_crossings: usize,
    pub rolloff: f64,
}

impl Default for ResampleQuality {
    fn default() -> Self {
        Self {
            zero_crossings: 16,
            rolloff: 0.945,
        }
    }
}

pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip> {
    resample_with(clip, target_rate_hz, ResampleQuality::default())
}

// Larger up-factors switch from a precomputed phase table to direct evaluation.
const MAX_TABLE_PHASES: u64 = 4096;

pub fn resample_with(
    clip: &AudioClip,
    target_rate_hz: u32,
    quality: ResampleQuality,
) -> Result<AudioClip> {
    if target_rate_hz == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if quality.zero_crossings == 0 || !(0.0..=1.0).contains(&quality.rolloff) || quality.rolloff == 0.0 {
        return Err(Error::InvalidArgument(format!("bad resampler quality {quality:?}")));
    }
    let src_rate = clip.sample_rate;
    if src_rate == target_rate_hz {
        return Ok(clip.clone());
    }

    let g = gcd(src_rate as u64, target_rate_hz as u64);
    let up = target_rate_hz as u64 / g;
    let down = src_rate as u64 / g;
    let out_len = ((clip.len() as f64) * up as f64 / down as f64).round() as usize;

    let cutoff = quality.rolloff * (up as f64 / down as f64).min(1.0);
    let half_width = quality.zero_crossings as f64 / cutoff;
    let taps = half_width.ceil() as i64;

    let kernel_for = |frac: f64| -> Vec<f64> {
        // Tap j covers input index base + j - taps + 1, at distance frac + taps - 1 - j.
        let mut h: Vec<f64> = (0..2 * taps)
            .map(|j| {
                let x = frac + (taps - 1 - j) as f64;
                if x.abs() >= half_width {
                    0.0
                } else {
                    cutoff * sinc(cutoff * x) * blackman(x / half_width)
                }
            })
            .collect();
        let sum: f64 = h.iter().sum();
        if sum.abs() > 0.0 {
            for v in &mut h {
                *v /= sum;
            }
        }
        h
    };

    let table: Option<Vec<Vec<f64>>> = (up <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| kernel_for(p as f64 / up as f64)).collect());

    let input = clip.samples();
    let n_in = input.len() as i64;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let owned;
        let kernel: &[f64] = match &table {
            Some(t) => &t[phase as usize],
            None => {
                owned = kernel_for(phase as f64 / up as f64);
                &owned
            }
        };
        let start = base - taps + 1;
        let mut acc = 0.0;
        for (j, &h) in kernel.iter().enumerate() {
            let k = start + j as i64;
            if (0..n_in).contains(&k) {
                acc += h * input[k as usize];
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate_hz)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn blackman(u: f64) -> f64 {
    use std::f64::consts::PI;
    0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthPolicy {
    #[default]
    PadShorter,
    TruncateToShorter,
}

impl FromStr for LengthPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pad" | "pad-shorter" | "pad-shorter-with-silence" => Ok(Self::PadShorter),
            "truncate" | "truncate-to-shorter" => Ok(Self::TruncateToShorter),
            other => Err(Error::InvalidArgument(format!("unknown length policy {other:?}"))),
        }
    }
}

/// Brings both clips to [`CANONICAL_RATE`] and a common length.
pub fn prepare_pair(
    a: &AudioClip,
    b: &AudioClip,
    policy: LengthPolicy,
) -> Result<(AudioClip, AudioClip)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let a = resample(a, CANONICAL_RATE)?;
    let b = resample(b, CANONICAL_RATE)?;
    let len = match policy {
        LengthPolicy::PadShorter => a.len().max(b.len()),
        LengthPolicy::TruncateToShorter => a.len().min(b.len()),
    };
    let fit = |c: AudioClip| if c.len() == len { c } else { c.with_len(len) };
    Ok((fit(a), fit(b)))
}

/// A source/target pair at the canonical rate with equal lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    source: AudioClip,
    target: AudioClip,
}

impl PreparedPair {
    pub fn new(source: &AudioClip, target: &AudioClip, policy: LengthPolicy) -> Result<Self> {
        let (source, target) = prepare_pair(source, target, policy)?;
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &AudioClip {
        &self.source
    }

    pub fn target(&self) -> &AudioClip {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.source.sample_rate()
    }
}
