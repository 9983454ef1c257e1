//! Framed FFT analysis and weighted overlap-add synthesis.
//!
//! Frames start at multiples of the hop with no centre padding, so a signal of
//! `len` samples yields `floor((len - n_fft) / hop) + 1` frames.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    if len < n_fft {
        0
    } else {
        (len - n_fft) / hop + 1
    }
}

/// Reusable forward/inverse transform pair for one `(n_fft, hop)` setting.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> usize {
        frame_count(len, self.n_fft, self.hop)
    }

    /// One-sided spectra, `frames x (n_fft / 2 + 1)`.
    pub fn forward(&self, signal: &[f64]) -> Vec<Vec<Complex64>> {
        let n_frames = self.frame_count(signal.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        (0..n_frames)
            .map(|f| {
                let start = f * self.hop;
                for ((b, &x), &w) in buf
                    .iter_mut()
                    .zip(&signal[start..start + self.n_fft])
                    .zip(&self.window)
                {
                    *b = Complex64::new(x * w, 0.0);
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add inverse producing exactly `len` samples. Samples no
    /// frame covers are zero.
    pub fn inverse(&self, spectra: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let n = self.n_fft;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for (f, half) in spectra.iter().enumerate() {
            buf[..half.len()].copy_from_slice(half);
            for k in 1..n - half.len() + 1 {
                buf[n - k] = half[k].conj();
            }
            // DC and Nyquist of a real signal carry no imaginary part
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = f * self.hop;
            for i in 0..n {
                let t = start + i;
                if t >= len {
                    break;
                }
                let w = self.window[i];
                out[t] += buf[i].re / n as f64 * w;
                norm[t] += w * w;
            }
        }
        for (o, &z) in out.iter_mut().zip(&norm) {
            *o = if z > 1e-10 { *o / z } else { 0.0 };
        }
        out
    }
}
