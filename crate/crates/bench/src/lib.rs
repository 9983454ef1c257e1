//! Shared inputs for the benchmarks.

use morphtraj::{AudioClip, LengthPolicy, PreparedPair};

/// Sum of harmonics of `f0` with the given amplitudes, at 16 kHz.
pub fn harmonic(f0: f64, amps: &[f64], len: usize) -> AudioClip {
    let s = (0..len)
        .map(|n| {
            let t = n as f64 / 16_000.0;
            amps.iter()
                .enumerate()
                .map(|(k, a)| a * (2.0 * std::f64::consts::PI * f0 * (k + 1) as f64 * t).sin())
                .sum()
        })
        .collect();
    AudioClip::new(s, 16_000).expect("finite samples")
}

/// One second of two harmonic tones a fifth and an octave apart.
pub fn bench_pair() -> PreparedPair {
    PreparedPair::new(
        &harmonic(220.0, &[0.3, 0.2, 0.1], 16_000),
        &harmonic(660.0, &[0.2, 0.05, 0.15], 16_000),
        LengthPolicy::PadShorter,
    )
    .expect("valid pair")
}
