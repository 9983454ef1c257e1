//! Cross-module checks: audio I/O through features, search, morph modes and
//! the metric suite on synthetic backends.

use morphtraj::backend::{AdditiveSineBackend, Partial};
use morphtraj::eval::{
    consecutive_distances, distance_stats, mfccs_error, timbral_distance, trajectory_distances, EvalSetup,
};
use morphtraj::features::spectral_centroid;
use morphtraj::modes::{cyclostationary_morph, dynamic_morph, static_morph, write_trajectory};
use morphtraj::spdp::ProbeCache;
use morphtraj::*;

fn sine(freq: f64, amp: f64, len: usize, rate: u32) -> AudioClip {
    let s = (0..len)
        .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin())
        .collect();
    AudioClip::new(s, rate).unwrap()
}

fn harmonic(f0: f64, amps: &[f64], len: usize) -> AudioClip {
    let s = (0..len)
        .map(|n| {
            let t = n as f64 / 16_000.0;
            amps.iter()
                .enumerate()
                .map(|(k, a)| a * (2.0 * std::f64::consts::PI * f0 * (k + 1) as f64 * t).sin())
                .sum()
        })
        .collect();
    AudioClip::new(s, 16_000).unwrap()
}

fn pair() -> PreparedPair {
    PreparedPair::new(
        &harmonic(220.0, &[0.3, 0.2, 0.1], 16_000),
        &harmonic(660.0, &[0.2, 0.05, 0.15], 16_000),
        LengthPolicy::PadShorter,
    )
    .unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn resampled_sine_keeps_its_centroid() {
    let clip = sine(440.0, 0.5, 44_100, 44_100);
    let down = resample(&clip, 16_000).unwrap();
    assert_eq!(down.len(), 16_000);
    let c = mean(&spectral_centroid(&down, &StftConfig::default()).unwrap());
    assert!((c - 440.0).abs() < 5.0, "centroid {c}");
}

#[test]
fn wav_round_trip_is_perceptually_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let clip = sine(440.0, 0.5, 16_000, 16_000);
    let path = dir.path().join("s.wav");
    write_wav(&clip, &path).unwrap();
    let back = load_wav(&path).unwrap();
    let p = spdp(&back, &clip, &AudioClip::silence(clip.len(), 16_000), Feature::LogMel, &StftConfig::default())
        .unwrap();
    assert!(p.first() < 0.01, "{}", p.first());
}

#[test]
fn oracle_spdp_equals_alpha_for_every_linear_feature() {
    let p = pair();
    let stft = StftConfig::default();
    let b = LinearMelBackend::new(&p, stft).unwrap();
    for feature in [Feature::LogMel, Feature::Mfcc, Feature::ReducedMel(2), Feature::ReducedMel(3)] {
        let ctx = SpdpContext::new(&p, feature, &stft).unwrap();
        for i in 0..=20 {
            let a = i as f64 / 20.0;
            let pt = ctx.measure(&b.probe(a).unwrap()).unwrap();
            assert!((pt.first() - a).abs() < 1e-9, "{feature} at {a}: {}", pt.first());
        }
    }
}

#[test]
fn contrast_feature_searches_on_rendered_audio() {
    let p = pair();
    let stft = StftConfig::default();
    let b = CrossfadeBackend::new(&p);
    let cfg = SearchConfig { n_points: 3, tol: 1e-2, feature: Feature::SpectralContrast, ..Default::default() };
    let ctx = SpdpContext::new(&p, cfg.feature, &stft).unwrap();
    let s = binary_search_alphas(&b, &ctx, &cfg).unwrap();
    assert_eq!(s.alphas.len(), 3);
    assert!(s.converged[1], "{:?}", s.achieved);
}

#[test]
fn linear_mel_n5_midpoint_is_mfcc_balanced() {
    let p = pair();
    let stft = StftConfig::default();
    let b = LinearMelBackend::new(&p, stft).unwrap();
    let cfg = SearchConfig { n_points: 5, tol: 1e-3, ..Default::default() };
    let t = cyclostationary_morph(&b, &p, &cfg, &stft).unwrap();
    let e = mfccs_error(&t.clips, &p, &stft).unwrap();
    assert!(e <= 0.05, "mfccs_e {e}");
}

#[test]
fn linear_mel_n5_steps_are_even_under_lmd() {
    let p = pair();
    let stft = StftConfig::default();
    let b = LinearMelBackend::new(&p, stft).unwrap();
    let cfg = SearchConfig { n_points: 5, tol: 1e-3, ..Default::default() };
    let t = cyclostationary_morph(&b, &p, &cfg, &stft).unwrap();
    let d = consecutive_distances(&t.clips, &Lmd::new(stft)).unwrap();
    let s = distance_stats(&d).unwrap();
    assert!(s.std / s.mean < 0.05, "distances {d:?}");
}

#[test]
fn warped_search_beats_uniform_alphas() {
    let p = pair();
    let stft = StftConfig::default();
    let b = WarpedBackend::new(&p, stft, 3.0).unwrap();
    let cfg = SearchConfig { n_points: 5, tol: 1e-3, ..Default::default() };
    let ctx = SpdpContext::new(&p, cfg.feature, &stft).unwrap();

    let searched = binary_search_alphas(&b, &ctx, &cfg).unwrap();
    let std_searched = distance_stats(&searched.increments()).unwrap().std;

    let mut cache = ProbeCache::new();
    let uniform: Vec<f64> = (0..5)
        .map(|i| cache.measure(&b, &ctx, i as f64 / 4.0).unwrap().first())
        .collect();
    let inc: Vec<f64> = uniform.windows(2).map(|w| w[1] - w[0]).collect();
    let std_uniform = distance_stats(&inc).unwrap().std;

    assert!(std_searched <= 2.0 * cfg.tol, "{std_searched}");
    assert!(std_uniform > 0.2, "{std_uniform}");
}

#[test]
fn static_and_dynamic_modes_end_to_end() {
    let p = pair();
    let stft = StftConfig::default();
    let b = WarpedBackend::new(&p, stft, 2.0).unwrap();
    let cfg = SearchConfig { n_points: 5, tol: 1e-3, ..Default::default() };

    let s = static_morph(&b, &p, 0.25, &cfg, &stft).unwrap();
    assert!((s.schedule.alphas[1] - 0.5).abs() <= 2e-3);

    let d = dynamic_morph(&b, &p, &cfg, &stft).unwrap();
    assert_eq!(d.dynamic.as_ref().unwrap().len(), p.len());
    let dir = tempfile::tempdir().unwrap();
    let m = write_trajectory(&d, dir.path()).unwrap();
    assert_eq!(m.clip_files.len(), 5);
    let reloaded = load_wav(dir.path().join(m.dynamic_file.unwrap())).unwrap();
    assert_eq!(reloaded.len(), p.len());
}

#[test]
fn additive_sine_drift_has_even_timbre_steps() {
    let b = AdditiveSineBackend::new(
        vec![Partial { freq_hz: 300.0, amp: 0.5 }],
        vec![Partial { freq_hz: 600.0, amp: 0.5 }],
        16_000,
        16_000,
    )
    .unwrap();
    let clips: Vec<AudioClip> = (0..11).map(|i| b.render(i as f64 / 10.0).unwrap()).collect();
    let stft = StftConfig::default();
    let steps: Vec<f64> = clips
        .windows(2)
        .map(|w| timbral_distance(&[w[0].clone(), w[1].clone()], &stft).unwrap())
        .collect();
    // per-pair normalisation makes each step 1 on its own; use the whole path instead
    assert!(steps.iter().all(|s| *s > 0.0));
    let whole = timbral_distance(&clips, &stft).unwrap();
    let points: Vec<[f64; 3]> = clips
        .iter()
        .map(|c| morphtraj::features::timbre_point(c, &stft).unwrap().as_array())
        .collect();
    let centroid: Vec<f64> = points.iter().map(|p| p[1]).collect();
    let inc: Vec<f64> = centroid.windows(2).map(|w| w[1] - w[0]).collect();
    let (lo, hi) = inc.iter().fold((f64::INFINITY, 0.0_f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(hi <= 1.3 * lo, "centroid increments {inc:?}");
    assert!(whole > 0.0 && whole <= 3f64.sqrt());
}

#[test]
fn evaluate_on_identical_clips_is_all_zero() {
    let p = pair();
    let stft = StftConfig::default();
    let lmd = Lmd::new(stft);
    let (fad, fid) = (MelStats::new(stft, Pooling::MeanStd), MelStats::new(stft, Pooling::Mean));
    let clips = vec![p.source().clone(); 5];
    let setup = EvalSetup { distance: &lmd, fad_extractor: &fad, fid_extractor: &fid, cfg: stft };
    let r = evaluate(&clips, &p, Some(std::slice::from_ref(p.source())), &setup).unwrap();
    assert_eq!(r.d_total, 0.0);
    assert_eq!(r.d_std, 0.0);
    assert!(r.fad < 1e-8 && r.fid < 1e-8);
    assert_eq!(trajectory_distances(&clips, &lmd).unwrap().mean, 0.0);
}
