//! Release gate. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use morphtraj::eval::{distance_stats, mfccs_error, trajectory_distances};
use morphtraj::features::{mfcc, spectral_centroid, DEFAULT_MFCC_COEFFS};
use morphtraj::latent::{ddim_denoise, ddim_invert, slerp};
use morphtraj::spdp::ProbeCache;
use morphtraj::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    check(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(took)
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
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

fn spdp_oracle() -> Outcome {
    let start = Instant::now();
    let p = pair();
    let stft = StftConfig::default();
    let b = LinearMelBackend::new(&p, stft).map_err(e)?;
    let ctx = SpdpContext::new(&p, Feature::LogMel, &stft).map_err(e)?;
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let a = i as f64 / 99.0;
        let pt = ctx.measure(&b.probe(a).map_err(e)?).map_err(e)?;
        check((pt.p[0] + pt.p[1] - 1.0).abs() < 1e-9, || format!("p sums to {} at {a}", pt.p[0] + pt.p[1]))?;
        worst = worst.max((pt.p[0] - a).abs());
    }
    check(worst < 1e-9, || format!("max |p0 - alpha| = {worst:e}"))?;
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("max |p0 - alpha| = {worst:.1e} in {took:.2?}"))
}

fn warped_search() -> Result<(AlphaSchedule, SearchConfig, f64), String> {
    let p = pair();
    let stft = StftConfig::default();
    let b = WarpedBackend::new(&p, stft, 3.0).map_err(e)?;
    let cfg = SearchConfig { n_points: 5, tol: 1e-3, ..Default::default() };
    let ctx = SpdpContext::new(&p, cfg.feature, &stft).map_err(e)?;
    let searched = binary_search_alphas(&b, &ctx, &cfg).map_err(e)?;

    let mut cache = ProbeCache::new();
    let uniform: Vec<f64> = (0..5)
        .map(|i| cache.measure(&b, &ctx, i as f64 / 4.0).map(|p| p.first()))
        .collect::<Result<_>>()
        .map_err(e)?;
    let inc: Vec<f64> = uniform.windows(2).map(|w| w[1] - w[0]).collect();
    let expected = [1.0 / 64.0, 7.0 / 64.0, 19.0 / 64.0, 37.0 / 64.0];
    for (got, want) in inc.iter().zip(expected) {
        check((got - want).abs() < 1e-6, || format!("uniform increments {inc:?}"))?;
    }
    let std_uniform = distance_stats(&inc).map_err(e)?.std;
    Ok((searched, cfg, std_uniform))
}

fn search_convergence() -> Outcome {
    let start = Instant::now();
    let (s, cfg, _) = warped_search()?;
    let budget = cfg.probe_budget();
    check(budget == 12, || format!("probe budget {budget}"))?;
    for i in 1..4 {
        let want = (i as f64 / 4.0).cbrt();
        let got = s.alphas[i];
        check((got - want).abs() <= 2e-3, || format!("alpha[{i}] = {got}, expected {want}"))?;
        check(s.probes[i] <= budget, || format!("target {i} used {} probes", s.probes[i]))?;
    }
    let took = within(start, Duration::from_secs(10))?;
    Ok(format!("alphas {:.4?}, probes {:?} (budget {budget}) in {took:.2?}", &s.alphas[1..4], &s.probes[1..4]))
}

fn uniformity() -> Outcome {
    let (s, cfg, std_uniform) = warped_search()?;
    let std_searched = distance_stats(&s.increments()).map_err(e)?.std;
    check(std_searched <= 2.0 * cfg.tol, || format!("searched std {std_searched}"))?;
    check(std_uniform > 0.2, || format!("uniform std {std_uniform}"))?;
    Ok(format!("increment std {std_searched:.2e} searched vs {std_uniform:.3} uniform"))
}

fn ddim_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sched = NoiseSchedule::default();
    let emb = EmbeddingSet {
        loa: Tensor::zeros(vec![1]),
        text: Tensor::zeros(vec![1]),
    };
    let d = 16;
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let a: Vec<f64> = (0..d * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.25 / (d as f64).sqrt())
            .collect();
        let c: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1).collect();
        let predictor = move |z: &Tensor, _t: usize, _e: Option<&EmbeddingSet>| {
            let v = (0..d)
                .map(|i| c[i] + (0..d).map(|j| a[i * d + j] * z.values()[j]).sum::<f64>())
                .collect();
            Tensor::new(z.shape().to_vec(), v)
        };
        let z0 = Tensor::from_vec((0..d).map(|_| rng.sample(StandardNormal)).collect()).map_err(e)?;
        for steps in [100, 20] {
            let zt = ddim_invert(&z0, &predictor, &emb, &sched, steps).map_err(e)?;
            let back = ddim_denoise(&zt, &predictor, &emb, &sched, steps).map_err(e)?;
            let rel = back.combine(1.0, &z0, -1.0).map_err(e)?.norm() / z0.norm();
            worst = worst.max(rel);
        }
    }
    check(worst < 1e-5, || format!("worst relative error {worst:e}"))?;
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("worst relative error {worst:.1e} over 50 trials x {{100, 20}} steps in {took:.2?}"))
}

fn slerp_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let unit = |rng: &mut ChaCha8Rng| {
        let t = Tensor::from_vec((0..32).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        t.scale(1.0 / t.norm())
    };
    let mut worst_norm = 0.0_f64;
    for _ in 0..200 {
        let (z0, z1) = (unit(&mut rng), unit(&mut rng));
        check(slerp(&z0, &z1, 0.0).map_err(e)? == z0, || "slerp(0) != z0".into())?;
        check(slerp(&z0, &z1, 1.0).map_err(e)? == z1, || "slerp(1) != z1".into())?;
        let a: f64 = rng.random();
        worst_norm = worst_norm.max((slerp(&z0, &z1, a).map_err(e)?.norm() - 1.0).abs());
    }
    check(worst_norm < 1e-9, || format!("norm drift {worst_norm:e}"))?;

    let e1 = Tensor::from_vec(vec![1.0, 0.0, 0.0]).map_err(e)?;
    let e2 = Tensor::from_vec(vec![0.0, 1.0, 0.0]).map_err(e)?;
    let mid = slerp(&e1, &e2, 0.5).map_err(e)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let want = Tensor::from_vec(vec![h, h, 0.0]).map_err(e)?;
    let err = mid.max_abs_diff(&want);
    check(err <= 1e-12, || format!("orthogonal midpoint off by {err:e}"))?;
    Ok(format!("norm drift {worst_norm:.1e}, orthogonal midpoint error {err:.1e}"))
}

fn sample_stats(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn frechet_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            let mu = rng.random_range(-3.0..3.0);
            let sigma = rng.random_range(0.1..2.0);
            (0..400)
                .map(|_| vec![mu + sigma * rng.sample::<f64, _>(StandardNormal)])
                .collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let flat = |s: &[Vec<f64>]| s.iter().map(|v| v[0]).collect::<Vec<_>>();
        let ((m1, s1), (m2, s2)) = (sample_stats(&flat(&a)), sample_stats(&flat(&b)));
        let want = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        let got = frechet_distance(&a, &b).map_err(e)?;
        worst = worst.max((got - want).abs());
    }
    check(worst < 1e-6, || format!("max deviation {worst:e}"))?;

    let set: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..8).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let same = frechet_distance(&set, &set).map_err(e)?;
    check(same.abs() < 1e-9, || format!("identical sets give {same:e}"))?;
    Ok(format!("max deviation {worst:.1e}, identical sets {same:.1e}"))
}

/// Hand-built distance: four times the gap between first samples, so marks a
/// quarter apart are one unit apart.
struct Marks;

impl PerceptualDistance for Marks {
    fn name(&self) -> String {
        "marks".into()
    }

    fn distance(&self, a: &AudioClip, b: &AudioClip) -> Result<f64> {
        Ok(4.0 * (a.samples()[0] - b.samples()[0]).abs())
    }
}

fn metric_formulas() -> Outcome {
    let marks = |vals: &[f64]| -> Vec<AudioClip> {
        vals.iter().map(|&v| AudioClip::new(vec![v, 0.0], 16_000).unwrap()).collect()
    };
    let s = trajectory_distances(&marks(&[0.0, 0.25, 0.5, 0.75, 1.0]), &Marks).map_err(e)?;
    check((s.total, s.mean, s.std) == (4.0, 1.0, 0.0), || format!("(1,1,1,1) gave {s:?}"))?;
    // (0.5, 1, 1.5): population std sqrt(1/6)
    let u = trajectory_distances(&marks(&[0.0, 0.125, 0.375, 0.75]), &Marks).map_err(e)?;
    check(u.total == 3.0 && u.mean == 1.0 && (u.std - (1.0f64 / 6.0).sqrt()).abs() < 1e-15, || format!("{u:?}"))?;

    let stft = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = |rng: &mut ChaCha8Rng, amp: f64| {
        AudioClip::new((0..4000).map(|_| amp * rng.random_range(-1.0..1.0)).collect(), 16_000).unwrap()
    };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for _ in 0..100 {
        let originals = PreparedPair::new(&noise(&mut rng, 0.5), &noise(&mut rng, 0.1), LengthPolicy::PadShorter)
            .map_err(e)?;
        let n = 2 * rng.random_range(1..6) + 1;
        let clips: Vec<AudioClip> = (0..n)
            .map(|_| {
                let amp = rng.random_range(0.05..0.6);
                noise(&mut rng, amp)
            })
            .collect();
        let v = mfccs_error(&clips, &originals, &stft).map_err(e)?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    check(lo >= 0.0 && hi <= 0.5, || format!("mfccs_e range [{lo}, {hi}]"))?;

    let p = pair();
    let at_source = vec![p.source().clone(), p.source().clone(), p.target().clone()];
    let v = mfccs_error(&at_source, &p, &stft).map_err(e)?;
    check(v == 0.5, || format!("midpoint at an endpoint gave {v}"))?;
    Ok(format!("hand sequences exact; 100 random mfccs_e in [{lo:.3}, {hi:.3}]"))
}

fn dsp_oracles() -> Outcome {
    let stft = StftConfig::default();
    let tone = AudioClip::new(
        (0..16_000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16_000.0).sin())
            .collect(),
        16_000,
    )
    .map_err(e)?;
    let c = spectral_centroid(&tone, &stft).map_err(e)?;
    let centroid = c.iter().sum::<f64>() / c.len() as f64;
    check((centroid - 440.0).abs() <= 10.0, || format!("centroid {centroid}"))?;

    let level = -3.7;
    let frame = LogMelSpectrogram::from_values(DMatrix::from_element(1, stft.n_mels, level), stft).map_err(e)?;
    let m = mfcc(&frame, DEFAULT_MFCC_COEFFS).map_err(e)?;
    let mut worst = (m[(0, 0)] - level * (stft.n_mels as f64).sqrt()).abs();
    for k in 1..DEFAULT_MFCC_COEFFS {
        worst = worst.max(m[(0, k)].abs());
    }
    check(worst < 1e-9, || format!("constant-frame MFCC off by {worst:e}"))?;

    let silent = log_mel(&AudioClip::silence(16_000, 16_000), &stft).map_err(e)?;
    let floor = 1e-5f64.ln();
    let dev = silent.values().iter().fold(0.0_f64, |m, v| m.max((v - floor).abs()));
    check(dev == 0.0, || format!("silence deviates from ln(1e-5) by {dev:e}"))?;
    Ok(format!("centroid {centroid:.2} Hz, MFCC error {worst:.1e}, silence exact"))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let p = pair();
    let (src, tgt) = (tmp.path().join("source.wav"), tmp.path().join("target.wav"));
    write_wav(p.source(), &src).map_err(e)?;
    write_wav(p.target(), &tgt).map_err(e)?;
    let out = tmp.path().join("run");
    let run = || -> Result<(Duration, BTreeMap<String, Vec<u8>>), String> {
        let start = Instant::now();
        let status = Command::new(env!("CARGO_BIN_EXE_morphtraj"))
            .args(["morph", "--backend", "linear-mel", "--n", "11", "--mode", "cyclostationary", "--eval", "--plot"])
            .arg("--source")
            .arg(&src)
            .arg("--target")
            .arg(&tgt)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "error")
            .status()
            .map_err(e)?;
        check(status.success(), || format!("morph exited with {status}"))?;
        Ok((within(start, Duration::from_secs(60))?, snapshot(&out)))
    };
    let (t1, first) = run()?;
    let (t2, second) = run()?;
    let wavs = first.keys().filter(|k| k.ends_with(".wav") && k.starts_with("clips")).count();
    check(wavs == 11, || format!("{wavs} clips written"))?;
    check(first.contains_key("manifest.json"), || "no manifest".into())?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    check(first.len() == second.len() && differing.is_empty(), || format!("outputs differ: {differing:?}"))?;
    Ok(format!("{} files byte-identical across runs; {t1:.2?} and {t2:.2?}", first.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("spdp oracle correctness", spdp_oracle),
        ("binary search convergence", search_convergence),
        ("uniformity improvement", uniformity),
        ("ddim round trip", ddim_round_trip),
        ("slerp properties", slerp_properties),
        ("frechet distance", frechet_closed_form),
        ("metric formulas", metric_formulas),
        ("dsp oracles", dsp_oracles),
        ("end-to-end determinism", end_to_end),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
