use std::fs;

use physio_forge::mapfile;
use physio_forge::rppg::{global_signal, ColorChannel, RegionTraceSet};
use physio_forge::synthbench::*;
use physio_forge::task::{Label, Task};
use physio_forge::Error;

/// Naive DFT magnitudes for bins 0..=n/2.
fn dft_mag(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

fn band(n: usize, fps: f64, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
    let k0 = (lo * n as f64 / fps).ceil() as usize;
    let k1 = (hi * n as f64 / fps).floor() as usize;
    k0..=k1
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn global(trace: &RegionTraceSet) -> Vec<f64> {
    global_signal(trace, trace.frames(), ColorChannel::Green)
        .unwrap()
        .samples
}

/// Peak magnitude within one bin of the carrier over the band median, on
/// the Hann-windowed signal so off-bin carriers do not leak into the median.
fn prominence(x: &[f64], fps: f64, carrier_hz: f64) -> f64 {
    let n = x.len();
    let w: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(t, v)| v * (0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / n as f64).cos()))
        .collect();
    let mag = dft_mag(&w);
    let b = band(n, fps, 0.7, 3.0);
    let med = median(mag[b].to_vec());
    let k = (carrier_hz * n as f64 / fps).round() as usize;
    let peak = mag[k - 1..=k + 1].iter().cloned().fold(0.0, f64::max);
    peak / med
}

fn band_energy_fraction(x: &[f64], fps: f64) -> f64 {
    let mag = dft_mag(x);
    let total: f64 = mag[1..].iter().map(|m| m * m).sum();
    let inband: f64 = mag[band(x.len(), fps, 0.7, 3.0)].iter().map(|m| m * m).sum();
    inband / total
}

fn quiet(name: &str) -> DomainSpec {
    DomainSpec {
        noise_sigma: 0.0,
        illumination_drift: 0.0,
        ..DomainSpec::intra(name)
    }
}

fn region_channel(trace: &RegionTraceSet, r: usize, c: usize) -> Vec<f64> {
    (0..trace.frames()).map(|t| trace.get(r, t, c)).collect()
}

#[test]
fn bonafide_peak_sits_at_heart_rate_in_every_region() {
    let d = quiet("q");
    let spec = SampleSpec::new(SampleClass::Bonafide, Task::Spoof, 72.0, 11);
    let trace = gen_bonafide_trace(&spec, &d).unwrap();
    let n = trace.frames();
    for r in 0..trace.regions() {
        for c in 0..3 {
            let mag = dft_mag(&region_channel(&trace, r, c));
            let argmax = (1..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
            let hz = argmax as f64 * d.fps / n as f64;
            assert!((hz - 1.2).abs() < 1e-9, "region {r} channel {c}: {hz} Hz");
        }
    }
}

#[test]
fn noiseless_bonafide_is_exactly_cosine_plus_harmonic() {
    let d = quiet("q");
    let spec = SampleSpec::new(SampleClass::Bonafide, Task::Spoof, 72.0, 5);
    let trace = gen_bonafide_trace(&spec, &d).unwrap();
    let n = trace.frames();
    // 1.2 Hz over 10 s is 12 whole cycles, so the least-squares fit on
    // {1, cos, sin} at f and 2f reduces to projections onto DFT bins.
    for r in 0..trace.regions() {
        let x = region_channel(&trace, r, 1);
        let proj = |k: usize| {
            let (mut a, mut b) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let w = 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                a += v * w.cos();
                b += v * w.sin();
            }
            (2.0 * a / n as f64, 2.0 * b / n as f64)
        };
        let dc = x.iter().sum::<f64>() / n as f64;
        let (a1, b1) = proj(12);
        let (a2, b2) = proj(24);
        let resid = x
            .iter()
            .enumerate()
            .map(|(t, v)| {
                let w = 2.0 * std::f64::consts::PI * t as f64 / n as f64;
                let fit =
                    dc + a1 * (12.0 * w).cos() + b1 * (12.0 * w).sin() + a2 * (24.0 * w).cos() + b2 * (24.0 * w).sin();
                (v - fit).abs()
            })
            .fold(0.0, f64::max);
        assert!(resid < 1e-10, "region {r}: residual {resid}");
        let h1 = (a1 * a1 + b1 * b1).sqrt();
        let h2 = (a2 * a2 + b2 * b2).sqrt();
        assert!((h2 / h1 - 0.3).abs() < 1e-9);
    }
}

#[test]
fn generators_are_deterministic() {
    let d = DomainSpec::intra("d");
    for class in [SampleClass::Bonafide, SampleClass::Spoof, SampleClass::Forgery] {
        let spec = SampleSpec::new(class, Task::Forgery, 90.0, 77);
        assert_eq!(gen_trace(&spec, &d).unwrap(), gen_trace(&spec, &d).unwrap());
        assert_eq!(
            gen_appearance_patch(&spec, &d).unwrap(),
            gen_appearance_patch(&spec, &d).unwrap()
        );
        let other = SampleSpec { seed: 78, ..spec };
        assert_ne!(gen_trace(&spec, &d).unwrap(), gen_trace(&other, &d).unwrap());
    }
}

#[test]
fn generator_preconditions() {
    let d = DomainSpec::intra("d");
    let slow = SampleSpec::new(SampleClass::Bonafide, Task::Spoof, 40.0, 1);
    assert!(matches!(gen_bonafide_trace(&slow, &d), Err(Error::Parameter(_))));
    let bona = SampleSpec::new(SampleClass::Bonafide, Task::Spoof, 72.0, 1);
    assert!(gen_attack_trace(&bona, &d).is_err());
    let bad = DomainSpec {
        fps: 0.0,
        ..DomainSpec::intra("d")
    };
    let spoof = SampleSpec::new(SampleClass::Spoof, Task::Spoof, 72.0, 1);
    assert!(gen_attack_trace(&spoof, &bad).is_err());
    let neg = DomainSpec {
        noise_sigma: -0.1,
        ..DomainSpec::intra("d")
    };
    assert!(gen_attack_trace(&spoof, &neg).is_err());
}

#[test]
fn spoof_trace_has_no_coherent_rhythm() {
    let d = DomainSpec::intra("d");
    let mut flat = 0;
    for seed in 0..100 {
        let spec = SampleSpec::new(SampleClass::Spoof, Task::Spoof, 72.0, seed);
        let x = global(&gen_attack_trace(&spec, &d).unwrap());
        let mag = dft_mag(&x);
        let inband = mag[band(x.len(), d.fps, 0.7, 3.0)].to_vec();
        let max = inband.iter().cloned().fold(0.0, f64::max);
        if max <= 3.0 * median(inband) {
            flat += 1;
        }
    }
    assert!(flat >= 95, "{flat}/100 flat");
}

#[test]
fn forgery_rhythm_is_diminished_but_present() {
    let d = DomainSpec::intra("d");
    let (mut weaker, mut sum_f, mut sum_b) = (0, 0.0, 0.0);
    for seed in 0..100 {
        let bpm = 48.0 + (seed as f64 * 7.3) % 100.0;
        let hz = bpm / 60.0;
        let f = SampleSpec::new(SampleClass::Forgery, Task::Forgery, bpm, seed);
        let b = SampleSpec::new(SampleClass::Bonafide, Task::Forgery, bpm, seed);
        let pf = prominence(&global(&gen_attack_trace(&f, &d).unwrap()), d.fps, hz);
        let pb = prominence(&global(&gen_bonafide_trace(&b, &d).unwrap()), d.fps, hz);
        if pf < 0.25 * pb {
            weaker += 1;
        }
        sum_f += pf;
        sum_b += pb;
    }
    assert!(weaker >= 95, "{weaker}/100 diminished");
    assert!(sum_f / 100.0 > 2.0, "forgery carrier prominence {}", sum_f / 100.0);
    assert!(sum_f < 0.25 * sum_b);
}

fn patch_values(spec: &SampleSpec, d: &DomainSpec) -> Vec<f64> {
    let p = gen_appearance_patch(spec, d).unwrap();
    assert_eq!(p.dims, vec![32, 32, 3]);
    p.values.iter().map(|&v| v as f64).collect()
}

/// 2-D DFT energy at radial frequency above a quarter cycle per pixel,
/// summed over channels.
fn high_freq_energy(px: &[f64]) -> f64 {
    let n = PATCH_SIZE;
    let mut e = 0.0;
    for c in 0..3 {
        for u in 0..n {
            for v in 0..n {
                let fu = u.min(n - u) as f64 / n as f64;
                let fv = v.min(n - v) as f64 / n as f64;
                if (fu * fu + fv * fv).sqrt() <= 0.25 {
                    continue;
                }
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let a = -2.0 * std::f64::consts::PI * ((u * y + v * x) % n) as f64 / n as f64;
                        let val = px[(y * n + x) * 3 + c];
                        re += val * a.cos();
                        im += val * a.sin();
                    }
                }
                e += re * re + im * im;
            }
        }
    }
    e
}

fn half_diff(px: &[f64]) -> f64 {
    let n = PATCH_SIZE;
    let (mut l, mut r) = (0.0, 0.0);
    for y in 0..n {
        for x in 0..n {
            let s: f64 = (0..3).map(|c| px[(y * n + x) * 3 + c]).sum();
            if x < n / 2 {
                l += s;
            } else {
                r += s;
            }
        }
    }
    (l - r).abs() / (3.0 * (n * n / 2) as f64)
}

#[test]
fn spoof_patch_carries_high_frequency_grid() {
    let d = DomainSpec::intra("d");
    let mut hits = 0;
    for seed in 0..100 {
        let s = SampleSpec::new(SampleClass::Spoof, Task::Spoof, 72.0, seed);
        let b = SampleSpec::new(SampleClass::Bonafide, Task::Spoof, 72.0, seed);
        if high_freq_energy(&patch_values(&s, &d)) > 2.0 * high_freq_energy(&patch_values(&b, &d)) {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn forgery_patch_shifts_one_half() {
    let d = DomainSpec::intra("d");
    let mut hits = 0;
    for seed in 0..100 {
        let f = SampleSpec::new(SampleClass::Forgery, Task::Forgery, 72.0, seed);
        let b = SampleSpec::new(SampleClass::Bonafide, Task::Forgery, 72.0, seed);
        if half_diff(&patch_values(&f, &d)) > 3.0 * half_diff(&patch_values(&b, &d)) {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn classes_share_the_appearance_base() {
    let d = DomainSpec {
        pixel_noise: 0.0,
        ..DomainSpec::intra("d")
    };
    let b = patch_values(&SampleSpec::new(SampleClass::Bonafide, Task::Spoof, 72.0, 3), &d);
    let f = patch_values(&SampleSpec::new(SampleClass::Forgery, Task::Forgery, 72.0, 3), &d);
    let changed = b.iter().zip(&f).filter(|(x, y)| (*x - *y).abs() > 1e-6).count();
    assert_eq!(changed, 32 * 16 * 3);
}

#[test]
fn band_energy_threshold_separates_bonafide_from_spoof() {
    let d = DomainSpec::intra("d");
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(2000);
    for i in 0..1000u64 {
        let bpm = 48.0 + (i as f64 * 0.102) % 102.0;
        let b = SampleSpec::new(SampleClass::Bonafide, Task::Spoof, bpm, i);
        let s = SampleSpec::new(SampleClass::Spoof, Task::Spoof, bpm, 100_000 + i);
        scored.push((
            band_energy_fraction(&global(&gen_bonafide_trace(&b, &d).unwrap()), d.fps),
            true,
        ));
        scored.push((
            band_energy_fraction(&global(&gen_attack_trace(&s, &d).unwrap()), d.fps),
            false,
        ));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Best accuracy over thresholds between consecutive scores.
    let n = scored.len();
    let total_bona = scored.iter().filter(|s| s.1).count();
    let mut bona_below = 0;
    let mut best = total_bona;
    for (i, s) in scored.iter().enumerate() {
        if s.1 {
            bona_below += 1;
        }
        let spoof_below = i + 1 - bona_below;
        best = best.max(spoof_below + (total_bona - bona_below));
    }
    let acc = best as f64 / n as f64;
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn noise_knob_reduces_prominence_monotonically() {
    let mut means = Vec::new();
    for sigma in [0.15, 0.45, 1.35] {
        let d = DomainSpec {
            noise_sigma: sigma,
            ..DomainSpec::intra("d")
        };
        let mut sum = 0.0;
        for seed in 0..50 {
            let bpm = 60.0 + seed as f64;
            let spec = SampleSpec::new(SampleClass::Bonafide, Task::Spoof, bpm, seed);
            sum += prominence(&global(&gen_bonafide_trace(&spec, &d).unwrap()), d.fps, bpm / 60.0);
        }
        means.push(sum / 50.0);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

fn small_bench(seed: u64) -> BenchmarkSpec {
    BenchmarkSpec {
        per_class: 3,
        train_fraction: 2.0 / 3.0,
        ..BenchmarkSpec::default_with_seed(seed)
    }
}

#[test]
fn default_benchmark_layout() {
    let b = BenchmarkSpec::default_with_seed(0);
    assert_eq!(b.per_class, 200);
    for task in Task::ALL {
        let doms: Vec<_> = b.domains.iter().filter(|(t, _)| *t == task).map(|(_, d)| d).collect();
        assert_eq!(doms.len(), 4);
        let intra: Vec<_> = doms
            .iter()
            .filter(|d| d.split == physio_forge::metrics::Split::Intra)
            .collect();
        assert_eq!(intra.len(), 2);
    }
    let x0 = &b.domains[2].1;
    let i0 = &b.domains[0].1;
    assert!((x0.noise_sigma - 3.0 * i0.noise_sigma).abs() < 1e-12);
    assert!((x0.illumination_drift - 2.0 * i0.illumination_drift).abs() < 1e-12);
    assert_eq!(plan(&b).len(), 2 * 4 * 2 * 200);
}

#[test]
fn dataset_round_trip_and_regeneration() {
    let dir = tempfile::tempdir().unwrap();
    let bench = small_bench(9);
    let out = gen_dataset(&bench, dir.path()).unwrap();
    let planned = plan(&bench);
    assert_eq!(out.samples, 2 * 4 * 2 * 3);

    let all = load_dataset(&out.manifest).unwrap();
    assert_eq!(all.len(), planned.len());
    for (rec, p) in all.samples.iter().zip(&planned) {
        assert_eq!(rec.id, p.id);
        assert_eq!(rec.task, p.task);
        assert_eq!(rec.label, p.class.label());
        assert_eq!(rec.domain, p.domain.name);
    }
    for task in Task::ALL {
        let train = load_dataset(&out.train(task)).unwrap();
        let intra = load_dataset(&out.intra_test(task)).unwrap();
        let cross = load_dataset(&out.cross_test(task)).unwrap();
        assert_eq!(train.len(), 2 * 2 * 2);
        assert_eq!(intra.len(), 2 * 2);
        assert_eq!(cross.len(), 2 * 2 * 3);
        assert!(train
            .samples
            .iter()
            .chain(&intra.samples)
            .chain(&cross.samples)
            .all(|s| s.task == task));
        assert_eq!(train.samples.iter().filter(|s| s.label == Label::Bonafide).count(), 4);
    }

    let p = &planned[5];
    let fb = filterbank_for(&bench, p.domain.fps).unwrap();
    let maps = gen_sample(&bench, p, &fb).unwrap();
    let rec = &all.samples[5];
    assert_eq!(fs::read(&rec.mst_path).unwrap(), mapfile::encode(&maps.mst));
    assert_eq!(fs::read(&rec.wav_path).unwrap(), mapfile::encode(&maps.wav));
    assert_eq!(fs::read(&rec.app_path).unwrap(), mapfile::encode(&maps.app));
    assert_eq!(maps.mst.dims, vec![63, 300, 3]);
    assert_eq!(maps.wav.dims, vec![236, 300]);

    let dir2 = tempfile::tempdir().unwrap();
    gen_dataset(&bench, dir2.path()).unwrap();
    for rec in &all.samples {
        let name = rec.wav_path.file_name().unwrap();
        assert_eq!(
            fs::read(&rec.wav_path).unwrap(),
            fs::read(dir2.path().join("maps").join(name)).unwrap()
        );
    }
    assert_eq!(
        fs::read(&out.manifest).unwrap(),
        fs::read(dir2.path().join(MANIFEST)).unwrap()
    );
}

#[test]
fn load_dataset_reports_damage() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen_dataset(&small_bench(1), dir.path()).unwrap();
    let all = load_dataset(&out.manifest).unwrap();

    let victim = &all.samples[0].mst_path;
    let bytes = fs::read(victim).unwrap();
    fs::write(victim, &bytes[..bytes.len() / 2]).unwrap();
    match load_dataset(&out.manifest) {
        Err(Error::Format { path, .. }) => assert_eq!(&path, victim),
        other => panic!("expected format error, got {other:?}"),
    }
    fs::write(victim, b"NOTAMAP\0rest").unwrap();
    assert!(matches!(load_dataset(&out.manifest), Err(Error::Format { .. })));

    fs::remove_file(victim).unwrap();
    let err = load_dataset(&out.manifest).unwrap_err();
    assert!(err.to_string().contains(&victim.display().to_string()), "{err}");

    let text = fs::read_to_string(&out.manifest).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "broken\tline";
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, lines.join("\n")).unwrap();
    match load_dataset(&bad) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}
