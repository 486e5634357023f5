//! Deterministic synthetic benchmark: bonafide, spoof and forgery samples
//! for the physiological and appearance modalities, across domains.
//!
//! Bonafide traces carry a periodic pulse with a harmonic. Spoof traces
//! replace it with flat-spectrum broadband flicker. Forgery traces keep a
//! weak pulse whose phase jumps every second. Appearance patches are smooth
//! blobs; spoofs add a fine grid, forgeries shift one half.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::cwt::{wavelet_map, Filterbank, FilterbankConfig};
use crate::error::{Error, Result};
use crate::mapfile::{self, MapArray};
use crate::metrics::Split;
use crate::rppg::{build_mstmap, ColorChannel, RegionTraceSet};
use crate::task::{Label, Task};

pub const PATCH_SIZE: usize = 32;
/// Pulse amplitude; noise and drift are expressed relative to it.
const PULSE_AMPLITUDE: f64 = 1.0;
const HARMONIC_RATIO: f64 = 0.3;
const CHANNEL_DC: [f64; 3] = [150.0, 110.0, 90.0];
const PULSE_WEIGHT: [f64; 3] = [0.4, 1.0, 0.25];
const SPOOF_BROADBAND_RMS: f64 = 0.6;
const FORGERY_ATTENUATION: f64 = 0.15;
const SKIN: [f64; 3] = [0.75, 0.55, 0.45];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SampleClass {
    Bonafide,
    Spoof,
    Forgery,
}

impl SampleClass {
    pub fn name(self) -> &'static str {
        match self {
            SampleClass::Bonafide => "bonafide",
            SampleClass::Spoof => "spoof",
            SampleClass::Forgery => "forgery",
        }
    }

    pub fn label(self) -> Label {
        match self {
            SampleClass::Bonafide => Label::Bonafide,
            _ => Label::Attack,
        }
    }

    /// The attack class of a task.
    pub fn attack_of(task: Task) -> Self {
        match task {
            Task::Spoof => SampleClass::Spoof,
            Task::Forgery => SampleClass::Forgery,
        }
    }
}

impl fmt::Display for SampleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Acquisition conditions of one synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub split: Split,
    pub fps: f64,
    /// Per-sample Gaussian trace noise, relative to the pulse amplitude.
    pub noise_sigma: f64,
    /// Amplitude of the slow shared illumination sinusoid.
    pub illumination_drift: f64,
    /// Expected motion artifacts per second.
    pub motion_artifact_rate: f64,
    /// Additive RGB offset of the appearance patch.
    pub tint: [f64; 3],
    /// Gaussian pixel noise of the appearance patch.
    pub pixel_noise: f64,
    /// Blob width of the bonafide patch in pixels.
    pub texture_scale: f64,
    /// Amplitude of the spoof grid.
    pub artifact_grain: f64,
    /// Brightness step across a forgery seam.
    pub seam_shift: f64,
}

impl DomainSpec {
    pub fn intra(name: &str) -> Self {
        Self {
            name: name.to_string(),
            split: Split::Intra,
            fps: 30.0,
            noise_sigma: 0.15,
            illumination_drift: 0.2,
            motion_artifact_rate: 0.0,
            tint: [0.0; 3],
            pixel_noise: 0.01,
            texture_scale: 7.5,
            artifact_grain: 0.12,
            seam_shift: 0.12,
        }
    }

    /// The shifted counterpart used for cross-domain testing: trace and
    /// pixel noise ×3, drift ×2 and an RGB tint offset.
    pub fn shifted(&self, name: &str, tint_shift: [f64; 3]) -> Self {
        Self {
            name: name.to_string(),
            split: Split::Cross,
            noise_sigma: self.noise_sigma * 3.0,
            illumination_drift: self.illumination_drift * 2.0,
            pixel_noise: self.pixel_noise * 3.0,
            tint: [
                self.tint[0] + tint_shift[0],
                self.tint[1] + tint_shift[1],
                self.tint[2] + tint_shift[2],
            ],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Parameter(format!("domain {} fps must be positive", self.name)));
        }
        let non_negative = [
            self.noise_sigma,
            self.illumination_drift,
            self.motion_artifact_rate,
            self.pixel_noise,
            self.artifact_grain,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Parameter(format!(
                "domain {} has a negative noise, drift or artifact parameter",
                self.name
            )));
        }
        if self.name.is_empty() || self.name.contains(char::is_whitespace) {
            return Err(Error::Parameter(format!("bad domain name '{}'", self.name)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSpec {
    pub class: SampleClass,
    pub task: Task,
    pub heart_rate_bpm: f64,
    pub seed: u64,
    pub regions: usize,
    pub frames: usize,
}

impl SampleSpec {
    pub fn new(class: SampleClass, task: Task, heart_rate_bpm: f64, seed: u64) -> Self {
        Self {
            class,
            task,
            heart_rate_bpm,
            seed,
            regions: 6,
            frames: 300,
        }
    }
}

/// Slow illumination change, Gaussian noise and motion spikes shared by all
/// classes.
struct Nuisance {
    drift: Vec<f64>,
    motion: Vec<f64>,
}

impl Nuisance {
    fn draw(rng: &mut ChaCha8Rng, frames: usize, domain: &DomainSpec) -> Self {
        let f_drift = rng.random_range(0.05..0.15);
        let phase = rng.random_range(0.0..2.0 * PI);
        let drift = (0..frames)
            .map(|t| {
                let s = t as f64 / domain.fps;
                domain.illumination_drift * (2.0 * PI * f_drift * s + phase).sin()
            })
            .collect();
        let mut motion = vec![0.0; frames];
        let duration = frames as f64 / domain.fps;
        let expected = domain.motion_artifact_rate * duration;
        if expected > 0.0 {
            let count = Poisson::new(expected).expect("positive rate").sample(rng) as usize;
            let width = 0.2 * domain.fps;
            for _ in 0..count {
                let center = rng.random_range(0.0..frames as f64);
                let amp = rng.random_range(-2.0..2.0) * PULSE_AMPLITUDE;
                for (t, m) in motion.iter_mut().enumerate() {
                    let d = (t as f64 - center) / width;
                    *m += amp * (-0.5 * d * d).exp();
                }
            }
        }
        Self { drift, motion }
    }
}

fn assemble(
    rng: &mut ChaCha8Rng,
    spec: &SampleSpec,
    domain: &DomainSpec,
    region_signal: impl Fn(usize, usize) -> f64,
) -> Result<RegionTraceSet> {
    let nuisance = Nuisance::draw(rng, spec.frames, domain);
    let dc: Vec<f64> = (0..spec.regions).map(|_| rng.random_range(0.95..1.05)).collect();
    let noise = Normal::new(0.0, domain.noise_sigma.max(0.0)).expect("finite sigma");
    let mut values = Vec::with_capacity(spec.regions * spec.frames * 3);
    for r in 0..spec.regions {
        for t in 0..spec.frames {
            let s = region_signal(r, t);
            let shared = nuisance.drift[t] + nuisance.motion[t];
            for c in 0..3 {
                let n = if domain.noise_sigma > 0.0 {
                    noise.sample(rng)
                } else {
                    0.0
                };
                values.push(CHANNEL_DC[c] * dc[r] + PULSE_WEIGHT[c] * s + shared + n);
            }
        }
    }
    RegionTraceSet::new(spec.regions, spec.frames, domain.fps, values)
}

fn check_bpm(bpm: f64) -> Result<()> {
    if !(48.0..=150.0).contains(&bpm) {
        return Err(Error::Parameter(format!("heart rate {bpm} bpm outside [48, 150]")));
    }
    Ok(())
}

/// Per-region pulse `a·(cos(2πft + φ_r) + 0.3·cos(4πft + 2φ_r))` plus domain
/// nuisance.
pub fn gen_bonafide_trace(spec: &SampleSpec, domain: &DomainSpec) -> Result<RegionTraceSet> {
    check_bpm(spec.heart_rate_bpm)?;
    domain.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f = spec.heart_rate_bpm / 60.0;
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let regions: Vec<(f64, f64)> = (0..spec.regions)
        .map(|_| (rng.random_range(0.8..1.2), phase0 + rng.random_range(-0.3..0.3)))
        .collect();
    let fps = domain.fps;
    assemble(&mut rng, spec, domain, |r, t| {
        let (amp, phi) = regions[r];
        let w = 2.0 * PI * f * t as f64 / fps;
        PULSE_AMPLITUDE * amp * ((w + phi).cos() + HARMONIC_RATIO * (2.0 * w + 2.0 * phi).cos())
    })
}

/// Spoof: a flat-magnitude random-phase broadband component shared by all
/// regions. Forgery: the bonafide carrier at 0.15× amplitude with a fresh
/// phase offset in [−π/2, π/2] every second.
pub fn gen_attack_trace(spec: &SampleSpec, domain: &DomainSpec) -> Result<RegionTraceSet> {
    domain.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.frames;
    let fps = domain.fps;
    match spec.class {
        SampleClass::Bonafide => Err(Error::Parameter("attack trace requested for bonafide".into())),
        SampleClass::Spoof => {
            let bins = (n - 1) / 2;
            let phases: Vec<f64> = (0..bins).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let mut broadband: Vec<f64> = (0..n)
                .map(|t| {
                    phases
                        .iter()
                        .enumerate()
                        .map(|(k, ph)| (2.0 * PI * ((k + 1) * t % n) as f64 / n as f64 + ph).cos())
                        .sum()
                })
                .collect();
            let rms = (broadband.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            broadband.iter_mut().for_each(|v| *v *= SPOOF_BROADBAND_RMS / rms);
            let gains: Vec<f64> = (0..spec.regions).map(|_| rng.random_range(0.8..1.2)).collect();
            assemble(&mut rng, spec, domain, |r, t| gains[r] * broadband[t])
        }
        SampleClass::Forgery => {
            check_bpm(spec.heart_rate_bpm)?;
            let f = spec.heart_rate_bpm / 60.0;
            let phase0 = rng.random_range(0.0..2.0 * PI);
            let segment = (fps.round() as usize).max(1);
            let offsets: Vec<f64> = (0..n.div_ceil(segment))
                .map(|_| rng.random_range(-PI / 2.0..=PI / 2.0))
                .collect();
            let regions: Vec<(f64, f64)> = (0..spec.regions)
                .map(|_| (rng.random_range(0.8..1.2), rng.random_range(-0.3..0.3)))
                .collect();
            assemble(&mut rng, spec, domain, |r, t| {
                let (amp, dphi) = regions[r];
                let phi = phase0 + dphi + offsets[t / segment];
                let w = 2.0 * PI * f * t as f64 / fps;
                FORGERY_ATTENUATION
                    * PULSE_AMPLITUDE
                    * amp
                    * ((w + phi).cos() + HARMONIC_RATIO * (2.0 * w + 2.0 * phi).cos())
            })
        }
    }
}

/// Either trace generator, by class.
pub fn gen_trace(spec: &SampleSpec, domain: &DomainSpec) -> Result<RegionTraceSet> {
    match spec.class {
        SampleClass::Bonafide => gen_bonafide_trace(spec, domain),
        _ => gen_attack_trace(spec, domain),
    }
}

/// `[32, 32, 3]` channel-last patch. The base (skin tone, tint, blob and
/// pixel noise) depends only on the seed, so classes drawn with one seed
/// share it.
pub fn gen_appearance_patch(spec: &SampleSpec, domain: &DomainSpec) -> Result<MapArray> {
    domain.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = PATCH_SIZE;
    let c0 = (n as f64 - 1.0) / 2.0;
    let (cx, cy) = (c0 + rng.random_range(-1.0..1.0), c0 + rng.random_range(-1.0..1.0));
    let width = domain.texture_scale * rng.random_range(0.85..1.15);
    let blob_amp = rng.random_range(0.12..0.18);
    let noise = Normal::new(0.0, domain.pixel_noise).expect("finite sigma");
    let mut px = vec![0.0f64; n * n * 3];
    for y in 0..n {
        for x in 0..n {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let blob = blob_amp * (-d2 / (2.0 * width * width)).exp();
            for c in 0..3 {
                let e = if domain.pixel_noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                px[(y * n + x) * 3 + c] = SKIN[c] + domain.tint[c] + blob + e;
            }
        }
    }
    match spec.class {
        SampleClass::Bonafide => {}
        SampleClass::Spoof => {
            let radial = rng.random_range(0.3..0.45);
            let angle = rng.random_range(0.0..PI);
            let (fx, fy) = (radial * angle.cos(), radial * angle.sin());
            let phase = rng.random_range(0.0..2.0 * PI);
            for y in 0..n {
                for x in 0..n {
                    let g = domain.artifact_grain * (2.0 * PI * (fx * x as f64 + fy * y as f64) + phase).cos();
                    for c in 0..3 {
                        px[(y * n + x) * 3 + c] += g;
                    }
                }
            }
        }
        SampleClass::Forgery => {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let right = rng.random_bool(0.5);
            let seam = n / 2;
            for y in 0..n {
                for x in 0..n {
                    if (x >= seam) == right {
                        for c in 0..3 {
                            px[(y * n + x) * 3 + c] += sign * domain.seam_shift;
                        }
                    }
                }
            }
        }
    }
    MapArray::from_f64(vec![n, n, 3], &px)
}

/// Benchmark layout: per task, its domains and per-class sample counts.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub domains: Vec<(Task, DomainSpec)>,
    /// Samples per (domain, class).
    pub per_class: usize,
    pub master_seed: u64,
    /// Fraction of each intra (domain, class) group used for training.
    pub train_fraction: f64,
    pub regions: usize,
    pub frames: usize,
    pub voices_per_octave: usize,
    pub min_freq: f64,
}

impl BenchmarkSpec {
    /// Two intra and two shifted cross domains per task.
    pub fn default_with_seed(master_seed: u64) -> Self {
        let mut domains = Vec::new();
        for task in Task::ALL {
            let t = task.name();
            let a = DomainSpec::intra(&format!("{t}_intra0"));
            let b = DomainSpec {
                noise_sigma: 0.2,
                illumination_drift: 0.3,
                tint: [0.02, 0.0, -0.02],
                texture_scale: 8.5,
                ..DomainSpec::intra(&format!("{t}_intra1"))
            };
            let x0 = a.shifted(&format!("{t}_cross0"), [0.08, 0.0, -0.06]);
            let x1 = b.shifted(&format!("{t}_cross1"), [-0.06, 0.02, 0.08]);
            domains.extend([(task, a), (task, b), (task, x0), (task, x1)]);
        }
        Self {
            domains,
            per_class: 200,
            master_seed,
            train_fraction: 0.5,
            regions: 6,
            frames: 300,
            voices_per_octave: 48,
            min_freq: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() || self.per_class == 0 {
            return Err(Error::Parameter("benchmark needs domains and samples".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Parameter(format!(
                "train fraction {} outside [0, 1]",
                self.train_fraction
            )));
        }
        let mut names: Vec<&str> = self.domains.iter().map(|(_, d)| d.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("duplicate domain names".into()));
        }
        for (_, d) in &self.domains {
            d.validate()?;
        }
        Ok(())
    }

    fn train_count(&self) -> usize {
        (self.per_class as f64 * self.train_fraction).round() as usize
    }
}

/// Per-sample seed derived from the master seed and the sample id.
pub fn sample_seed(master: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub task: Task,
    pub label: Label,
    pub domain: String,
    pub mst_path: PathBuf,
    pub wav_path: PathBuf,
    pub app_path: PathBuf,
}

/// Samples listed by one manifest, with paths resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHandle {
    pub manifest: PathBuf,
    pub samples: Vec<SampleRecord>,
}

impl DatasetHandle {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn of_task(&self, task: Task) -> Vec<&SampleRecord> {
        self.samples.iter().filter(|s| s.task == task).collect()
    }
}

/// The three map files of one sample, as written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMaps {
    pub mst: MapArray,
    pub wav: MapArray,
    pub app: MapArray,
}

/// Everything needed to generate a single sample in isolation.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedSample {
    pub id: String,
    pub task: Task,
    pub class: SampleClass,
    pub domain: DomainSpec,
    /// Index within its (domain, class) group.
    pub index: usize,
}

impl PlannedSample {
    pub fn spec(&self, bench: &BenchmarkSpec) -> SampleSpec {
        let seed = sample_seed(bench.master_seed, &self.id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bpm = rng.random_range(48.0..=150.0);
        SampleSpec {
            regions: bench.regions,
            frames: bench.frames,
            ..SampleSpec::new(self.class, self.task, bpm, rng.random())
        }
    }
}

/// Every sample of the benchmark in manifest order.
pub fn plan(bench: &BenchmarkSpec) -> Vec<PlannedSample> {
    let mut out = Vec::new();
    for (task, domain) in &bench.domains {
        for class in [SampleClass::Bonafide, SampleClass::attack_of(*task)] {
            for index in 0..bench.per_class {
                out.push(PlannedSample {
                    id: format!("{}-{}-{:04}", domain.name, class, index),
                    task: *task,
                    class,
                    domain: domain.clone(),
                    index,
                });
            }
        }
    }
    out
}

/// Generates the three maps of one sample.
pub fn gen_sample(bench: &BenchmarkSpec, sample: &PlannedSample, fb: &Filterbank) -> Result<SampleMaps> {
    let spec = sample.spec(bench);
    let trace = gen_trace(&spec, &sample.domain)?;
    let mst = build_mstmap(&trace, bench.frames)?;
    let wav = wavelet_map(&trace, fb, ColorChannel::Green)?;
    Ok(SampleMaps {
        mst: MapArray::from_f64(mst.shape().to_vec(), &mst.values)?,
        wav: MapArray::from_f64(vec![wav.rows(), wav.frames], &wav.values)?,
        app: gen_appearance_patch(&spec, &sample.domain)?,
    })
}

pub fn filterbank_for(bench: &BenchmarkSpec, fps: f64) -> Result<Filterbank> {
    Filterbank::new(
        bench.frames,
        fps,
        FilterbankConfig {
            voices_per_octave: bench.voices_per_octave,
            min_freq: bench.min_freq,
            ..Default::default()
        },
    )
}

pub const MANIFEST: &str = "manifest.tsv";

/// Name of a per-task split manifest.
pub fn split_manifest(task: Task, part: &str) -> String {
    format!("{task}_{part}.tsv")
}

/// Paths of the manifests written by [`gen_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedBenchmark {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub samples: usize,
}

impl GeneratedBenchmark {
    pub fn train(&self, task: Task) -> PathBuf {
        self.root.join(split_manifest(task, "train"))
    }

    pub fn intra_test(&self, task: Task) -> PathBuf {
        self.root.join(split_manifest(task, "intra_test"))
    }

    pub fn cross_test(&self, task: Task) -> PathBuf {
        self.root.join(split_manifest(task, "cross_test"))
    }
}

fn manifest_line(s: &PlannedSample) -> String {
    let p = |kind: &str| format!("maps/{}.{kind}.pfm", s.id);
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        s.id,
        s.task,
        s.class.label(),
        s.domain.name,
        p("mst"),
        p("wav"),
        p("app")
    )
}

const MANIFEST_HEADER: &str = "# id\ttask\tlabel\tdomain\tmst_path\twav_path\tapp_path\n";

/// Writes every sample's maps under `out/maps/` plus `manifest.tsv` and, per
/// task, `<task>_train.tsv`, `<task>_intra_test.tsv` and
/// `<task>_cross_test.tsv`.
pub fn gen_dataset(bench: &BenchmarkSpec, out: &Path) -> Result<GeneratedBenchmark> {
    bench.validate()?;
    let maps = out.join("maps");
    fs::create_dir_all(&maps).map_err(|e| Error::io(&maps, e))?;
    let planned = plan(bench);
    let mut banks: Vec<(f64, Filterbank)> = Vec::new();
    for s in &planned {
        let fps = s.domain.fps;
        if !banks.iter().any(|(f, _)| *f == fps) {
            banks.push((fps, filterbank_for(bench, fps)?));
        }
        let fb = &banks.iter().find(|(f, _)| *f == fps).expect("filterbank built").1;
        let m = gen_sample(bench, s, fb)?;
        for (kind, map) in [("mst", &m.mst), ("wav", &m.wav), ("app", &m.app)] {
            mapfile::write(&maps.join(format!("{}.{kind}.pfm", s.id)), map)?;
        }
    }
    let train_n = bench.train_count();
    let mut all = String::from(MANIFEST_HEADER);
    for s in &planned {
        all.push_str(&manifest_line(s));
    }
    let write = |name: &str, text: &str| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(MANIFEST, &all)?;
    for task in Task::ALL {
        let mut parts = [
            String::from(MANIFEST_HEADER),
            String::from(MANIFEST_HEADER),
            String::from(MANIFEST_HEADER),
        ];
        for s in planned.iter().filter(|s| s.task == task) {
            let slot = match (s.domain.split, s.index < train_n) {
                (Split::Intra, true) => 0,
                (Split::Intra, false) => 1,
                (Split::Cross, _) => 2,
            };
            parts[slot].push_str(&manifest_line(s));
        }
        for (part, text) in ["train", "intra_test", "cross_test"].iter().zip(&parts) {
            write(&split_manifest(task, part), text)?;
        }
    }
    Ok(GeneratedBenchmark {
        root: out.to_path_buf(),
        manifest: out.join(MANIFEST),
        samples: planned.len(),
    })
}

/// Parses a manifest and checks that every referenced map has a valid
/// header and size.
pub fn load_dataset(manifest: &Path) -> Result<DatasetHandle> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: manifest.to_path_buf(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 tab-separated fields, found {}", f.len())));
        }
        let task = Task::from_str(f[1]).map_err(|e| err(e.to_string()))?;
        let label = Label::from_str(f[2]).map_err(|e| err(e.to_string()))?;
        if f[0].is_empty() || f[3].is_empty() {
            return Err(err("empty id or domain".into()));
        }
        let rec = SampleRecord {
            id: f[0].to_string(),
            task,
            label,
            domain: f[3].to_string(),
            mst_path: base.join(f[4]),
            wav_path: base.join(f[5]),
            app_path: base.join(f[6]),
        };
        for p in [&rec.mst_path, &rec.wav_path, &rec.app_path] {
            mapfile::check(p)?;
        }
        samples.push(rec);
    }
    Ok(DatasetHandle {
        manifest: manifest.to_path_buf(),
        samples,
    })
}
