//! Oracle suites: gradients against central differences, the FFT wavelet
//! transform against direct quadrature, and metrics against brute-force
//! sweeps.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cwt::{cwt_forward, DirectCwt, Filterbank, FilterbankConfig};
use crate::error::Result;
use crate::metrics::{auc, eer, tpr_at_fpr, ScoreSet};
use crate::models::{ArchitectureConfig, Batch, Fusion, HeadConfig, JointModel, Modality, ModelConfig};
use crate::task::{Label, Task};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    /// Errors must be strictly below the tolerance, or exactly zero when
    /// the tolerance is zero.
    pub fn passed(&self) -> bool {
        if self.tolerance == 0.0 {
            self.max_error == 0.0
        } else {
            self.max_error < self.tolerance
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: cases={} max_error={:.3e} tolerance={:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance
        )
    }
}

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Minimum distance of every ReLU input from zero for a batch to be used in
/// a central-difference check at [`GRAD_EPS`].
pub const RELU_MARGIN: f64 = 1e-4;

/// The architecture variants covered by the gradient suite.
pub fn architecture_variants() -> Vec<ArchitectureConfig> {
    let branches = [
        (Fusion::None, Modality::Appearance),
        (Fusion::None, Modality::Rppg),
        (Fusion::Concat, Modality::Rppg),
        (Fusion::WeightedNorm, Modality::Rppg),
    ];
    let n_layers = 2;
    let mut out = Vec::new();
    for (fusion, modality) in branches {
        for head in [HeadConfig::Shared2, HeadConfig::Shared3, HeadConfig::Separate2] {
            for n_shared in [0, n_layers / 2, n_layers] {
                out.push(ArchitectureConfig {
                    n_layers,
                    n_shared,
                    head,
                    fusion,
                    modality,
                    ..Default::default()
                });
            }
        }
    }
    out
}

/// Small maps and widths that keep an all-parameter finite-difference check
/// cheap while exercising every code path.
pub fn grad_check_model(arch: ArchitectureConfig) -> ModelConfig {
    ModelConfig {
        arch,
        block_channels: vec![2, 3],
        feature_dim: 3,
        app_dims: vec![8, 8, 3],
        app_pool: [1, 1],
        mst_dims: vec![8, 12, 3],
        mst_pool: [1, 1],
        wav_dims: vec![16, 8],
        wav_pool: [2, 1],
        init_seed: 3,
    }
}

fn random_input(rng: &mut ChaCha8Rng, b: usize, shape: [usize; 3]) -> Tensor {
    let n = b * shape.iter().product::<usize>();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![b, shape[0], shape[1], shape[2]], data).expect("consistent shape")
}

fn random_batch(cfg: &ModelConfig, seed: u64) -> Batch {
    use Task::*;
    let tasks = vec![Spoof, Forgery, Spoof, Forgery, Forgery, Spoof];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = tasks.len();
    Batch {
        app: Some(random_input(&mut rng, b, cfg.app_encoder().input_shape())),
        mst: Some(random_input(&mut rng, b, cfg.mst_encoder().input_shape())),
        wav: Some(random_input(&mut rng, b, cfg.wav_encoder().input_shape())),
        tasks,
    }
}

/// First seeded batch whose ReLU inputs all clear [`RELU_MARGIN`].
pub fn smooth_batch(model: &JointModel, seed: u64) -> Result<Batch> {
    for s in seed..seed + 500 {
        let b = random_batch(model.config(), s);
        if model.relu_margin(&b)?.is_none_or(|m| m > RELU_MARGIN) {
            return Ok(b);
        }
    }
    Err(crate::Error::Parameter(
        "no batch clear of ReLU kinks in 500 draws".into(),
    ))
}

fn grad_labels(n: usize) -> Vec<Label> {
    (0..n)
        .map(|i| if i % 3 == 0 { Label::Bonafide } else { Label::Attack })
        .collect()
}

/// Gradient check of every architecture variant. With `inject_bug`, the
/// analytic gradient of one weight is corrupted before comparison.
pub fn grad_suite(inject_bug: bool) -> Result<SuiteReport> {
    let variants = architecture_variants();
    let mut max_error: f64 = 0.0;
    for arch in &variants {
        let model = JointModel::new(grad_check_model(arch.clone()))?;
        let batch = smooth_batch(&model, 12)?;
        let report = model.grad_check_with(&batch, &grad_labels(batch.len()), GRAD_EPS, |g| {
            if inject_bug {
                g[0][0] += 1e-2;
            }
        })?;
        max_error = max_error.max(report.max_rel_error);
    }
    Ok(SuiteReport {
        name: "grad".into(),
        cases: variants.len(),
        max_error,
        tolerance: GRAD_TOLERANCE,
    })
}

/// Relative L2 distance between the FFT path and direct quadrature over
/// the full filterbank, worst of `signals` random signals.
pub fn cwt_agreement(signals: usize, n_samples: usize, fps: f64, seed: u64) -> Result<SuiteReport> {
    let fb = Filterbank::new(n_samples, fps, FilterbankConfig::default())?;
    let direct = DirectCwt::new(&fb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    for _ in 0..signals {
        let x: Vec<f64> = (0..n_samples).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fast = cwt_forward(&x, &fb)?;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for k in 0..fb.len() {
            for tau in 0..n_samples {
                let o = direct.magnitude(&x, k, tau)?;
                let d = fast.row(k)[tau] - o;
                num += d * d;
                den += o * o;
            }
        }
        max_error = max_error.max((num / den).sqrt());
    }
    Ok(SuiteReport {
        name: "cwt.agreement".into(),
        cases: signals,
        max_error,
        tolerance: 1e-6,
    })
}

/// Row distance between the strongest wavelet row of a pure tone and the
/// row whose peak frequency is nearest the tone.
pub fn cwt_localization(freq: f64, n_samples: usize, fps: f64) -> Result<SuiteReport> {
    let fb = Filterbank::new(n_samples, fps, FilterbankConfig::default())?;
    let x: Vec<f64> = (0..n_samples)
        .map(|t| (2.0 * std::f64::consts::PI * freq * t as f64 / fps).cos())
        .collect();
    let map = cwt_forward(&x, &fb)?;
    let energy = map.row_energy();
    let best = (0..energy.len())
        .max_by(|&a, &b| energy[a].total_cmp(&energy[b]))
        .expect("non-empty filterbank");
    let nearest = fb.nearest_row(freq);
    Ok(SuiteReport {
        name: format!("cwt.localization@{freq}Hz"),
        cases: 1,
        max_error: best.abs_diff(nearest) as f64,
        tolerance: 0.0,
    })
}

/// Random score set with ties: scores drawn from a coarse grid, both
/// classes present.
pub fn random_score_set(rng: &mut ChaCha8Rng) -> ScoreSet {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(2..=40);
    let mut flags: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    flags[0] = 1;
    flags[1] = 0;
    let scores: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    ScoreSet::from_flags(&scores, &flags).expect("equal lengths")
}

pub fn auc_oracle(s: &ScoreSet) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, li) in s.labels.iter().enumerate() {
        if !li.is_bonafide() {
            continue;
        }
        for (j, lj) in s.labels.iter().enumerate() {
            if lj.is_bonafide() {
                continue;
            }
            pairs += 1.0;
            if s.scores[i] > s.scores[j] {
                wins += 1.0;
            } else if s.scores[i] == s.scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn distinct(s: &ScoreSet) -> Vec<f64> {
    let mut t = s.scores.clone();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Exhaustive sweep: for every distinct threshold count false accepts
/// (attacks ≥ t) and false rejects (bonafides < t) directly.
pub fn eer_oracle(s: &ScoreSet) -> f64 {
    let (nb, na) = s.counts();
    let mut best: Option<(i128, usize, usize)> = None;
    for t in distinct(s) {
        let fa = s
            .scores
            .iter()
            .zip(&s.labels)
            .filter(|(v, l)| !l.is_bonafide() && **v >= t)
            .count();
        let fr = s
            .scores
            .iter()
            .zip(&s.labels)
            .filter(|(v, l)| l.is_bonafide() && **v < t)
            .count();
        let gap = (fa as i128 * nb as i128 - fr as i128 * na as i128).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, fa, fr));
        }
    }
    let (_, fa, fr) = best.expect("non-empty");
    (fa as f64 / na as f64 + fr as f64 / nb as f64) / 2.0
}

/// Exhaustive enumeration over every distinct score and +∞.
pub fn tpr_oracle(s: &ScoreSet, target: f64) -> f64 {
    let (nb, na) = s.counts();
    let mut thresholds = distinct(s);
    thresholds.push(f64::INFINITY);
    thresholds
        .into_iter()
        .filter_map(|t| {
            let tp = s
                .scores
                .iter()
                .zip(&s.labels)
                .filter(|(v, l)| l.is_bonafide() && **v >= t)
                .count();
            let fp = s
                .scores
                .iter()
                .zip(&s.labels)
                .filter(|(v, l)| !l.is_bonafide() && **v >= t)
                .count();
            (fp as f64 / na as f64 <= target).then_some(tp as f64 / nb as f64)
        })
        .fold(0.0, f64::max)
}

/// AUC, EER and TPR@FPR against the oracles on `sets` random score sets.
pub fn metric_suite(sets: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut e_auc, mut e_eer, mut e_tpr): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..sets {
        let s = random_score_set(&mut rng);
        e_auc = e_auc.max((auc(&s)? - auc_oracle(&s)).abs());
        e_eer = e_eer.max((eer(&s)? - eer_oracle(&s)).abs());
        for target in [0.10, 0.01] {
            e_tpr = e_tpr.max((tpr_at_fpr(&s, target)? - tpr_oracle(&s, target)).abs());
        }
    }
    let report = |name: &str, max_error, tolerance| SuiteReport {
        name: name.into(),
        cases: sets,
        max_error,
        tolerance,
    };
    Ok(vec![
        report("metrics.auc", e_auc, 1e-12),
        report("metrics.eer", e_eer, 0.0),
        report("metrics.tpr@fpr", e_tpr, 0.0),
    ])
}

/// Every suite as run by the command-line `verify`.
pub fn run_all(inject_grad_bug: bool) -> Result<Vec<SuiteReport>> {
    let mut out = vec![grad_suite(inject_grad_bug)?];
    out.push(cwt_agreement(20, 256, 30.0, 2024)?);
    out.push(cwt_localization(1.2, 300, 30.0)?);
    out.extend(metric_suite(1000, 7)?);
    Ok(out)
}
