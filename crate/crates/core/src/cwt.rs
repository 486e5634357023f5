//! Continuous wavelet transform with generalized Morse wavelets.
//!
//! The filterbank lives in the frequency domain. Each scale `d` has the
//! analytic response `Ψ(dω) = 2·(dω/ω₀)^β · exp(−((dω)^γ − ω₀^γ))` on
//! positive frequencies and zero elsewhere, where `ω₀ = (β/γ)^{1/γ}` is the
//! peak, so a unit tone at a scale's center frequency yields magnitude 1.
//! Boundaries are circular.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::rppg::{global_signal, min_max_normalize, ColorChannel, RegionTraceSet, Signal};

#[derive(Clone, Debug, PartialEq)]
pub struct FilterbankConfig {
    pub voices_per_octave: usize,
    /// Morse symmetry parameter.
    pub gamma: f64,
    /// Morse decay parameter.
    pub beta: f64,
    /// Lowest analysed frequency in Hz; the highest is Nyquist.
    pub min_freq: f64,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        Self {
            voices_per_octave: 48,
            gamma: 3.0,
            beta: 20.0,
            min_freq: 0.5,
        }
    }
}

/// Per-scale frequency responses for a fixed signal length and frame rate.
#[derive(Clone)]
pub struct Filterbank {
    n_samples: usize,
    fps: f64,
    config: FilterbankConfig,
    scales: Vec<f64>,
    peak_freqs: Vec<f64>,
    freq_responses: Vec<Vec<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Filterbank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Filterbank")
            .field("n_samples", &self.n_samples)
            .field("fps", &self.fps)
            .field("config", &self.config)
            .field("scales", &self.scales.len())
            .finish()
    }
}

/// Peak radian frequency of the unit-scale Morse wavelet.
pub fn morse_peak(gamma: f64, beta: f64) -> f64 {
    (beta / gamma).powf(1.0 / gamma)
}

/// Unit-scale Morse response at radian frequency `omega`, peak gain 2.
pub fn morse_response(omega: f64, gamma: f64, beta: f64) -> f64 {
    if omega <= 0.0 {
        return 0.0;
    }
    let peak = morse_peak(gamma, beta);
    2.0 * (beta * (omega / peak).ln() - (omega.powf(gamma) - peak.powf(gamma))).exp()
}

impl Filterbank {
    pub fn new(n_samples: usize, fps: f64, config: FilterbankConfig) -> Result<Self> {
        if n_samples < 16 {
            return Err(Error::Parameter(format!(
                "filterbank needs ≥ 16 samples, got {n_samples}"
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Parameter(format!("fps must be positive, got {fps}")));
        }
        if config.voices_per_octave == 0 {
            return Err(Error::Parameter("voices per octave must be positive".into()));
        }
        if !(config.gamma > 0.0 && config.beta > 0.0) {
            return Err(Error::Parameter(format!(
                "Morse parameters must be positive, got gamma={} beta={}",
                config.gamma, config.beta
            )));
        }
        let nyquist = fps / 2.0;
        if !(config.min_freq > 0.0 && config.min_freq < nyquist) {
            return Err(Error::Parameter(format!(
                "min_freq {} outside (0, {nyquist})",
                config.min_freq
            )));
        }
        let voices = config.voices_per_octave as f64;
        let count = (voices * (nyquist / config.min_freq).log2() + 1e-9).floor() as usize + 1;
        let peak = morse_peak(config.gamma, config.beta);
        let peak_freqs: Vec<f64> = (0..count).map(|k| nyquist * (-(k as f64) / voices).exp2()).collect();
        let scales: Vec<f64> = peak_freqs.iter().map(|f| peak * fps / (2.0 * PI * f)).collect();
        let freq_responses = scales
            .iter()
            .map(|&d| {
                (0..n_samples)
                    .map(|j| {
                        if j == 0 || j > n_samples / 2 {
                            0.0
                        } else {
                            let omega = 2.0 * PI * j as f64 / n_samples as f64;
                            morse_response(d * omega, config.gamma, config.beta)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_samples,
            fps,
            forward: planner.plan_fft_forward(n_samples),
            inverse: planner.plan_fft_inverse(n_samples),
            config,
            scales,
            peak_freqs,
            freq_responses,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn config(&self) -> &FilterbankConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Dilation of each scale, in samples.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Center frequency of each scale in Hz, strictly decreasing.
    pub fn peak_freqs(&self) -> &[f64] {
        &self.peak_freqs
    }

    /// Gain of scale `k` at each DFT bin.
    pub fn freq_response(&self, k: usize) -> &[f64] {
        &self.freq_responses[k]
    }

    /// Row whose center frequency is nearest `freq` on a log axis.
    pub fn nearest_row(&self, freq: f64) -> usize {
        let target = freq.ln();
        (0..self.len())
            .min_by(|&a, &b| {
                let da = (self.peak_freqs[a].ln() - target).abs();
                let db = (self.peak_freqs[b].ln() - target).abs();
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    }
}

/// `[scales, frames]` non-negative CWT magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletMap {
    pub frames: usize,
    pub peak_freqs: Vec<f64>,
    pub values: Vec<f64>,
}

impl WaveletMap {
    pub fn rows(&self) -> usize {
        self.peak_freqs.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.frames..][..self.frames]
    }

    /// Mean magnitude of each row.
    pub fn row_means(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|k| self.row(k).iter().sum::<f64>() / self.frames as f64)
            .collect()
    }

    /// Sum of squared magnitudes of each row.
    pub fn row_energy(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|k| self.row(k).iter().map(|v| v * v).sum())
            .collect()
    }
}

/// Magnitude of the analytic wavelet coefficients at every shift and scale:
/// `|IDFT(DFT(s) ⊙ conj(Ψ_k))|`.
pub fn cwt_forward(signal: &[f64], fb: &Filterbank) -> Result<WaveletMap> {
    let n = fb.n_samples;
    if signal.len() != n {
        return Err(Error::dim("cwt_forward", &[signal.len()], &[n]));
    }
    let mut spectrum: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.forward.process(&mut spectrum);
    let mut values = Vec::with_capacity(fb.len() * n);
    let mut work = vec![Complex64::new(0.0, 0.0); n];
    let inv_n = 1.0 / n as f64;
    for response in &fb.freq_responses {
        for ((w, s), r) in work.iter_mut().zip(&spectrum).zip(response) {
            // responses are real, so conj(Ψ) = Ψ
            *w = s * r;
        }
        fb.inverse.process(&mut work);
        values.extend(work.iter().map(|c| c.norm() * inv_n));
    }
    Ok(WaveletMap {
        frames: n,
        peak_freqs: fb.peak_freqs.clone(),
        values,
    })
}

/// Literal quadrature of `∫ S(t) ψ_{τ,d}(t) dt` with the time-domain
/// wavelets obtained from the filterbank by a direct inverse DFT. Slow;
/// exists to validate [`cwt_forward`].
#[derive(Clone, Debug)]
pub struct DirectCwt {
    n: usize,
    wavelets: Vec<Vec<Complex64>>,
}

impl DirectCwt {
    pub fn new(fb: &Filterbank) -> Self {
        let n = fb.n_samples;
        let wavelets = fb
            .freq_responses
            .iter()
            .map(|resp| {
                (0..n)
                    .map(|t| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (j, &r) in resp.iter().enumerate() {
                            if r != 0.0 {
                                let ph = 2.0 * PI * ((j * t) % n) as f64 / n as f64;
                                acc += Complex64::from_polar(r, ph);
                            }
                        }
                        acc / n as f64
                    })
                    .collect()
            })
            .collect();
        Self { n, wavelets }
    }

    /// Time-domain wavelet of scale `k` centered at sample 0 (circular).
    pub fn wavelet(&self, k: usize) -> &[Complex64] {
        &self.wavelets[k]
    }

    /// Trapezoidal rule over one period `[0, n]` with unit spacing; the
    /// integrand is periodic so the end node equals the start node.
    pub fn magnitude(&self, signal: &[f64], k: usize, tau: usize) -> Result<f64> {
        if signal.len() != self.n {
            return Err(Error::dim("cwt_direct_oracle", &[signal.len()], &[self.n]));
        }
        let psi = &self.wavelets[k];
        let n = self.n;
        let integrand = |m: usize| signal[m % n] * psi[(m + n - tau % n) % n];
        let mut acc = (integrand(0) + integrand(n)) * 0.5;
        for m in 1..n {
            acc += integrand(m);
        }
        Ok(acc.norm())
    }
}

/// One-off quadrature evaluation; see [`DirectCwt`] for repeated use.
pub fn cwt_direct_oracle(signal: &[f64], fb: &Filterbank, k: usize, tau: usize) -> Result<f64> {
    if k >= fb.len() {
        return Err(Error::Parameter(format!("scale index {k} out of range")));
    }
    DirectCwt::new(fb).magnitude(signal, k, tau)
}

/// Global pulse signal → CWT magnitude → min–max normalization of the whole
/// map to [0, 1]. A flat trace yields an all-zero map.
pub fn wavelet_map(trace: &RegionTraceSet, fb: &Filterbank, channel: ColorChannel) -> Result<WaveletMap> {
    let signal: Signal = global_signal(trace, fb.n_samples, channel)?;
    let mut map = cwt_forward(&signal.samples, fb)?;
    if signal.degenerate {
        map.values.fill(0.0);
    } else {
        min_max_normalize(&mut map.values);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fb(n: usize) -> Filterbank {
        Filterbank::new(n, 30.0, FilterbankConfig::default()).unwrap()
    }

    #[test]
    fn peak_of_scaled_response() {
        let bank = fb(300);
        let peak = morse_peak(3.0, 20.0);
        assert!((peak - (20.0f64 / 3.0).cbrt()).abs() < 1e-15);
        // response maximum of scale d sits at ω = ω₀/d
        for &d in &bank.scales()[..5] {
            let at = |w: f64| morse_response(d * w, 3.0, 20.0);
            let w0 = peak / d;
            assert!((at(w0) - 2.0).abs() < 1e-12);
            assert!(at(w0 * 1.001) < at(w0) && at(w0 * 0.999) < at(w0));
        }
    }

    #[test]
    fn two_octave_grid_has_97_rows() {
        let cfg = FilterbankConfig {
            min_freq: 30.0 / 8.0,
            ..Default::default()
        };
        let bank = Filterbank::new(64, 30.0, cfg).unwrap();
        assert_eq!(bank.len(), 97);
    }

    #[test]
    fn default_grid_and_ratio() {
        let bank = fb(300);
        assert_eq!(bank.len(), 236);
        assert!((bank.peak_freqs()[0] - 15.0).abs() < 1e-12);
        assert!(*bank.peak_freqs().last().unwrap() >= 0.5);
        for w in bank.peak_freqs().windows(2) {
            assert!((w[0] / w[1] - 2f64.powf(1.0 / 48.0)).abs() < 1e-12);
        }
        for w in bank.scales().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn responses_are_analytic() {
        let bank = fb(64);
        for k in 0..bank.len() {
            let r = bank.freq_response(k);
            assert_eq!(r[0], 0.0);
            assert!(r[33..].iter().all(|&v| v == 0.0));
            assert!(r.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn parameter_errors() {
        assert!(Filterbank::new(8, 30.0, FilterbankConfig::default()).is_err());
        assert!(Filterbank::new(64, 0.0, FilterbankConfig::default()).is_err());
        let cfg = FilterbankConfig {
            min_freq: 20.0,
            ..Default::default()
        };
        assert!(Filterbank::new(64, 30.0, cfg).is_err());
        let cfg = FilterbankConfig {
            voices_per_octave: 0,
            ..Default::default()
        };
        assert!(Filterbank::new(64, 30.0, cfg).is_err());
    }

    #[test]
    fn zero_signal_and_homogeneity() {
        let bank = fb(128);
        let zero = cwt_forward(&[0.0; 128], &bank).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let s: Vec<f64> = (0..128).map(|t| ((t * 7919) % 31) as f64 - 15.0).collect();
        let a = 2.5;
        let scaled: Vec<f64> = s.iter().map(|v| v * a).collect();
        let m1 = cwt_forward(&s, &bank).unwrap();
        let m2 = cwt_forward(&scaled, &bank).unwrap();
        let max = m2.values.iter().cloned().fold(0.0, f64::max);
        for (x, y) in m1.values.iter().zip(&m2.values) {
            assert!((a * x - y).abs() <= 1e-12 * max);
        }
        assert!(cwt_forward(&s[..100], &bank).is_err());
    }

    #[test]
    fn tone_at_one_and_a_half_hertz_peaks_on_nearest_row() {
        let bank = fb(300);
        let s: Vec<f64> = (0..300).map(|t| (2.0 * PI * 1.5 * t as f64 / 30.0).cos()).collect();
        // time-averaged magnitude via the quadrature oracle on the same grid
        let direct = DirectCwt::new(&bank);
        let mut best = (0, f64::MIN);
        for k in 0..bank.len() {
            let avg = (0..300)
                .step_by(5)
                .map(|tau| direct.magnitude(&s, k, tau).unwrap())
                .sum::<f64>();
            if avg > best.1 {
                best = (k, avg);
            }
        }
        assert_eq!(best.0, bank.nearest_row(1.5));
        let fast = cwt_forward(&s, &bank).unwrap().row_means();
        let fast_best = (0..fast.len()).max_by(|&a, &b| fast[a].total_cmp(&fast[b])).unwrap();
        assert_eq!(fast_best, best.0);
    }

    #[test]
    fn delta_signal_traces_wavelet_envelope() {
        let bank = fb(64);
        let direct = DirectCwt::new(&bank);
        let t0 = 20;
        let mut s = vec![0.0; 64];
        s[t0] = 1.0;
        let map = cwt_forward(&s, &bank).unwrap();
        for k in [0, 40, 100] {
            let psi = direct.wavelet(k);
            for tau in 0..64 {
                let expected = psi[(t0 + 64 - tau) % 64].norm();
                assert!((map.row(k)[tau] - expected).abs() < 1e-12);
            }
        }
        assert_eq!(cwt_direct_oracle(&[0.0; 64], &bank, 3, 5).unwrap(), 0.0);
    }

    #[test]
    fn flat_trace_gives_zero_map() {
        let bank = fb(64);
        let trace = RegionTraceSet::from_fn(2, 64, 30.0, |_, _, _| 0.4).unwrap();
        let map = wavelet_map(&trace, &bank, ColorChannel::Green).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }
}
