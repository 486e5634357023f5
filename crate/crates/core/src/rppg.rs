//! Per-region color traces, the multi-scale spatio-temporal map (MSTmap)
//! and the global pulse signal.
//!
//! The input boundary is [`RegionTraceSet`]: mean RGB per facial region per
//! frame. Face detection and region geometry happen upstream.

use crate::error::{Error, Result};

/// Largest region count accepted by [`enumerate_subsets`].
pub const MAX_REGIONS: usize = 16;

/// Mean RGB of `regions` facial regions over `frames` frames, stored
/// `[region][frame][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionTraceSet {
    regions: usize,
    frames: usize,
    fps: f64,
    values: Vec<f64>,
}

impl RegionTraceSet {
    pub fn new(regions: usize, frames: usize, fps: f64, values: Vec<f64>) -> Result<Self> {
        if regions == 0 || frames == 0 {
            return Err(Error::Parameter(format!(
                "trace needs at least one region and frame, got {regions}×{frames}"
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Parameter(format!("fps must be positive, got {fps}")));
        }
        if values.len() != regions * frames * 3 {
            return Err(Error::dim("trace", &[regions, frames, 3], &[values.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("trace contains non-finite values".into()));
        }
        Ok(Self {
            regions,
            frames,
            fps,
            values,
        })
    }

    /// Builds a trace from a per-(region, frame, channel) function.
    pub fn from_fn(
        regions: usize,
        frames: usize,
        fps: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(regions * frames * 3);
        for r in 0..regions {
            for t in 0..frames {
                for c in 0..3 {
                    values.push(f(r, t, c));
                }
            }
        }
        Self::new(regions, frames, fps, values)
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, region: usize, frame: usize, channel: usize) -> f64 {
        self.values[(region * self.frames + frame) * 3 + channel]
    }

    /// Returns a copy with region `r` of the result taken from region
    /// `perm[r]` of `self`.
    pub fn permute_regions(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.regions {
            return Err(Error::dim("permute_regions", &[self.regions], &[perm.len()]));
        }
        Self::from_fn(self.regions, self.frames, self.fps, |r, t, c| self.get(perm[r], t, c))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.regions,
            self.frames,
            self.fps,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

/// All non-empty subsets of `0..regions`, ordered by cardinality and then
/// lexicographically by member list.
pub fn enumerate_subsets(regions: usize) -> Result<Vec<Vec<usize>>> {
    if regions == 0 || regions > MAX_REGIONS {
        return Err(Error::Parameter(format!(
            "region count {regions} outside 1..={MAX_REGIONS}"
        )));
    }
    let mut subsets: Vec<Vec<usize>> = (1u32..(1u32 << regions))
        .map(|mask| (0..regions).filter(|&r| mask & (1 << r) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(subsets)
}

/// Keeps the first `frames` frames, or extends a short trace by repeating
/// its final frame.
pub fn pad_or_truncate(trace: &RegionTraceSet, frames: usize) -> Result<RegionTraceSet> {
    if frames == 0 {
        return Err(Error::Parameter("target frame count must be positive".into()));
    }
    let last = trace.frames - 1;
    RegionTraceSet::from_fn(trace.regions, frames, trace.fps, |r, t, c| trace.get(r, t.min(last), c))
}

/// `[rows, frames, 3]` map; row `i` is the mean trace of `subsets[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MstMap {
    pub frames: usize,
    pub subsets: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

impl MstMap {
    pub fn rows(&self) -> usize {
        self.subsets.len()
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.rows(), self.frames, 3]
    }

    #[inline]
    pub fn get(&self, row: usize, frame: usize, channel: usize) -> f64 {
        self.values[(row * self.frames + frame) * 3 + channel]
    }
}

/// Min–max normalizes `x` in place to [0, 1]; a flat signal becomes zeros.
pub(crate) fn min_max_normalize(x: &mut [f64]) {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(lo.abs()).max(1e-300)) {
        x.fill(0.0);
        return;
    }
    for v in x.iter_mut() {
        *v = ((*v - lo) / range).clamp(0.0, 1.0);
    }
}

/// Builds the MSTmap: subset-mean RGB traces over `frames` frames, each
/// (row, channel) signal min–max normalized to [0, 1].
pub fn build_mstmap(trace: &RegionTraceSet, frames: usize) -> Result<MstMap> {
    let trace = pad_or_truncate(trace, frames)?;
    let subsets = enumerate_subsets(trace.regions)?;
    let mut values = vec![0.0; subsets.len() * frames * 3];
    let mut signal = vec![0.0; frames];
    for (row, subset) in subsets.iter().enumerate() {
        let inv = 1.0 / subset.len() as f64;
        for c in 0..3 {
            for (t, s) in signal.iter_mut().enumerate() {
                *s = subset.iter().map(|&r| trace.get(r, t, c)).sum::<f64>() * inv;
            }
            min_max_normalize(&mut signal);
            for (t, s) in signal.iter().enumerate() {
                values[(row * frames + t) * 3 + c] = *s;
            }
        }
    }
    Ok(MstMap {
        frames,
        subsets,
        values,
    })
}

/// Color channel feeding the global pulse signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ColorChannel {
    Red,
    #[default]
    Green,
    Blue,
    /// Average of R, G and B.
    Mean,
}

impl std::str::FromStr for ColorChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "red" => Ok(Self::Red),
            "green" => Ok(Self::Green),
            "blue" => Ok(Self::Blue),
            "mean" => Ok(Self::Mean),
            other => Err(Error::Config(format!("unknown color channel '{other}'"))),
        }
    }
}

impl std::fmt::Display for ColorChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Red => "red",
            Self::Green => "green",
            Self::Blue => "blue",
            Self::Mean => "mean",
        })
    }
}

/// Uniformly sampled scalar signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub fps: f64,
    /// Set when the raw signal had no variance and was replaced by zeros.
    pub degenerate: bool,
}

impl Signal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Region-averaged trace of one color channel, resized to `frames` and
/// standardized to zero mean and unit variance.
pub fn global_signal(trace: &RegionTraceSet, frames: usize, channel: ColorChannel) -> Result<Signal> {
    if frames < 2 {
        return Err(Error::Parameter(format!(
            "signal needs at least 2 frames, got {frames}"
        )));
    }
    let trace = pad_or_truncate(trace, frames)?;
    let k = trace.regions as f64;
    let pick = |r: usize, t: usize| match channel {
        ColorChannel::Red => trace.get(r, t, 0),
        ColorChannel::Green => trace.get(r, t, 1),
        ColorChannel::Blue => trace.get(r, t, 2),
        ColorChannel::Mean => (trace.get(r, t, 0) + trace.get(r, t, 1) + trace.get(r, t, 2)) / 3.0,
    };
    let mut samples: Vec<f64> = (0..frames)
        .map(|t| (0..trace.regions).map(|r| pick(r, t)).sum::<f64>() / k)
        .collect();
    let n = frames as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let floor = 1e-12 * mean.abs().max(1.0);
    if !(var.sqrt() > floor) {
        return Ok(Signal {
            samples: vec![0.0; frames],
            fps: trace.fps,
            degenerate: true,
        });
    }
    let inv = 1.0 / var.sqrt();
    samples.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    Ok(Signal {
        samples,
        fps: trace.fps,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_from(regions: usize, frames: usize, f: impl Fn(usize, usize, usize) -> f64) -> RegionTraceSet {
        RegionTraceSet::from_fn(regions, frames, 30.0, f).unwrap()
    }

    #[test]
    fn subsets_small_cases() {
        assert_eq!(enumerate_subsets(1).unwrap(), vec![vec![0]]);
        assert_eq!(enumerate_subsets(2).unwrap(), vec![vec![0], vec![1], vec![0, 1]]);
        assert_eq!(enumerate_subsets(6).unwrap().len(), 63);
        let three = enumerate_subsets(3).unwrap();
        assert_eq!(
            three,
            vec![
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2],
                vec![0, 1, 2]
            ]
        );
    }

    #[test]
    fn subsets_reject_bad_counts() {
        assert!(enumerate_subsets(0).is_err());
        assert!(enumerate_subsets(17).is_err());
        assert_eq!(enumerate_subsets(16).unwrap().len(), 65535);
    }

    #[test]
    fn trace_validation() {
        assert!(RegionTraceSet::new(0, 5, 30.0, vec![]).is_err());
        assert!(RegionTraceSet::new(1, 1, 0.0, vec![0.0; 3]).is_err());
        assert!(RegionTraceSet::new(1, 2, 30.0, vec![0.0; 5]).is_err());
        assert!(RegionTraceSet::new(1, 1, 30.0, vec![f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn padding_and_truncation() {
        let f = |r: usize, t: usize, c: usize| (r * 1000 + t * 3 + c) as f64;
        let exact = trace_from(2, 300, f);
        assert_eq!(pad_or_truncate(&exact, 300).unwrap(), exact);

        let long = trace_from(2, 350, f);
        let cut = pad_or_truncate(&long, 300).unwrap();
        assert_eq!(cut.frames(), 300);
        assert_eq!(cut.get(1, 299, 2), long.get(1, 299, 2));

        let short = trace_from(2, 290, f);
        let padded = pad_or_truncate(&short, 300).unwrap();
        for t in 290..300 {
            for r in 0..2 {
                for c in 0..3 {
                    assert_eq!(padded.get(r, t, c), short.get(r, 289, c));
                }
            }
        }
        assert_eq!(padded.get(0, 100, 1), short.get(0, 100, 1));
    }

    #[test]
    fn constant_single_region_map_is_zero() {
        let map = build_mstmap(&trace_from(1, 50, |_, _, _| 7.0), 50).unwrap();
        assert_eq!(map.shape(), [1, 50, 3]);
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pair_row_is_mean_of_regions() {
        let a = |t: usize| (t as f64 * 0.3).sin();
        let b = |t: usize| (t as f64 * 0.11).cos() * 2.0 + 0.1 * t as f64;
        let trace = trace_from(2, 64, |r, t, _| if r == 0 { a(t) } else { b(t) });
        let map = build_mstmap(&trace, 64).unwrap();
        assert_eq!(map.subsets[2], vec![0, 1]);
        let mut expected: Vec<f64> = (0..64).map(|t| (a(t) + b(t)) / 2.0).collect();
        min_max_normalize(&mut expected);
        for t in 0..64 {
            assert!((map.get(2, t, 1) - expected[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn six_regions_three_hundred_frames_shape() {
        let trace = trace_from(6, 280, |r, t, c| ((r + 1) * (t + 1) * (c + 2)) as f64 % 17.0);
        let map = build_mstmap(&trace, 300).unwrap();
        assert_eq!(map.shape(), [63, 300, 3]);
        assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn global_signal_is_standardized_mean_of_green() {
        let g0 = |t: usize| (t as f64 * 0.2).sin();
        let g1 = |t: usize| (t as f64 * 0.05).cos();
        let trace = trace_from(2, 100, |r, t, c| match (r, c) {
            (0, 1) => g0(t),
            (1, 1) => g1(t),
            _ => 100.0 + t as f64,
        });
        let s = global_signal(&trace, 100, ColorChannel::Green).unwrap();
        assert!(!s.degenerate);
        let raw: Vec<f64> = (0..100).map(|t| (g0(t) + g1(t)) / 2.0).collect();
        let mean = raw.iter().sum::<f64>() / 100.0;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
        for t in 0..100 {
            assert!((s.samples[t] - (raw[t] - mean) / sd).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_is_degenerate() {
        let s = global_signal(&trace_from(3, 40, |_, _, _| 0.7), 40, ColorChannel::Green).unwrap();
        assert!(s.degenerate);
        assert!(s.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hertz_cosine_dominates_spectrum() {
        let trace = trace_from(4, 300, |r, t, _| {
            (2.0 * std::f64::consts::PI * t as f64 / 30.0 + r as f64 * 0.2).cos()
        });
        let s = global_signal(&trace, 300, ColorChannel::Green).unwrap();
        // direct DFT magnitude per bin
        let n = s.len();
        let mag = |k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in s.samples.iter().enumerate() {
                let ph = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            (re * re + im * im).sqrt()
        };
        let best = (1..n / 2).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap();
        assert!((best as f64 * 30.0 / n as f64 - 1.0).abs() < 1e-12);
    }
}
