/// Variance floor shared by batch and layer normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Fraction of the previous running statistic kept on each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Running statistics of one batch-normalization site.
///
/// Learnable scale/shift are ordinary parameters passed to
/// [`Graph::batch_norm`](super::Graph::batch_norm); without them the
/// normalization is affine-free (scale 1, shift 0).
#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl NormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: NORM_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub(crate) fn update(&mut self, mean: &[f64], unbiased_var: &[f64]) {
        let m = self.momentum;
        for (r, v) in self.running_mean.iter_mut().zip(mean) {
            *r = m * *r + (1.0 - m) * v;
        }
        for (r, v) in self.running_var.iter_mut().zip(unbiased_var) {
            *r = (m * *r + (1.0 - m) * v).max(0.0);
        }
    }
}

/// Channel statistics for an `[outer, channels, inner]` layout: one mean and
/// biased variance per channel over `outer × inner` values.
pub(crate) fn channel_moments(x: &[f64], outer: usize, channels: usize, inner: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (outer * inner) as f64;
    let mut mean = vec![0.0; channels];
    for o in 0..outer {
        for c in 0..channels {
            let s: f64 = x[(o * channels + c) * inner..][..inner].iter().sum();
            mean[c] += s;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; channels];
    for o in 0..outer {
        for c in 0..channels {
            let mu = mean[c];
            let s: f64 = x[(o * channels + c) * inner..][..inner]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum();
            var[c] += s;
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Standardizes each channel with the given statistics.
pub(crate) fn standardize_channels(
    x: &[f64],
    outer: usize,
    channels: usize,
    inner: usize,
    mean: &[f64],
    inv_std: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for c in 0..channels {
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                out[i] = (x[i] - mean[c]) * inv_std[c];
            }
        }
    }
    out
}

/// Gradient of batch-statistics standardization with respect to its input,
/// given the upstream gradient on the standardized values.
pub(crate) fn channel_standardize_backward(
    dxhat: &[f64],
    xhat: &[f64],
    outer: usize,
    channels: usize,
    inner: usize,
    inv_std: &[f64],
) -> Vec<f64> {
    let count = (outer * inner) as f64;
    let mut sum_d = vec![0.0; channels];
    let mut sum_dx = vec![0.0; channels];
    for o in 0..outer {
        for c in 0..channels {
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                sum_d[c] += dxhat[i];
                sum_dx[c] += dxhat[i] * xhat[i];
            }
        }
    }
    let mut dx = vec![0.0; dxhat.len()];
    for o in 0..outer {
        for c in 0..channels {
            let base = (o * channels + c) * inner;
            let k = inv_std[c] / count;
            for i in base..base + inner {
                dx[i] = k * (count * dxhat[i] - sum_d[c] - xhat[i] * sum_dx[c]);
            }
        }
    }
    dx
}

/// Per-row standardization of a `[rows, cols]` buffer. Returns the
/// standardized values and each row's inverse standard deviation.
pub(crate) fn row_standardize(x: &[f64], rows: usize, cols: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..][..cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for (o, v) in out[r * cols..][..cols].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    (out, inv_std)
}

pub(crate) fn row_standardize_backward(
    dxhat: &[f64],
    xhat: &[f64],
    rows: usize,
    cols: usize,
    inv_std: &[f64],
) -> Vec<f64> {
    let n = cols as f64;
    let mut dx = vec![0.0; dxhat.len()];
    for r in 0..rows {
        let d = &dxhat[r * cols..][..cols];
        let h = &xhat[r * cols..][..cols];
        let sum_d: f64 = d.iter().sum();
        let sum_dh: f64 = d.iter().zip(h).map(|(a, b)| a * b).sum();
        let k = inv_std[r] / n;
        for ((o, dv), hv) in dx[r * cols..][..cols].iter_mut().zip(d).zip(h) {
            *o = k * (n * dv - sum_d - hv * sum_dh);
        }
    }
    dx
}
