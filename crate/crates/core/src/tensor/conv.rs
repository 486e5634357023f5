//! 3×3 "same" convolution and 2×2 average pooling kernels on NCHW buffers.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Valid output range along one axis for kernel offset `k` (0..3) with
/// padding 1: output `o` reads input `o + k - 1`.
#[inline]
fn valid_range(k: usize, len: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { len.saturating_sub(1) } else { len };
    (lo, hi)
}

pub(crate) fn forward(x: &[f64], w: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
    let plane = d.plane();
    let mut out = vec![0.0; d.batch * d.out_ch * plane];
    for n in 0..d.batch {
        for co in 0..d.out_ch {
            let dst = &mut out[(n * d.out_ch + co) * plane..][..plane];
            dst.fill(b[co]);
            for ci in 0..d.in_ch {
                let src = &x[(n * d.in_ch + ci) * plane..][..plane];
                let kernel = &w[(co * d.in_ch + ci) * 9..][..9];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, d.height);
                    for kx in 0..3 {
                        let wv = kernel[ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = valid_range(kx, d.width);
                        for oy in y0..y1 {
                            let iy = oy + ky - 1;
                            let drow = &mut dst[oy * d.width + x0..oy * d.width + x1];
                            let srow = &src[iy * d.width + x0 + kx - 1..][..x1 - x0];
                            for (o, s) in drow.iter_mut().zip(srow) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn backward_input(dy: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let plane = d.plane();
    let mut dx = vec![0.0; d.batch * d.in_ch * plane];
    for n in 0..d.batch {
        for co in 0..d.out_ch {
            let g = &dy[(n * d.out_ch + co) * plane..][..plane];
            for ci in 0..d.in_ch {
                let dst = &mut dx[(n * d.in_ch + ci) * plane..][..plane];
                let kernel = &w[(co * d.in_ch + ci) * 9..][..9];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, d.height);
                    for kx in 0..3 {
                        let wv = kernel[ky * 3 + kx];
                        let (x0, x1) = valid_range(kx, d.width);
                        for oy in y0..y1 {
                            let iy = oy + ky - 1;
                            let grow = &g[oy * d.width + x0..oy * d.width + x1];
                            let drow = &mut dst[iy * d.width + x0 + kx - 1..][..x1 - x0];
                            for (o, s) in drow.iter_mut().zip(grow) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Returns (weight gradient, bias gradient).
pub(crate) fn backward_params(dy: &[f64], x: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let plane = d.plane();
    let mut dw = vec![0.0; d.out_ch * d.in_ch * 9];
    let mut db = vec![0.0; d.out_ch];
    for n in 0..d.batch {
        for co in 0..d.out_ch {
            let g = &dy[(n * d.out_ch + co) * plane..][..plane];
            db[co] += g.iter().sum::<f64>();
            for ci in 0..d.in_ch {
                let src = &x[(n * d.in_ch + ci) * plane..][..plane];
                let kernel_grad = &mut dw[(co * d.in_ch + ci) * 9..][..9];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, d.height);
                    for kx in 0..3 {
                        let (x0, x1) = valid_range(kx, d.width);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy + ky - 1;
                            let grow = &g[oy * d.width + x0..oy * d.width + x1];
                            let srow = &src[iy * d.width + x0 + kx - 1..][..x1 - x0];
                            acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        kernel_grad[ky * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    (dw, db)
}

/// Non-overlapping 2×2 mean; odd trailing rows/columns are dropped.
pub(crate) fn avg_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for oy in 0..oh {
            let r0 = &src[2 * oy * w..][..w];
            let r1 = &src[(2 * oy + 1) * w..][..w];
            for ox in 0..ow {
                dst[oy * ow + ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(dy: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g = &dy[p * oh * ow..][..oh * ow];
        let dst = &mut dx[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let v = 0.25 * g[oy * ow + ox];
                dst[2 * oy * w + 2 * ox] += v;
                dst[2 * oy * w + 2 * ox + 1] += v;
                dst[(2 * oy + 1) * w + 2 * ox] += v;
                dst[(2 * oy + 1) * w + 2 * ox + 1] += v;
            }
        }
    }
    dx
}
