use super::conv::{self, ConvDims};
use super::norm::{self, NormState};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
        batch: usize,
        inp: usize,
        out: usize,
    },
    ConcatCols {
        parts: Vec<(Var, usize)>,
        rows: usize,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
        width: usize,
    },
    MergeRows {
        parts: Vec<(Var, Vec<usize>)>,
        width: usize,
    },
    Bce {
        logit: Var,
        targets: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        classes: Vec<usize>,
        num_classes: usize,
    },
    BatchNorm {
        x: Var,
        affine: Option<(Var, Var)>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        layout: [usize; 3],
        training: bool,
    },
    LayerNorm {
        x: Var,
        affine: Option<(Var, Var)>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        rows: usize,
        cols: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    AvgPool2 {
        x: Var,
        planes: usize,
        height: usize,
        width: usize,
    },
    GlobalAvgPool {
        x: Var,
        plane: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of executed operations. Nodes are appended in execution order, which
/// is a valid topological order for the reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad;
        tensor.grad = None;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Smallest `|x|` over the inputs of every ReLU on the tape, or `None`
    /// if there is no ReLU. Central differences with step `ε` are only
    /// trustworthy when this exceeds the perturbation `ε` induces.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.nodes[a.0].value.data()),
                _ => None,
            })
            .flat_map(|d| d.iter().map(|v| v.abs()))
            .reduce(f64::min)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(a, factor), &[a])
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Weighted sum of scalars, `Σ wᵢ·vᵢ`.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            let scaled = self.scale(v, w);
            acc = Some(match acc {
                Some(a) => self.add(a, scaled)?,
                None => scaled,
            });
        }
        acc.ok_or_else(|| Error::Parameter("empty weighted sum".into()))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone();
        let mut t = t.reshape(shape)?;
        t.grad = None;
        t.requires_grad = false;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// `y[b,o] = Σ_i x[b,i]·w[i,o] + bias[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.rank() != 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[0] {
            return Err(Error::dim("linear", tx.shape(), tw.shape()));
        }
        let (batch, inp, out) = (tx.shape()[0], tw.shape()[0], tw.shape()[1]);
        if tb.shape() != [out] {
            return Err(Error::dim("linear bias", tb.shape(), &[out]));
        }
        let mut y = vec![0.0; batch * out];
        for r in 0..batch {
            let row = &mut y[r * out..][..out];
            row.copy_from_slice(tb.data());
            for i in 0..inp {
                let xv = tx.data()[r * inp + i];
                if xv == 0.0 {
                    continue;
                }
                for (o, wv) in row.iter_mut().zip(&tw.data()[i * out..][..out]) {
                    *o += xv * wv;
                }
            }
        }
        let t = Tensor::new(vec![batch, out], y)?;
        Ok(self.push(
            t,
            Op::Linear {
                x,
                w,
                b,
                batch,
                inp,
                out,
            },
            &[x, w, b],
        ))
    }

    /// Concatenates `[B, wᵢ]` tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.shape(p)[0],
            None => return Err(Error::Parameter("concat of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim("concat", self.shape(parts[0]), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..][..w]);
            }
        }
        let t = Tensor::new(vec![rows, total], data)?;
        let op = Op::ConcatCols {
            parts: parts.iter().copied().zip(widths).collect(),
            rows,
        };
        Ok(self.push(t, op, parts))
    }

    /// Gathers leading-axis slices `x[rows[k], ...]`.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let n = *tx.shape().first().ok_or_else(|| Error::Rank(vec![]))?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dim("select_rows", tx.shape(), &[bad]));
        }
        let width = tx.numel().checked_div(n).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&tx.data()[r * width..][..width]);
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = rows.len();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(
            t,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
                width,
            },
            &[x],
        ))
    }

    /// Inverse of a partition by [`Graph::select_rows`]: row `k` of part `p`
    /// lands at `parts[p].1[k]`. The destinations must cover `0..total`
    /// exactly once.
    pub fn merge_rows(&mut self, parts: &[(Var, Vec<usize>)]) -> Result<Var> {
        let total: usize = parts.iter().map(|(_, r)| r.len()).sum();
        let first = parts
            .iter()
            .find(|(_, r)| !r.is_empty())
            .ok_or_else(|| Error::Parameter("merge of nothing".into()))?;
        let tail: Vec<usize> = self.shape(first.0)[1..].to_vec();
        let width: usize = tail.iter().product();
        let mut seen = vec![false; total];
        let mut data = vec![0.0; total * width];
        for (v, rows) in parts {
            let t = self.value(*v);
            if t.shape().len() != tail.len() + 1 || t.shape()[1..] != tail[..] || t.shape()[0] != rows.len() {
                return Err(Error::dim("merge_rows", t.shape(), &tail));
            }
            for (k, &r) in rows.iter().enumerate() {
                if r >= total || seen[r] {
                    return Err(Error::Parameter(format!("merge_rows: bad destination {r}")));
                }
                seen[r] = true;
                data[r * width..][..width].copy_from_slice(&t.data()[k * width..][..width]);
            }
        }
        let mut shape = vec![total];
        shape.extend_from_slice(&tail);
        let t = Tensor::new(shape, data)?;
        let inputs: Vec<Var> = parts.iter().map(|(v, _)| *v).collect();
        Ok(self.push(
            t,
            Op::MergeRows {
                parts: parts.to_vec(),
                width,
            },
            &inputs,
        ))
    }

    /// Mean binary cross-entropy from logits in the overflow-free form
    /// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logit: Var, targets: &[f64]) -> Result<Var> {
        let tz = self.value(logit);
        if tz.numel() != targets.len() || targets.is_empty() {
            return Err(Error::dim("bce", tz.shape(), &[targets.len()]));
        }
        if let Some(bad) = targets.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Parameter(format!("bce target {bad} is not 0 or 1")));
        }
        let n = targets.len() as f64;
        let loss: f64 = tz
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logit,
                targets: targets.to_vec(),
            },
            &[logit],
        ))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != classes.len() || classes.is_empty() {
            return Err(Error::dim("cross_entropy", t.shape(), &[classes.len()]));
        }
        let c = t.shape()[1];
        if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
            return Err(Error::ClassIndex { index: bad, classes: c });
        }
        let mut probs = vec![0.0; t.numel()];
        let mut loss = 0.0;
        for (r, &k) in classes.iter().enumerate() {
            let row = &t.data()[r * c..][..c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let log_z = z.ln() + m;
            loss += log_z - row[k];
            for (p, v) in probs[r * c..][..c].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        loss /= classes.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                classes: classes.to_vec(),
                num_classes: c,
            },
            &[logits],
        ))
    }

    /// Batch normalization over the channel axis (axis 1) of a `[B, C]` or
    /// `[B, C, H, W]` tensor. Training mode uses batch statistics and updates
    /// `state`; evaluation mode uses the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        state: &mut NormState,
        affine: Option<(Var, Var)>,
        training: bool,
    ) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if !(s.len() == 2 || s.len() == 4) || s[1] != state.channels() {
            return Err(Error::dim("batch_norm", s, &[state.channels()]));
        }
        let (outer, channels) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let count = outer * inner;
        let (mean, inv_std) = if training {
            if count < 2 {
                return Err(Error::DegenerateBatch(count));
            }
            let (mean, var) = norm::channel_moments(tx.data(), outer, channels, inner);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
            let unbiased: Vec<f64> = var.iter().map(|v| v * count as f64 / (count - 1) as f64).collect();
            state.update(&mean, &unbiased);
            (mean, inv_std)
        } else {
            let inv_std = state.running_var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
            (state.running_mean.clone(), inv_std)
        };
        let xhat = norm::standardize_channels(tx.data(), outer, channels, inner, &mean, &inv_std);
        let mut y = xhat.clone();
        let mut inputs = vec![x];
        if let Some((scale, shift)) = affine {
            let (ts, tb) = (self.value(scale), self.value(shift));
            if ts.shape() != [channels] || tb.shape() != [channels] {
                return Err(Error::dim("batch_norm affine", ts.shape(), &[channels]));
            }
            for o in 0..outer {
                for c in 0..channels {
                    let (g, b) = (ts.data()[c], tb.data()[c]);
                    for v in &mut y[(o * channels + c) * inner..][..inner] {
                        *v = *v * g + b;
                    }
                }
            }
            inputs.extend([scale, shift]);
        }
        let t = Tensor::new(s.to_vec(), y)?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                affine,
                xhat,
                inv_std,
                layout: [outer, channels, inner],
                training,
            },
            &inputs,
        ))
    }

    /// Layer normalization of each row of a `[B, C]` tensor.
    pub fn layer_norm(&mut self, x: Var, eps: f64, affine: Option<(Var, Var)>) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || tx.shape()[1] == 0 {
            return Err(Error::dim("layer_norm", tx.shape(), &[]));
        }
        let (rows, cols) = (tx.shape()[0], tx.shape()[1]);
        let (xhat, inv_std) = norm::row_standardize(tx.data(), rows, cols, eps);
        let mut y = xhat.clone();
        let mut inputs = vec![x];
        if let Some((scale, shift)) = affine {
            let (ts, tb) = (self.value(scale), self.value(shift));
            if ts.shape() != [cols] || tb.shape() != [cols] {
                return Err(Error::dim("layer_norm affine", ts.shape(), &[cols]));
            }
            for r in 0..rows {
                for c in 0..cols {
                    let v = &mut y[r * cols + c];
                    *v = *v * ts.data()[c] + tb.data()[c];
                }
            }
            inputs.extend([scale, shift]);
        }
        let t = Tensor::new(vec![rows, cols], y)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                affine,
                xhat,
                inv_std,
                rows,
                cols,
            },
            &inputs,
        ))
    }

    /// 3×3 convolution, stride 1, zero padding 1. `x: [B, Ci, H, W]`,
    /// `w: [Co, Ci, 3, 3]`, `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != 3 || sw[3] != 3 {
            return Err(Error::dim("conv2d", sx, sw));
        }
        if tb.shape() != [sw[0]] {
            return Err(Error::dim("conv2d bias", tb.shape(), &[sw[0]]));
        }
        let dims = ConvDims {
            batch: sx[0],
            in_ch: sx[1],
            out_ch: sw[0],
            height: sx[2],
            width: sx[3],
        };
        let y = conv::forward(tx.data(), tw.data(), tb.data(), dims);
        let t = Tensor::new(vec![dims.batch, dims.out_ch, dims.height, dims.width], y)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, dims }, &[x, w, b]))
    }

    /// Non-overlapping 2×2 average pooling over the last two axes.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::dim("avg_pool2", s, &[2, 2]));
        }
        let (planes, height, width) = (s[0] * s[1], s[2], s[3]);
        let y = conv::avg_pool2(tx.data(), planes, height, width);
        let t = Tensor::new(vec![s[0], s[1], height / 2, width / 2], y)?;
        Ok(self.push(
            t,
            Op::AvgPool2 {
                x,
                planes,
                height,
                width,
            },
            &[x],
        ))
    }

    /// `[B, C, H, W] → [B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 4 {
            return Err(Error::dim("global_avg_pool", s, &[]));
        }
        let plane = s[2] * s[3];
        let y: Vec<f64> = tx
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let t = Tensor::new(vec![s[0], s[1]], y)?;
        Ok(self.push(t, Op::GlobalAvgPool { x, plane }, &[x]))
    }

    /// Reverse sweep from a one-element `loss`. Leaf gradients accumulate
    /// (`+=`) across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Rank(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        add_into(&mut grads[v.0], g.to_vec());
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    add_into(&mut grads[a.0], d);
                }
                if self.wants(*b) {
                    let d = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    add_into(&mut grads[b.0], d);
                }
            }
            Op::Scale(a, f) => {
                add_into(&mut grads[a.0], g.iter().map(|v| v * f).collect());
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                add_into(&mut grads[a.0], vec![g[0]; n]);
            }
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(&mut grads[a.0], d);
            }
            Op::Reshape(a) => add_into(&mut grads[a.0], g.to_vec()),
            Op::Linear {
                x,
                w,
                b,
                batch,
                inp,
                out,
            } => {
                let (batch, inp, out) = (*batch, *inp, *out);
                if self.wants(*x) {
                    let wd = val(*w);
                    let mut dx = vec![0.0; batch * inp];
                    for r in 0..batch {
                        let gr = &g[r * out..][..out];
                        for i in 0..inp {
                            dx[r * inp + i] = gr.iter().zip(&wd[i * out..][..out]).map(|(a, b)| a * b).sum();
                        }
                    }
                    add_into(&mut grads[x.0], dx);
                }
                if self.wants(*w) {
                    let xd = val(*x);
                    let mut dw = vec![0.0; inp * out];
                    for r in 0..batch {
                        let gr = &g[r * out..][..out];
                        for i in 0..inp {
                            let xv = xd[r * inp + i];
                            for (d, gv) in dw[i * out..][..out].iter_mut().zip(gr) {
                                *d += xv * gv;
                            }
                        }
                    }
                    add_into(&mut grads[w.0], dw);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; out];
                    for r in 0..batch {
                        for (d, gv) in db.iter_mut().zip(&g[r * out..][..out]) {
                            *d += gv;
                        }
                    }
                    add_into(&mut grads[b.0], db);
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, width) in parts {
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(rows * width);
                        for r in 0..*rows {
                            d.extend_from_slice(&g[r * total + offset..][..width]);
                        }
                        add_into(&mut grads[p.0], d);
                    }
                    offset += width;
                }
            }
            Op::SelectRows { x, rows, width } => {
                let mut d = vec![0.0; self.nodes[x.0].value.numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for (a, b) in d[r * width..][..*width].iter_mut().zip(&g[k * width..][..*width]) {
                        *a += b;
                    }
                }
                add_into(&mut grads[x.0], d);
            }
            Op::MergeRows { parts, width } => {
                for (p, rows) in parts {
                    if !self.wants(*p) {
                        continue;
                    }
                    let mut d = Vec::with_capacity(rows.len() * width);
                    for &r in rows {
                        d.extend_from_slice(&g[r * width..][..*width]);
                    }
                    add_into(&mut grads[p.0], d);
                }
            }
            Op::Bce { logit, targets } => {
                let n = targets.len() as f64;
                let d = val(*logit)
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n)
                    .collect();
                add_into(&mut grads[logit.0], d);
            }
            Op::CrossEntropy {
                logits,
                probs,
                classes,
                num_classes,
            } => {
                let n = classes.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| g[0] * p / n).collect();
                for (r, &k) in classes.iter().enumerate() {
                    d[r * num_classes + k] -= g[0] / n;
                }
                add_into(&mut grads[logits.0], d);
            }
            Op::BatchNorm {
                x,
                affine,
                xhat,
                inv_std,
                layout,
                training,
            } => {
                let [outer, channels, inner] = *layout;
                let mut dxhat = g.to_vec();
                if let Some((scale, shift)) = affine {
                    let sd = val(*scale);
                    let mut dscale = vec![0.0; channels];
                    let mut dshift = vec![0.0; channels];
                    for o in 0..outer {
                        for c in 0..channels {
                            let base = (o * channels + c) * inner;
                            for k in base..base + inner {
                                dscale[c] += g[k] * xhat[k];
                                dshift[c] += g[k];
                                dxhat[k] = g[k] * sd[c];
                            }
                        }
                    }
                    if self.wants(*scale) {
                        add_into(&mut grads[scale.0], dscale);
                    }
                    if self.wants(*shift) {
                        add_into(&mut grads[shift.0], dshift);
                    }
                }
                if self.wants(*x) {
                    let dx = if *training {
                        norm::channel_standardize_backward(&dxhat, xhat, outer, channels, inner, inv_std)
                    } else {
                        let mut dx = dxhat;
                        for o in 0..outer {
                            for c in 0..channels {
                                for v in &mut dx[(o * channels + c) * inner..][..inner] {
                                    *v *= inv_std[c];
                                }
                            }
                        }
                        dx
                    };
                    add_into(&mut grads[x.0], dx);
                }
            }
            Op::LayerNorm {
                x,
                affine,
                xhat,
                inv_std,
                rows,
                cols,
            } => {
                let (rows, cols) = (*rows, *cols);
                let mut dxhat = g.to_vec();
                if let Some((scale, shift)) = affine {
                    let sd = val(*scale);
                    let mut dscale = vec![0.0; cols];
                    let mut dshift = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let k = r * cols + c;
                            dscale[c] += g[k] * xhat[k];
                            dshift[c] += g[k];
                            dxhat[k] = g[k] * sd[c];
                        }
                    }
                    if self.wants(*scale) {
                        add_into(&mut grads[scale.0], dscale);
                    }
                    if self.wants(*shift) {
                        add_into(&mut grads[shift.0], dshift);
                    }
                }
                if self.wants(*x) {
                    let dx = norm::row_standardize_backward(&dxhat, xhat, rows, cols, inv_std);
                    add_into(&mut grads[x.0], dx);
                }
            }
            Op::Conv2d { x, w, b, dims } => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], conv::backward_input(g, val(*w), *dims));
                }
                if self.wants(*w) || self.wants(*b) {
                    let (dw, db) = conv::backward_params(g, val(*x), *dims);
                    if self.wants(*w) {
                        add_into(&mut grads[w.0], dw);
                    }
                    if self.wants(*b) {
                        add_into(&mut grads[b.0], db);
                    }
                }
            }
            Op::AvgPool2 {
                x,
                planes,
                height,
                width,
            } => {
                add_into(&mut grads[x.0], conv::avg_pool2_backward(g, *planes, *height, *width));
            }
            Op::GlobalAvgPool { x, plane } => {
                let mut d = Vec::with_capacity(g.len() * plane);
                for gv in g {
                    d.extend(std::iter::repeat_n(gv / *plane as f64, *plane));
                }
                add_into(&mut grads[x.0], d);
            }
        }
    }
}
