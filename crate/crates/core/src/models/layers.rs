//! Stateless building blocks over graph variables.

use crate::error::{Error, Result};
use crate::models::config::HeadConfig;
use crate::task::{Label, Task};
use crate::tensor::{Graph, NormState, Var, NORM_EPS};

/// conv 3×3 → batch norm (learnable scale/shift) → ReLU → 2×2 average pool.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlockVars {
    pub w: Var,
    pub b: Var,
    pub gamma: Var,
    pub beta: Var,
}

pub fn conv_block(g: &mut Graph, x: Var, p: ConvBlockVars, norm: &mut NormState, training: bool) -> Result<Var> {
    let y = g.conv2d(x, p.w, p.b)?;
    let y = g.batch_norm(y, norm, Some((p.gamma, p.beta)), training)?;
    let y = g.relu(y);
    g.avg_pool2(y)
}

/// Global average pooling followed by a linear projection.
pub fn project(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let pooled = g.global_avg_pool(x)?;
    g.linear(pooled, w, b)
}

/// Unrouted encoder: every block, then the projection to the feature width.
pub fn encoder_forward(
    g: &mut Graph,
    x: Var,
    blocks: &[ConvBlockVars],
    norms: &mut [NormState],
    proj: (Var, Var),
    training: bool,
) -> Result<Var> {
    if blocks.len() != norms.len() {
        return Err(Error::Parameter(format!(
            "{} blocks but {} norm states",
            blocks.len(),
            norms.len()
        )));
    }
    let mut h = x;
    for (p, n) in blocks.iter().zip(norms.iter_mut()) {
        h = conv_block(g, h, *p, n, training)?;
    }
    project(g, h, proj.0, proj.1)
}

/// `ReLU(Linear(Concat(F_App, F_rPPG)))`.
pub fn fuse_concat(g: &mut Graph, f_app: Var, f_rppg: Var, w: Var, b: Var) -> Result<Var> {
    let cat = g.concat_cols(&[f_app, f_rppg])?;
    let y = g.linear(cat, w, b)?;
    Ok(g.relu(y))
}

/// `θ·LN(F) + (1−θ)·BN(F)` with affine-free norms.
pub fn weighted_norm(g: &mut Graph, f: Var, theta: f64, state: &mut NormState, training: bool) -> Result<Var> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Parameter(format!("theta {theta} outside [0, 1]")));
    }
    let ln = g.layer_norm(f, NORM_EPS, None)?;
    let bn = g.batch_norm(f, state, None, training)?;
    g.weighted_sum(&[(theta, ln), (1.0 - theta, bn)])
}

/// Blends each modality with [`weighted_norm`], then fuses as in
/// [`fuse_concat`]. `states` holds the appearance then rPPG norm statistics.
#[allow(clippy::too_many_arguments)]
pub fn fuse_weighted_norm(
    g: &mut Graph,
    f_app: Var,
    f_rppg: Var,
    theta: f64,
    states: [&mut NormState; 2],
    w: Var,
    b: Var,
    training: bool,
) -> Result<Var> {
    let [s_app, s_rppg] = states;
    let a = weighted_norm(g, f_app, theta, s_app, training)?;
    let r = weighted_norm(g, f_rppg, theta, s_rppg, training)?;
    fuse_concat(g, a, r, w, b)
}

/// Supervision for one batch in the form the head arrangement needs.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Binary(Vec<f64>),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn new(head: HeadConfig, tasks: &[Task], labels: &[Label]) -> Result<Self> {
        if tasks.len() != labels.len() {
            return Err(Error::dim("targets", &[tasks.len()], &[labels.len()]));
        }
        Ok(match head {
            HeadConfig::Shared3 => Targets::Classes(labels.iter().zip(tasks).map(|(l, &t)| l.class(t)).collect()),
            _ => Targets::Binary(labels.iter().map(|l| l.target()).collect()),
        })
    }
}

/// BCE for binary heads, cross-entropy for the 3-way head.
pub fn head_loss(g: &mut Graph, logits: Var, targets: &Targets) -> Result<Var> {
    match targets {
        Targets::Binary(y) => g.bce_with_logits(logits, y),
        Targets::Classes(c) => g.cross_entropy(logits, c),
    }
}

/// `L_main + α·(L_mst + L_wav)`.
pub fn rppg_overall_loss(g: &mut Graph, main: Var, mst: Var, wav: Var, targets: &Targets, alpha: f64) -> Result<Var> {
    if alpha < 0.0 {
        return Err(Error::Parameter(format!("alpha {alpha} must be non-negative")));
    }
    let l_main = head_loss(g, main, targets)?;
    let l_mst = head_loss(g, mst, targets)?;
    let l_wav = head_loss(g, wav, targets)?;
    g.weighted_sum(&[(1.0, l_main), (alpha, l_mst), (alpha, l_wav)])
}

/// `L_fuse + β·(L_app + L_rppg_overall)`.
pub fn fuse_overall_loss(
    g: &mut Graph,
    fuse: Var,
    app: Var,
    rppg_overall: Var,
    targets: &Targets,
    beta: f64,
) -> Result<Var> {
    if beta < 0.0 {
        return Err(Error::Parameter(format!("beta {beta} must be non-negative")));
    }
    let l_fuse = head_loss(g, fuse, targets)?;
    let l_app = head_loss(g, app, targets)?;
    g.weighted_sum(&[(1.0, l_fuse), (beta, l_app), (beta, rppg_overall)])
}

/// Bonafide probability per row: sigmoid of a binary logit, or the softmax
/// mass of class 0 for a 3-way head.
pub fn bonafide_scores(logits: &[f64], outputs: usize) -> Vec<f64> {
    if outputs == 1 {
        return logits.iter().map(|&z| sigmoid(z)).collect();
    }
    logits
        .chunks_exact(outputs)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            (row[0] - m).exp() / z
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
