//! Appearance and two-branch physiological encoders, fusion and heads.
//!
//! Each encoder is a stack of conv blocks. The first `n_shared` blocks serve
//! both tasks; later blocks, and the projection after them, exist once per
//! task and each sample is routed through its own task's copy. Parameters
//! live in a flat named store and are bound to graph leaves per step.

mod checkpoint;
mod config;
mod input;
pub mod layers;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ArchitectureConfig, EncoderConfig, Fusion, HeadConfig, Modality, ModelConfig};
pub use layers::{
    bonafide_scores, conv_block, encoder_forward, fuse_concat, fuse_overall_loss, fuse_weighted_norm, head_loss,
    rppg_overall_loss, weighted_norm, ConvBlockVars, Targets,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::task::{Label, Task};
use crate::tensor::{compare_with_finite_differences, GradCheckReport, Graph, NormState, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
    norm: usize,
}

#[derive(Clone, Copy, Debug)]
enum Routed<T> {
    Shared(T),
    PerTask([T; 2]),
}

#[derive(Clone, Debug)]
struct EncoderLayout {
    input: [usize; 3],
    blocks: Vec<Routed<Block>>,
    proj: Routed<Lin>,
}

#[derive(Clone, Debug)]
struct FusionLayout {
    lin: Lin,
    /// Index of the appearance norm state for weighted-norm fusion; the
    /// rPPG state follows it.
    norms: Option<usize>,
}

#[derive(Clone, Debug, Default)]
struct HeadsLayout {
    fuse: Option<Routed<Lin>>,
    app: Option<Routed<Lin>>,
    rppg: Option<Routed<Lin>>,
    mst: Option<Routed<Lin>>,
    wav: Option<Routed<Lin>>,
}

#[derive(Clone, Debug)]
struct Layout {
    app: Option<EncoderLayout>,
    mst: Option<EncoderLayout>,
    wav: Option<EncoderLayout>,
    fusion: Option<FusionLayout>,
    heads: HeadsLayout,
}

enum Init {
    Zeros,
    Ones,
    /// Zero-mean normal with variance `gain / fan_in`.
    Normal {
        fan_in: usize,
        gain: f64,
    },
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor>,
    norm_names: Vec<String>,
    norms: Vec<NormState>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn param(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let mut t = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Ones => t.data_mut().fill(1.0),
            Init::Normal { fan_in, gain } => {
                let sd = (gain / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, sd).expect("finite standard deviation");
                for v in t.data_mut() {
                    *v = dist.sample(&mut self.rng);
                }
            }
        }
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn norm(&mut self, name: String, channels: usize) -> usize {
        self.norm_names.push(name);
        self.norms.push(NormState::new(channels));
        self.norms.len() - 1
    }

    fn lin(&mut self, prefix: &str, inputs: usize, outputs: usize, gain: f64) -> Lin {
        Lin {
            w: self.param(
                format!("{prefix}.w"),
                &[inputs, outputs],
                Init::Normal { fan_in: inputs, gain },
            ),
            b: self.param(format!("{prefix}.b"), &[outputs], Init::Zeros),
        }
    }

    fn block(&mut self, prefix: &str, cin: usize, cout: usize) -> Block {
        Block {
            w: self.param(
                format!("{prefix}.conv.w"),
                &[cout, cin, 3, 3],
                Init::Normal {
                    fan_in: 9 * cin,
                    gain: 2.0,
                },
            ),
            b: self.param(format!("{prefix}.conv.b"), &[cout], Init::Zeros),
            gamma: self.param(format!("{prefix}.bn.gamma"), &[cout], Init::Ones),
            beta: self.param(format!("{prefix}.bn.beta"), &[cout], Init::Zeros),
            norm: self.norm(format!("{prefix}.bn"), cout),
        }
    }

    fn routed<T>(&mut self, prefix: &str, per_task: bool, mut f: impl FnMut(&mut Self, &str) -> T) -> Routed<T> {
        if per_task {
            let a = f(self, &format!("{prefix}.{}", Task::Spoof));
            let b = f(self, &format!("{prefix}.{}", Task::Forgery));
            Routed::PerTask([a, b])
        } else {
            Routed::Shared(f(self, prefix))
        }
    }

    fn encoder(&mut self, name: &str, cfg: &EncoderConfig, n_shared: usize) -> EncoderLayout {
        let mut blocks = Vec::with_capacity(cfg.block_channels.len());
        let mut cin = 3;
        for (i, &cout) in cfg.block_channels.iter().enumerate() {
            let prefix = format!("{name}.block{i}");
            blocks.push(self.routed(&prefix, i >= n_shared, |b, p| b.block(p, cin, cout)));
            cin = cout;
        }
        let specific = n_shared < cfg.block_channels.len();
        let proj = self.routed(&format!("{name}.proj"), specific, |b, p| {
            b.lin(p, cin, cfg.feature_dim, 1.0)
        });
        EncoderLayout {
            input: cfg.input_shape(),
            blocks,
            proj,
        }
    }
}

/// A batch of encoder inputs, each `[B, 3, H, W]`, with per-sample task ids.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub tasks: Vec<Task>,
    pub app: Option<Tensor>,
    pub mst: Option<Tensor>,
    pub wav: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Graph handles produced by one forward pass. Heads absent from the
/// configuration are `None`.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// The head whose output is the model's decision.
    pub primary: Var,
    pub fuse: Option<Var>,
    pub app: Option<Var>,
    pub rppg: Option<Var>,
    pub mst: Option<Var>,
    pub wav: Option<Var>,
    pub f_app: Option<Var>,
    pub f_rppg: Option<Var>,
    pub f_fuse: Option<Var>,
}

/// Loss and parameter gradients from one forward/backward pass.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct JointModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    norm_names: Vec<String>,
    norms: Vec<NormState>,
    layout: Layout,
}

fn task_groups(tasks: &[Task]) -> [Vec<usize>; 2] {
    let mut groups = [Vec::new(), Vec::new()];
    for (i, t) in tasks.iter().enumerate() {
        groups[t.index()].push(i);
    }
    groups
}

/// Applies `f` with the shared parameters, or with each task's own copy on
/// that task's rows.
fn route<T: Copy>(
    g: &mut Graph,
    x: Var,
    groups: &[Vec<usize>; 2],
    r: &Routed<T>,
    mut f: impl FnMut(&mut Graph, Var, T) -> Result<Var>,
) -> Result<Var> {
    match r {
        Routed::Shared(p) => f(g, x, *p),
        Routed::PerTask(ps) => {
            if groups[1].is_empty() {
                return f(g, x, ps[0]);
            }
            if groups[0].is_empty() {
                return f(g, x, ps[1]);
            }
            let mut parts = Vec::with_capacity(2);
            for (rows, p) in groups.iter().zip(ps) {
                let sub = g.select_rows(x, rows)?;
                parts.push((f(g, sub, *p)?, rows.clone()));
            }
            g.merge_rows(&parts)
        }
    }
}

impl JointModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let arch = &config.arch;
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            norm_names: Vec::new(),
            norms: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };
        let fd = config.feature_dim;
        let app = arch
            .uses_appearance()
            .then(|| b.encoder("app", &config.app_encoder(), arch.n_shared));
        let (mst, wav) = if arch.uses_rppg() {
            (
                Some(b.encoder("mst", &config.mst_encoder(), arch.n_shared)),
                Some(b.encoder("wav", &config.wav_encoder(), arch.n_shared)),
            )
        } else {
            (None, None)
        };
        let fusion = (arch.fusion != Fusion::None).then(|| {
            let lin = b.lin("fusion", 3 * fd, fd, 2.0);
            let norms = (arch.fusion == Fusion::WeightedNorm).then(|| {
                let first = b.norm("fusion.bn.app".into(), fd);
                b.norm("fusion.bn.rppg".into(), 2 * fd);
                first
            });
            FusionLayout { lin, norms }
        });
        let per_task = arch.head == HeadConfig::Separate2;
        let k = arch.head.outputs();
        let head = |b: &mut Builder, name: &str, width: usize| {
            Some(b.routed(&format!("head.{name}"), per_task, |b, p| b.lin(p, width, k, 1.0)))
        };
        let mut heads = HeadsLayout::default();
        if fusion.is_some() {
            heads.fuse = head(&mut b, "fuse", fd);
        }
        if app.is_some() {
            heads.app = head(&mut b, "app", fd);
        }
        if mst.is_some() {
            heads.rppg = head(&mut b, "rppg", 2 * fd);
            heads.mst = head(&mut b, "mst", fd);
            heads.wav = head(&mut b, "wav", fd);
        }
        Ok(Self {
            config,
            names: b.names,
            params: b.params,
            norm_names: b.norm_names,
            norms: b.norms,
            layout: Layout {
                app,
                mst,
                wav,
                fusion,
                heads,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    pub fn norm_names(&self) -> &[String] {
        &self.norm_names
    }

    pub fn norms(&self) -> &[NormState] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [NormState] {
        &mut self.norms
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Parameters as gradient-tracking leaves, in store order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone().with_grad())).collect()
    }

    /// Parameters as constants, for inference.
    pub fn bind_constants(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn encode(
        &self,
        g: &mut Graph,
        vars: &[Var],
        norms: &mut [NormState],
        enc: &EncoderLayout,
        input: &Tensor,
        groups: &[Vec<usize>; 2],
        training: bool,
    ) -> Result<Var> {
        let [c, h, w] = enc.input;
        let expected = [groups[0].len() + groups[1].len(), c, h, w];
        if input.shape() != expected {
            return Err(Error::dim("encoder input", input.shape(), &expected));
        }
        let mut x = g.constant(input.clone());
        for block in &enc.blocks {
            x = route(g, x, groups, block, |g, x, p| {
                let v = ConvBlockVars {
                    w: vars[p.w],
                    b: vars[p.b],
                    gamma: vars[p.gamma],
                    beta: vars[p.beta],
                };
                conv_block(g, x, v, &mut norms[p.norm], training)
            })?;
        }
        route(g, x, groups, &enc.proj, |g, x, p| {
            layers::project(g, x, vars[p.w], vars[p.b])
        })
    }

    fn head(
        g: &mut Graph,
        vars: &[Var],
        groups: &[Vec<usize>; 2],
        head: &Option<Routed<Lin>>,
        x: Var,
    ) -> Result<Option<Var>> {
        head.as_ref()
            .map(|h| route(g, x, groups, h, |g, x, p| g.linear(x, vars[p.w], vars[p.b])))
            .transpose()
    }

    /// Runs every configured branch. `vars` must come from [`Self::bind`] or
    /// [`Self::bind_constants`] on the same graph; `norms` has one state per
    /// norm in store order.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        norms: &mut [NormState],
        batch: &Batch,
        training: bool,
    ) -> Result<Outputs> {
        if vars.len() != self.params.len() || norms.len() != self.norm_names.len() {
            return Err(Error::Parameter("variable bindings do not match the model".into()));
        }
        if batch.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        let groups = task_groups(&batch.tasks);
        let missing = |what: &str| Error::Parameter(format!("batch lacks {what} input"));
        let f_app = match &self.layout.app {
            Some(enc) => {
                let input = batch.app.as_ref().ok_or_else(|| missing("appearance"))?;
                Some(self.encode(g, vars, norms, enc, input, &groups, training)?)
            }
            None => None,
        };
        let (f_mst, f_wav) = match (&self.layout.mst, &self.layout.wav) {
            (Some(me), Some(we)) => {
                let mi = batch.mst.as_ref().ok_or_else(|| missing("MSTmap"))?;
                let wi = batch.wav.as_ref().ok_or_else(|| missing("WaveletMap"))?;
                (
                    Some(self.encode(g, vars, norms, me, mi, &groups, training)?),
                    Some(self.encode(g, vars, norms, we, wi, &groups, training)?),
                )
            }
            _ => (None, None),
        };
        let f_rppg = match (f_mst, f_wav) {
            (Some(m), Some(w)) => Some(g.concat_cols(&[m, w])?),
            _ => None,
        };
        let f_fuse = match (&self.layout.fusion, f_app, f_rppg) {
            (Some(fl), Some(a), Some(r)) => {
                let (w, b) = (vars[fl.lin.w], vars[fl.lin.b]);
                Some(match fl.norms {
                    Some(na) => {
                        // the two fusion states are adjacent in the store
                        let (sa, sr) = norms[na..].split_at_mut(1);
                        let theta = self.config.arch.theta;
                        fuse_weighted_norm(g, a, r, theta, [&mut sa[0], &mut sr[0]], w, b, training)?
                    }
                    None => fuse_concat(g, a, r, w, b)?,
                })
            }
            _ => None,
        };
        let hl = &self.layout.heads;
        let fuse = match f_fuse {
            Some(f) => Self::head(g, vars, &groups, &hl.fuse, f)?,
            None => None,
        };
        let app = match f_app {
            Some(f) => Self::head(g, vars, &groups, &hl.app, f)?,
            None => None,
        };
        let (rppg, mst, wav) = match (f_rppg, f_mst, f_wav) {
            (Some(r), Some(m), Some(w)) => (
                Self::head(g, vars, &groups, &hl.rppg, r)?,
                Self::head(g, vars, &groups, &hl.mst, m)?,
                Self::head(g, vars, &groups, &hl.wav, w)?,
            ),
            _ => (None, None, None),
        };
        let primary = fuse
            .or(match self.config.arch.modality {
                Modality::Appearance => app,
                Modality::Rppg => rppg,
            })
            .ok_or_else(|| Error::Parameter("model has no decision head".into()))?;
        Ok(Outputs {
            primary,
            fuse,
            app,
            rppg,
            mst,
            wav,
            f_app,
            f_rppg,
            f_fuse,
        })
    }

    /// The configured overall objective for these outputs.
    pub fn loss(&self, g: &mut Graph, out: &Outputs, targets: &Targets) -> Result<Var> {
        let arch = &self.config.arch;
        let rppg_loss = |g: &mut Graph| -> Result<Var> {
            match (out.rppg, out.mst, out.wav) {
                (Some(r), Some(m), Some(w)) => rppg_overall_loss(g, r, m, w, targets, arch.alpha),
                _ => Err(Error::Parameter("rPPG heads missing".into())),
            }
        };
        match (out.fuse, out.app) {
            (Some(f), Some(a)) => {
                let r = rppg_loss(g)?;
                fuse_overall_loss(g, f, a, r, targets, arch.beta)
            }
            (None, Some(a)) => head_loss(g, a, targets),
            _ => rppg_loss(g),
        }
    }

    /// One forward/backward pass in training mode. Running norm statistics
    /// are updated; parameters are not.
    pub fn gradients(&mut self, batch: &Batch, labels: &[Label]) -> Result<StepGradients> {
        let targets = Targets::new(self.config.arch.head, &batch.tasks, labels)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let mut norms = std::mem::take(&mut self.norms);
        let out = self.forward(&mut g, &vars, &mut norms, batch, true);
        self.norms = norms;
        let out = out?;
        let loss = self.loss(&mut g, &out, &targets)?;
        g.backward(loss)?;
        let value = g.value(loss).item()?;
        let grads = vars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| g.grad(*v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
            .collect();
        Ok(StepGradients { loss: value, grads })
    }

    /// `p ← p − lr·grad` for every parameter.
    pub fn apply_gradients(&mut self, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        crate::trainer::sgd_update(&mut self.params, grads, lr)
    }

    /// Bonafide probabilities in evaluation mode.
    pub fn scores(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.bind_constants(&mut g);
        let mut norms = self.norms.clone();
        let out = self.forward(&mut g, &vars, &mut norms, batch, false)?;
        Ok(bonafide_scores(
            g.value(out.primary).data(),
            self.config.arch.head.outputs(),
        ))
    }

    /// Central-difference check of the training-mode objective gradient.
    pub fn grad_check(&self, batch: &Batch, labels: &[Label], eps: f64) -> Result<GradCheckReport> {
        self.grad_check_with(batch, labels, eps, |_| {})
    }

    /// As [`Self::grad_check`], with `tamper` applied to the analytic
    /// gradient before comparison.
    pub fn grad_check_with(
        &self,
        batch: &Batch,
        labels: &[Label],
        eps: f64,
        tamper: impl FnOnce(&mut [Vec<f64>]),
    ) -> Result<GradCheckReport> {
        let mut probe = self.clone();
        let mut analytic = probe.gradients(batch, labels)?.grads;
        tamper(&mut analytic);
        let targets = Targets::new(self.config.arch.head, &batch.tasks, labels)?;
        compare_with_finite_differences(&self.params, &analytic, eps, |ps| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
            let mut norms = self.norms.clone();
            let out = self.forward(&mut g, &vars, &mut norms, batch, true)?;
            let loss = self.loss(&mut g, &out, &targets)?;
            g.value(loss).item()
        })
    }

    /// Smallest distance of any ReLU input from its kink for this batch in
    /// training mode.
    pub fn relu_margin(&self, batch: &Batch) -> Result<Option<f64>> {
        let mut g = Graph::new();
        let vars = self.bind_constants(&mut g);
        let mut norms = self.norms.clone();
        self.forward(&mut g, &vars, &mut norms, batch, true)?;
        Ok(g.relu_margin())
    }

    pub(crate) fn set_norm(&mut self, index: usize, state: NormState) {
        self.norms[index] = state;
    }
}
