//! SGD training with multi-task batch schedules.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_batch, prepare_all, PreparedSample};
use crate::error::{Error, Result};
use crate::models::{save_checkpoint, JointModel, ModelConfig};
use crate::record::{Record, RecordWriter};
use crate::synthbench::SampleRecord;
use crate::task::{Label, Task};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Strategy {
    #[default]
    Random,
    Simultaneous,
    Alternating,
    TaskByTask,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::Simultaneous,
        Strategy::Alternating,
        Strategy::TaskByTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Simultaneous => "simultaneous",
            Strategy::Alternating => "alternating",
            Strategy::TaskByTask => "task_by_task",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampling strategy '{s}'")))
    }
}

/// Which samples of the non-primary task join the training pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ExtraDataFilter {
    #[default]
    Both,
    BonafideOnly,
    AttackOnly,
}

impl ExtraDataFilter {
    pub const ALL: [ExtraDataFilter; 3] = [
        ExtraDataFilter::Both,
        ExtraDataFilter::BonafideOnly,
        ExtraDataFilter::AttackOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExtraDataFilter::Both => "both",
            ExtraDataFilter::BonafideOnly => "bonafide_only",
            ExtraDataFilter::AttackOnly => "attack_only",
        }
    }

    pub fn admits(self, label: Label) -> bool {
        match self {
            ExtraDataFilter::Both => true,
            ExtraDataFilter::BonafideOnly => label == Label::Bonafide,
            ExtraDataFilter::AttackOnly => label == Label::Attack,
        }
    }
}

impl fmt::Display for ExtraDataFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExtraDataFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExtraDataFilter::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown extra-data filter '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleSpec {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub seed: u64,
    pub extra_data_filter: ExtraDataFilter,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::Random,
            batch_size: 64,
            seed: 0,
            extra_data_filter: ExtraDataFilter::Both,
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size {} below 2", self.batch_size)));
        }
        if self.strategy == Strategy::Simultaneous && !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "simultaneous sampling needs an even batch size, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Position of a sample within its task's pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub task: Task,
    pub index: usize,
}

/// One minibatch descriptor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub samples: Vec<SampleRef>,
}

impl BatchPlan {
    /// `(spoof, forgery)` sample counts.
    pub fn mix(&self) -> (usize, usize) {
        let s = self.samples.iter().filter(|r| r.task == Task::Spoof).count();
        (s, self.samples.len() - s)
    }
}

/// SGD steps in one single-task epoch: `ceil(n / batch)`.
pub fn steps_for(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Stable 64-bit mixing of a seed with context words.
pub(crate) fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    let mut z = seed;
    for w in words {
        z ^= w
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(z << 6)
            .wrapping_add(z >> 2);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Endless sequence of shuffled passes over one task pool.
struct Stream {
    task: Task,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Stream {
    fn new(task: Task, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            task,
            order,
            pos: 0,
            rng,
        }
    }

    fn take(&mut self, k: usize) -> Vec<SampleRef> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(SampleRef {
                task: self.task,
                index: self.order[self.pos],
            });
            self.pos += 1;
        }
        out
    }
}

/// Batch descriptors for one epoch (1-based) over task pools of sizes
/// `n_spoof` and `n_forgery`. Deterministic in `(spec.seed, epoch)`.
pub fn make_schedule(spec: &ScheduleSpec, n_spoof: usize, n_forgery: usize, epoch: usize) -> Result<Vec<BatchPlan>> {
    spec.validate()?;
    let b = spec.batch_size;
    let total = n_spoof + n_forgery;
    let stream = |task: Task, n: usize| {
        Stream::new(
            task,
            n,
            derive_seed(spec.seed, &[epoch as u64, 1 + task.index() as u64]),
        )
    };
    let require_both = || {
        if n_spoof == 0 || n_forgery == 0 {
            Err(Error::Schedule(format!(
                "{} sampling needs both tasks (spoof {n_spoof}, forgery {n_forgery})",
                spec.strategy
            )))
        } else {
            Ok(())
        }
    };
    match spec.strategy {
        Strategy::Random => {
            if total < 2 {
                return Err(Error::Schedule(format!("{total} training samples; need at least 2")));
            }
            let mut pool: Vec<SampleRef> = (0..n_spoof)
                .map(|index| SampleRef {
                    task: Task::Spoof,
                    index,
                })
                .chain((0..n_forgery).map(|index| SampleRef {
                    task: Task::Forgery,
                    index,
                }))
                .collect();
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                &[epoch as u64, 0],
            )));
            let mut plans: Vec<BatchPlan> = pool.chunks(b).map(|c| BatchPlan { samples: c.to_vec() }).collect();
            // A single trailing sample cannot form batch statistics.
            if plans.len() > 1 && plans.last().is_some_and(|p| p.samples.len() == 1) {
                let last = plans.pop().expect("non-empty");
                plans.last_mut().expect("non-empty").samples.extend(last.samples);
            }
            Ok(plans)
        }
        Strategy::Simultaneous => {
            require_both()?;
            let (mut s, mut f) = (stream(Task::Spoof, n_spoof), stream(Task::Forgery, n_forgery));
            Ok((0..steps_for(total, b))
                .map(|_| {
                    let mut samples = s.take(b / 2);
                    samples.extend(f.take(b / 2));
                    BatchPlan { samples }
                })
                .collect())
        }
        Strategy::Alternating => {
            require_both()?;
            let (mut s, mut f) = (stream(Task::Spoof, n_spoof), stream(Task::Forgery, n_forgery));
            let steps = steps_for(n_spoof, b) + steps_for(n_forgery, b);
            Ok((0..steps)
                .map(|i| BatchPlan {
                    samples: if i % 2 == 0 { s.take(b) } else { f.take(b) },
                })
                .collect())
        }
        Strategy::TaskByTask => {
            if total == 0 {
                return Err(Error::Schedule("no training samples".into()));
            }
            let mut plans = Vec::new();
            for (task, n) in [(Task::Spoof, n_spoof), (Task::Forgery, n_forgery)] {
                let mut st = stream(task, n);
                for _ in 0..steps_for(n, b) {
                    plans.push(BatchPlan { samples: st.take(b) });
                }
            }
            Ok(plans)
        }
    }
}

/// The primary task's samples plus the admitted samples of the other task.
pub fn apply_extra_data_filter<'a>(
    own: &'a [SampleRecord],
    other: &'a [SampleRecord],
    filter: ExtraDataFilter,
) -> Vec<&'a SampleRecord> {
    own.iter()
        .chain(other.iter().filter(|s| filter.admits(s.label)))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TrainMode {
    #[default]
    Joint,
    Separate,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Joint => "joint",
            TrainMode::Separate => "separate",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "separate" => Ok(TrainMode::Separate),
            _ => Err(Error::Config(format!("unknown training mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
    /// Seeds both parameter initialization and batch sampling.
    pub seed: u64,
    pub mode: TrainMode,
    /// The task trained in separate mode, and the task whose data is kept
    /// whole when the extra-data filter is not `both`.
    pub primary_task: Task,
    pub model: ModelConfig,
    pub schedule: ScheduleSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            epochs: 30,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 20,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
            mode: TrainMode::Joint,
            primary_task: Task::Spoof,
            model: ModelConfig::default(),
            schedule: ScheduleSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.lr_decay_epoch == 0 || self.lr_decay_epoch > self.epochs {
            return Err(Error::Config(format!(
                "need 0 < lr_decay_epoch ({}) <= epochs ({})",
                self.lr_decay_epoch, self.epochs
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        self.schedule.validate()?;
        self.model.validate()
    }

    /// Model config with the run seed applied to initialization.
    pub fn seeded_model(&self) -> ModelConfig {
        ModelConfig {
            init_seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn seeded_schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            seed: self.seed,
            ..self.schedule
        }
    }

    /// Writes every training key, followed by the model keys.
    pub fn write_record(&self, w: &mut RecordWriter) {
        w.put("mode", self.mode)
            .put("task", self.primary_task)
            .put("seed", self.seed)
            .put("lr", self.lr)
            .put("epochs", self.epochs)
            .put("lr_decay_factor", self.lr_decay_factor)
            .put("lr_decay_epoch", self.lr_decay_epoch)
            .put("momentum", self.momentum)
            .put("weight_decay", self.weight_decay)
            .put("sampling", self.schedule.strategy)
            .put("batch_size", self.schedule.batch_size)
            .put("extra_data", self.schedule.extra_data_filter);
        self.model.write_fields(w);
    }

    /// Reads training and model keys from `rec`, leaving other keys.
    pub fn take_from(rec: &mut Record) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            mode: rec.take_or("mode", d.mode)?,
            primary_task: rec.take_or("task", d.primary_task)?,
            seed: rec.take_or("seed", d.seed)?,
            lr: rec.take_or("lr", d.lr)?,
            epochs: rec.take_or("epochs", d.epochs)?,
            lr_decay_factor: rec.take_or("lr_decay_factor", d.lr_decay_factor)?,
            lr_decay_epoch: rec.take_or("lr_decay_epoch", d.lr_decay_epoch)?,
            momentum: rec.take_or("momentum", d.momentum)?,
            weight_decay: rec.take_or("weight_decay", d.weight_decay)?,
            schedule: ScheduleSpec {
                strategy: rec.take_or("sampling", d.schedule.strategy)?,
                batch_size: rec.take_or("batch_size", d.schedule.batch_size)?,
                extra_data_filter: rec.take_or("extra_data", d.schedule.extra_data_filter)?,
                seed: 0,
            },
            model: ModelConfig::take_fields(rec)?,
        };
        Ok(cfg)
    }
}

/// Learning rate of a 1-based epoch: one step decay at `lr_decay_epoch`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(Error::Parameter(format!("epoch {epoch} outside [1, {}]", cfg.epochs)));
    }
    Ok(if epoch >= cfg.lr_decay_epoch {
        cfg.lr * cfg.lr_decay_factor
    } else {
        cfg.lr
    })
}

/// `p ← p − lr·grad` for every tensor.
pub fn sgd_update(params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dim("sgd_update", &[grads.len()], &[params.len()]));
    }
    for (p, gr) in params.iter().zip(grads) {
        if gr.len() != p.numel() {
            return Err(Error::dim("sgd_update", p.shape(), &[gr.len()]));
        }
    }
    for (p, gr) in params.iter_mut().zip(grads) {
        for (v, d) in p.data_mut().iter_mut().zip(gr) {
            *v -= lr * d;
        }
    }
    Ok(())
}

/// SGD optimizer state. With zero momentum and weight decay an update is
/// exactly [`sgd_update`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.momentum, cfg.weight_decay)
    }

    /// `d = grad + wd·p`, `v ← μ·v + d`, `p ← p − lr·v`.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if self.momentum == 0.0 && self.weight_decay == 0.0 {
            return sgd_update(params, grads, lr);
        }
        if grads.len() != params.len() {
            return Err(Error::dim("sgd_update", &[grads.len()], &[params.len()]));
        }
        for (p, gr) in params.iter().zip(grads) {
            if gr.len() != p.numel() {
                return Err(Error::dim("sgd_update", p.shape(), &[gr.len()]));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        for ((p, gr), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, d), v) in p.data_mut().iter_mut().zip(gr).zip(vel.iter_mut()) {
                *v = self.momentum * *v + d + self.weight_decay * *w;
                *w -= lr * *v;
            }
        }
        Ok(())
    }
}

/// One SGD step on a batch. Aborts before touching the parameters if the
/// loss or any gradient is not finite.
pub fn sgd_step(
    model: &mut JointModel,
    opt: &mut Sgd,
    samples: &[&PreparedSample],
    lr: f64,
    step: usize,
) -> Result<f64> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Parameter(format!("learning rate {lr}")));
    }
    let (batch, labels) = make_batch(samples, model.config())?;
    let sg = model.gradients(&batch, &labels)?;
    let finite = sg.loss.is_finite() && sg.grads.iter().flatten().all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite {
            step,
            batch_ids: samples.iter().map(|s| s.id.clone()).collect(),
        });
    }
    opt.update(model.params_mut(), &sg.grads, lr)?;
    Ok(sg.loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// 1-based step within the epoch.
    pub step: usize,
    pub n_spoof: usize,
    pub n_forgery: usize,
    pub loss: f64,
    pub lr: f64,
    pub ids: Vec<String>,
}

impl StepRecord {
    pub fn line(&self) -> String {
        format!(
            "{} {} S:{}/F:{} {:.9e} {:e}",
            self.epoch, self.step, self.n_spoof, self.n_forgery, self.loss, self.lr
        )
    }

    /// Parses a [`Self::line`]; ids are left empty.
    pub fn parse_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return None;
        }
        let (s, fg) = f[2].split_once('/')?;
        Some(StepRecord {
            epoch: f[0].parse().ok()?,
            step: f[1].parse().ok()?,
            n_spoof: s.strip_prefix("S:")?.parse().ok()?,
            n_forgery: fg.strip_prefix("F:")?.parse().ok()?,
            loss: f[3].parse().ok()?,
            lr: f[4].parse().ok()?,
            ids: Vec::new(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    /// One `epoch step S:n/F:m loss lr` line per step.
    pub fn text(&self) -> String {
        self.steps.iter().map(|s| s.line() + "\n").collect()
    }

    /// One `epoch step id,id,...` line per step.
    pub fn batches_text(&self) -> String {
        self.steps
            .iter()
            .map(|s| format!("{} {} {}\n", s.epoch, s.step, s.ids.join(",")))
            .collect()
    }

    /// Reads the step log and, when given, the batch log.
    pub fn parse(text: &str, batches: Option<&str>) -> Result<Self> {
        let mut steps = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            steps.push(StepRecord::parse_line(line).ok_or_else(|| Error::Parse {
                path: "<train log>".into(),
                line: i + 1,
                msg: format!("bad step record '{line}'"),
            })?);
        }
        if let Some(b) = batches {
            let lines: Vec<&str> = b.lines().filter(|l| !l.trim().is_empty()).collect();
            if lines.len() != steps.len() {
                return Err(Error::Config(format!(
                    "batch log has {} records for {} steps",
                    lines.len(),
                    steps.len()
                )));
            }
            for (s, l) in steps.iter_mut().zip(lines) {
                let ids = l.split_whitespace().nth(2).unwrap_or("");
                s.ids = ids.split(',').filter(|x| !x.is_empty()).map(String::from).collect();
            }
        }
        Ok(TrainLog { steps })
    }

    pub fn epoch_mean_loss(&self, epoch: usize) -> Option<f64> {
        let losses: Vec<f64> = self.steps.iter().filter(|s| s.epoch == epoch).map(|s| s.loss).collect();
        (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Training data per task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSets {
    pub spoof: Vec<SampleRecord>,
    pub forgery: Vec<SampleRecord>,
}

impl TrainingSets {
    /// Splits records by their task tag.
    pub fn from_records(records: impl IntoIterator<Item = SampleRecord>) -> Self {
        let mut out = TrainingSets::default();
        for r in records {
            match r.task {
                Task::Spoof => out.spoof.push(r),
                Task::Forgery => out.forgery.push(r),
            }
        }
        out
    }

    pub fn of(&self, task: Task) -> &[SampleRecord] {
        match task {
            Task::Spoof => &self.spoof,
            Task::Forgery => &self.forgery,
        }
    }

    /// The pool actually trained on, per the mode and extra-data filter.
    pub fn pool(&self, cfg: &TrainConfig) -> Vec<&SampleRecord> {
        let own = self.of(cfg.primary_task);
        match cfg.mode {
            TrainMode::Separate => own.iter().collect(),
            TrainMode::Joint => {
                apply_extra_data_filter(own, self.of(cfg.primary_task.other()), cfg.schedule.extra_data_filter)
            }
        }
    }
}

pub struct TrainOutcome {
    pub model: JointModel,
    pub log: TrainLog,
}

/// Runs every epoch of the configured schedule from a fresh model.
pub fn train(cfg: &TrainConfig, data: &TrainingSets) -> Result<TrainOutcome> {
    train_with_progress(cfg, data, |_, _| {})
}

/// As [`train`], calling `progress(epoch, mean_loss)` after each epoch.
pub fn train_with_progress(
    cfg: &TrainConfig,
    data: &TrainingSets,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = JointModel::new(cfg.seeded_model())?;
    let pool = data.pool(cfg);
    let prepared = prepare_all(&pool.into_iter().cloned().collect::<Vec<_>>(), model.config())?;
    let by_task: [Vec<&PreparedSample>; 2] = Task::ALL.map(|t| prepared.iter().filter(|s| s.task == t).collect());
    let schedule = cfg.seeded_schedule();
    let mut log = TrainLog::default();
    let mut global_step = 0;
    let mut opt = Sgd::from_config(cfg);
    for epoch in 1..=cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        let plans = make_schedule(&schedule, by_task[0].len(), by_task[1].len(), epoch)?;
        for (i, plan) in plans.iter().enumerate() {
            global_step += 1;
            let samples: Vec<&PreparedSample> = plan.samples.iter().map(|r| by_task[r.task.index()][r.index]).collect();
            let loss = sgd_step(&mut model, &mut opt, &samples, lr, global_step)?;
            let (n_spoof, n_forgery) = plan.mix();
            log.steps.push(StepRecord {
                epoch,
                step: i + 1,
                n_spoof,
                n_forgery,
                loss,
                lr,
                ids: samples.iter().map(|s| s.id.clone()).collect(),
            });
        }
        progress(epoch, log.epoch_mean_loss(epoch).unwrap_or(f64::NAN));
    }
    Ok(TrainOutcome { model, log })
}

/// Trains, then writes the checkpoint, `<checkpoint>.log` and
/// `<checkpoint>.batches`. Nothing is written if training fails.
pub fn train_to(
    cfg: &TrainConfig,
    data: &TrainingSets,
    checkpoint: &Path,
    progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let out = train_with_progress(cfg, data, progress)?;
    for (suffix, text) in [("log", out.log.text()), ("batches", out.log.batches_text())] {
        let p = sidecar(checkpoint, suffix);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    save_checkpoint(checkpoint, &out.model)?;
    Ok(out)
}

/// `<path>.<suffix>`, keeping the full original file name.
pub fn sidecar(path: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    s.into()
}
