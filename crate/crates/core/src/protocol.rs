//! Intra/cross evaluation of joint or separately trained models.

use std::path::{Path, PathBuf};

use crate::data::{make_batch, prepare_sample};
use crate::error::{Error, Result};
use crate::metrics::{summarize, ProtocolResult, ScoredSample, Split};
use crate::models::{load_checkpoint, JointModel};
use crate::synthbench::{load_dataset, SampleRecord};
use crate::task::Task;
use crate::trainer::TrainMode;

const EVAL_BATCH: usize = 64;

/// Trained model(s) under evaluation.
#[allow(clippy::large_enum_variant)]
pub enum ProtocolModels {
    /// One model scores both tasks.
    Joint(JointModel),
    /// At most one model per task, indexed by [`Task::index`]; tasks
    /// without a model are not evaluated.
    Separate([Option<JointModel>; 2]),
}

impl ProtocolModels {
    pub fn mode(&self) -> TrainMode {
        match self {
            ProtocolModels::Joint(_) => TrainMode::Joint,
            ProtocolModels::Separate(_) => TrainMode::Separate,
        }
    }

    pub fn for_task(&self, task: Task) -> Option<&JointModel> {
        match self {
            ProtocolModels::Joint(m) => Some(m),
            ProtocolModels::Separate(ms) => ms[task.index()].as_ref(),
        }
    }

    /// Tasks that have a model.
    pub fn tasks(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|t| self.for_task(*t).is_some()).collect()
    }

    pub fn load_joint(path: &Path) -> Result<Self> {
        Ok(ProtocolModels::Joint(load_checkpoint(path)?))
    }

    pub fn load_separate(spoof: Option<&Path>, forgery: Option<&Path>) -> Result<Self> {
        if spoof.is_none() && forgery.is_none() {
            return Err(Error::Config(
                "separate evaluation needs at least one checkpoint".into(),
            ));
        }
        let load = |p: Option<&Path>| p.map(load_checkpoint).transpose();
        Ok(ProtocolModels::Separate([load(spoof)?, load(forgery)?]))
    }
}

/// A test manifest and the split it belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalSet {
    pub split: Split,
    pub manifest: PathBuf,
}

/// Bonafide probability of every sample, scored by the model for its task.
/// Samples of tasks without a model are skipped.
pub fn score_samples(models: &ProtocolModels, split: Split, records: &[SampleRecord]) -> Result<Vec<ScoredSample>> {
    let mut out = Vec::with_capacity(records.len());
    for task in models.tasks() {
        let model = models.for_task(task).expect("task has a model");
        let mine: Vec<&SampleRecord> = records.iter().filter(|r| r.task == task).collect();
        for chunk in mine.chunks(EVAL_BATCH) {
            let prepared = chunk
                .iter()
                .map(|r| prepare_sample(r, model.config()))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = prepared.iter().collect();
            let (batch, _) = make_batch(&refs, model.config())?;
            let scores = model.scores(&batch)?;
            for (r, score) in chunk.iter().zip(scores) {
                if !score.is_finite() {
                    return Err(Error::NonFinite {
                        step: 0,
                        batch_ids: vec![r.id.clone()],
                    });
                }
                out.push(ScoredSample {
                    task,
                    split,
                    dataset: r.domain.clone(),
                    label: r.label,
                    score,
                });
            }
        }
    }
    Ok(out)
}

/// Scores every listed set and computes per-dataset and pooled metrics.
pub fn run_protocol(models: &ProtocolModels, sets: &[EvalSet]) -> Result<ProtocolResult> {
    if sets.is_empty() {
        return Err(Error::Config("no evaluation manifests".into()));
    }
    let mut scored = Vec::new();
    for set in sets {
        let data = load_dataset(&set.manifest)?;
        scored.extend(score_samples(models, set.split, &data.samples)?);
    }
    summarize(&scored)
}
