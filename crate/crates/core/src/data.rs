//! In-memory cache of encoder-ready inputs and batch assembly.

use crate::error::Result;
use crate::mapfile;
use crate::models::{Batch, EncoderConfig, ModelConfig};
use crate::synthbench::SampleRecord;
use crate::task::{Label, Task};
use crate::tensor::Tensor;

/// One sample with its maps already converted to encoder inputs. Maps of
/// branches the model does not use are not loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub task: Task,
    pub label: Label,
    pub domain: String,
    pub app: Option<Vec<f64>>,
    pub mst: Option<Vec<f64>>,
    pub wav: Option<Vec<f64>>,
}

fn load(enc: EncoderConfig, path: &std::path::Path) -> Result<Vec<f64>> {
    enc.prepare(&mapfile::read(path)?)
}

pub fn prepare_sample(rec: &SampleRecord, cfg: &ModelConfig) -> Result<PreparedSample> {
    let arch = &cfg.arch;
    let app = arch
        .uses_appearance()
        .then(|| load(cfg.app_encoder(), &rec.app_path))
        .transpose()?;
    let (mst, wav) = if arch.uses_rppg() {
        (
            Some(load(cfg.mst_encoder(), &rec.mst_path)?),
            Some(load(cfg.wav_encoder(), &rec.wav_path)?),
        )
    } else {
        (None, None)
    };
    Ok(PreparedSample {
        id: rec.id.clone(),
        task: rec.task,
        label: rec.label,
        domain: rec.domain.clone(),
        app,
        mst,
        wav,
    })
}

pub fn prepare_all(records: &[SampleRecord], cfg: &ModelConfig) -> Result<Vec<PreparedSample>> {
    records.iter().map(|r| prepare_sample(r, cfg)).collect()
}

fn stack(
    samples: &[&PreparedSample],
    enc: EncoderConfig,
    pick: impl Fn(&PreparedSample) -> Option<&Vec<f64>>,
) -> Result<Option<Tensor>> {
    let mut data = Vec::new();
    for s in samples {
        match pick(s) {
            Some(v) => data.extend_from_slice(v),
            None => return Ok(None),
        }
    }
    let [c, h, w] = enc.input_shape();
    Tensor::new(vec![samples.len(), c, h, w], data).map(Some)
}

/// Stacks samples into a model batch and returns their labels.
pub fn make_batch(samples: &[&PreparedSample], cfg: &ModelConfig) -> Result<(Batch, Vec<Label>)> {
    let batch = Batch {
        tasks: samples.iter().map(|s| s.task).collect(),
        app: stack(samples, cfg.app_encoder(), |s| s.app.as_ref())?,
        mst: stack(samples, cfg.mst_encoder(), |s| s.mst.as_ref())?,
        wav: stack(samples, cfg.wav_encoder(), |s| s.wav.as_ref())?,
    };
    Ok((batch, samples.iter().map(|s| s.label).collect()))
}
