//! Single-file model checkpoints.
//!
//! Layout: magic `PFCKPT1\0`, a `u32` byte length and that many bytes of
//! `key = value` model config, then named tensors until end of file, each as
//! name length `u32`, name bytes, rank `u32`, `rank` dims as `u32`, and `f32`
//! data. Integers and floats are little-endian. Running norm statistics are
//! stored as `<norm>.running_mean` and `<norm>.running_var`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{JointModel, ModelConfig};
use crate::tensor::NormState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PFCKPT1\0";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f64]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len());
    for &d in dims {
        put_u32(out, d);
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &JointModel) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let config = model.config().to_record();
    put_u32(&mut out, config.len());
    out.extend_from_slice(config.as_bytes());
    for (name, t) in model.names().iter().zip(model.params()) {
        put_tensor(&mut out, name, t.shape(), t.data());
    }
    for (name, s) in model.norm_names().iter().zip(model.norms()) {
        let c = s.channels();
        put_tensor(&mut out, &format!("{name}.running_mean"), &[c], &s.running_mean);
        put_tensor(&mut out, &format!("{name}.running_var"), &[c], &s.running_var);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    origin: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.origin, format!("truncated checkpoint at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<JointModel> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, "not a PFCKPT1 checkpoint (bad magic)"));
    }
    let mut r = Reader { bytes, at: 8, origin };
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format(origin, "config record is not UTF-8"))?;
    let config = ModelConfig::from_record(text, origin)?;
    let mut tensors = BTreeMap::new();
    while !r.done() {
        let n = r.u32()?;
        let name =
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::format(origin, "tensor name is not UTF-8"))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(origin, format!("tensor '{name}' too large")))?;
        let data: Vec<f64> = r
            .take(count.saturating_mul(4))?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::format(origin, format!("duplicate tensor '{name}'")));
        }
    }
    let mut model = JointModel::new(config)?;
    let mut fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let (dims, data) = tensors
            .remove(name)
            .ok_or_else(|| Error::format(origin, format!("missing tensor '{name}'")))?;
        if dims != shape {
            return Err(Error::format(
                origin,
                format!("tensor '{name}' has shape {dims:?}, expected {shape:?}"),
            ));
        }
        Ok(data)
    };
    let names = model.names().to_vec();
    for (i, name) in names.iter().enumerate() {
        let shape = model.params()[i].shape().to_vec();
        let data = fetch(name, &shape)?;
        model.params_mut()[i].data_mut().copy_from_slice(&data);
    }
    let norm_names = model.norm_names().to_vec();
    for (i, name) in norm_names.iter().enumerate() {
        let c = model.norms()[i].channels();
        let mut state = NormState::new(c);
        state.running_mean = fetch(&format!("{name}.running_mean"), &[c])?;
        state.running_var = fetch(&format!("{name}.running_var"), &[c])?;
        model.set_norm(i, state);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::format(origin, format!("unexpected tensor '{extra}'")));
    }
    Ok(model)
}

/// Writes through a temporary sibling file and renames it into place, so a
/// failed write never leaves a partial checkpoint at `path`.
pub fn save_checkpoint(path: &Path, model: &JointModel) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, encode_checkpoint(model)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<JointModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
