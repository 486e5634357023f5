//! `PFMAP1` binary array files.
//!
//! Layout: the 7 magic bytes `PFMAP1\0` and one zero pad byte, a `u32` rank,
//! `rank` dimension sizes as `u32`, then the row-major values as `f32`. All
//! integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"PFMAP1\0";

/// A decoded map: dimensions plus row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct MapArray {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl MapArray {
    pub fn new(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != values.len() {
            return Err(Error::dim("map", &dims, &[values.len()]));
        }
        Ok(Self { dims, values })
    }

    pub fn from_f64(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| v as f32).collect())
    }
}

pub fn encode(map: &MapArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * map.dims.len() + 4 * map.values.len());
    out.extend_from_slice(MAGIC);
    out.push(0);
    out.extend_from_slice(&(map.dims.len() as u32).to_le_bytes());
    for &d in &map.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &map.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a map; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<MapArray> {
    let bad = |msg: String| Error::format(origin, msg);
    if bytes.len() < 12 || &bytes[..7] != MAGIC {
        return Err(bad("not a PFMAP1 file (bad magic)".into()));
    }
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad(format!("truncated header at byte {at}")))
    };
    let rank = word(8)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(word(12 + 4 * i)? as usize);
    }
    let start = 12 + 4 * rank;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("dimension product overflows".into()))?;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != count * 4 {
        return Err(bad(format!(
            "size mismatch: dims {dims:?} need {} bytes of data, found {}",
            count * 4,
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(MapArray { dims, values })
}

/// Checks magic, header and file length without reading the payload.
/// Returns the dimensions.
pub fn check(path: &Path) -> Result<Vec<usize>> {
    use std::io::Read;
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut head = [0u8; 12];
    file.read_exact(&mut head)
        .map_err(|_| Error::format(path, "not a PFMAP1 file (bad magic)"))?;
    if &head[..7] != MAGIC {
        return Err(Error::format(path, "not a PFMAP1 file (bad magic)"));
    }
    let rank = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut dims_bytes = vec![0u8; 4 * rank];
    file.read_exact(&mut dims_bytes)
        .map_err(|_| Error::format(path, "truncated header"))?;
    let dims: Vec<usize> = dims_bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let expected = dims.iter().product::<usize>() as u64 * 4 + 12 + 4 * rank as u64;
    if len != expected {
        return Err(Error::format(
            path,
            format!("size mismatch: dims {dims:?} need {expected} bytes, file has {len}"),
        ));
    }
    Ok(dims)
}

pub fn write(path: &Path, map: &MapArray) -> Result<()> {
    fs::write(path, encode(map)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<MapArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let map = MapArray::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&map);
        let mut expected = b"PFMAP1\0\0".to_vec();
        expected.extend([2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode(&bytes, Path::new("x")).unwrap(), map);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let map = MapArray::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = encode(&map);
        let truncated = &bytes[..bytes.len() - 2];
        let err = decode(truncated, Path::new("m.pfm")).unwrap_err();
        assert!(err.to_string().contains("m.pfm"));
        assert!(err.to_string().contains("size mismatch"));
        bytes[0] = b'X';
        assert!(decode(&bytes, Path::new("m.pfm"))
            .unwrap_err()
            .to_string()
            .contains("magic"));
        assert!(decode(&[], Path::new("m.pfm")).is_err());
    }

    #[test]
    fn header_check_matches_decode() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pfm");
        write(&p, &MapArray::new(vec![2, 3], vec![0.0; 6]).unwrap()).unwrap();
        assert_eq!(check(&p).unwrap(), vec![2, 3]);
        assert_eq!(read(&p).unwrap().dims, vec![2, 3]);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(check(&p).unwrap_err().to_string().contains("size mismatch"));
        fs::write(&p, b"PF").unwrap();
        assert!(check(&p).unwrap_err().to_string().contains("magic"));
        assert!(matches!(check(&dir.path().join("none")), Err(Error::Io { .. })));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let mut bytes = encode(&MapArray::new(vec![1], vec![0.5]).unwrap());
        bytes.push(0);
        assert!(decode(&bytes, Path::new("m")).is_err());
    }
}
