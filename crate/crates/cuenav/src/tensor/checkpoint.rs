//! Flat binary checkpoint archive.
//!
//! Layout: magic `CNCK`, a version integer, a JSON metadata blob, then one
//! entry per parameter: dot-separated name, shape, and a little-endian f32
//! buffer. Loading into a store rejects names the store does not know and
//! any shape mismatch.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::{Result, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"CNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: serde_json::Value,
    pub entries: Vec<(String, Tensor<f32>)>,
}

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Checkpoint(e.to_string())
}

/// Write `store`'s parameters (optionally filtered by name) plus metadata.
pub fn save(
    store: &ParamStore<f32>,
    meta: &serde_json::Value,
    path: &Path,
    filter: Option<&dyn Fn(&str) -> bool>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    let meta_bytes = serde_json::to_vec(meta).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&meta_bytes).map_err(io_err)?;
    let selected: Vec<_> = store
        .iter()
        .filter(|p| filter.map_or(true, |f| f(&p.name)))
        .collect();
    w.write_all(&(selected.len() as u32).to_le_bytes()).map_err(io_err)?;
    for p in selected {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        w.write_all(&[p.value.shape().len() as u8]).map_err(io_err)?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes).map_err(io_err)?;
    let meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| TensorError::Checkpoint(format!("bad metadata: {e}")))?;
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len2 = [0u8; 2];
        r.read_exact(&mut len2).map_err(io_err)?;
        let name_len = u16::from_le_bytes(len2) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name)
            .map_err(|_| TensorError::Checkpoint("non-utf8 parameter name".into()))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim).map_err(io_err)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut buf = vec![0u8; numel * 4];
        r.read_exact(&mut buf).map_err(io_err)?;
        let data: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(Checkpoint {
        version,
        meta,
        entries,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

/// Copy checkpoint entries into the store. Unknown names and shape
/// mismatches are rejected. With `require_complete`, every store parameter
/// must be covered by the file; without it parameters absent from the file
/// keep their current values (used when a later training stage initializes
/// its own decoder on top of an earlier checkpoint).
pub fn apply(ckpt: &Checkpoint, store: &mut ParamStore<f32>, require_complete: bool) -> Result<()> {
    for (name, tensor) in &ckpt.entries {
        let idx = store.idx(name)?;
        let p = store.get_mut(idx);
        if p.value.shape() != tensor.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "checkpoint load",
                expected: p.value.shape().to_vec(),
                got: tensor.shape().to_vec(),
            });
        }
        p.value = tensor.clone();
    }
    if require_complete {
        for name in store.names() {
            if !ckpt.entries.iter().any(|(n, _)| n == name) {
                return Err(TensorError::Checkpoint(format!(
                    "parameter '{name}' missing from checkpoint"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add(
            "enc.w",
            Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        s.add("enc.b", Tensor::from_vec(&[2], vec![-1.0, 0.5]).unwrap(), true);
        s
    }

    #[test]
    fn round_trip_preserves_values_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = a_store();
        let meta = serde_json::json!({"head": "waypoint", "deep_supervision": true});
        save(&store, &meta, &path, None).unwrap();
        let ckpt = load(&path).unwrap();
        assert_eq!(ckpt.version, CHECKPOINT_VERSION);
        assert_eq!(ckpt.meta["head"], "waypoint");
        let mut target = a_store();
        target.get_mut(0).value = Tensor::zeros(&[2, 2]);
        apply(&ckpt, &mut target, true).unwrap();
        assert_eq!(target.get(0).value.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unknown_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&a_store(), &serde_json::json!({}), &path, None).unwrap();
        let ckpt = load(&path).unwrap();
        let mut other: ParamStore<f32> = ParamStore::new();
        other.add("different", Tensor::zeros(&[2, 2]), true);
        assert!(matches!(
            apply(&ckpt, &mut other, false),
            Err(TensorError::UnknownParameter(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&a_store(), &serde_json::json!({}), &path, None).unwrap();
        let ckpt = load(&path).unwrap();
        let mut other: ParamStore<f32> = ParamStore::new();
        other.add("enc.w", Tensor::zeros(&[3, 2]), true);
        other.add("enc.b", Tensor::zeros(&[2]), true);
        assert!(matches!(
            apply(&ckpt, &mut other, false),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }
}
