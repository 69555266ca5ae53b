//! Binary checkpoints: flat parameter arrays keyed by module path, with the
//! model configuration embedded.
//!
//! ```text
//! magic "MOTSEGCK"  u32 version
//! u32 len, UTF-8 TOML metadata
//! u32 count, then per parameter:
//!   u32 len, name; u8 dtype; u32 ndim; u64 dims…; little-endian values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RunConfig};
use crate::error::{Error, Result};
use crate::{DType, Model, Scalar, Tensor};

const MAGIC: &[u8; 8] = b"MOTSEGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub model: ModelConfig,
    /// Full run configuration, when the checkpoint came from a training run.
    pub run: Option<RunConfig>,
}

/// Parameters as read from disk, before binding to a model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Tensor<f64>, DType)>,
}

pub fn checkpoint_bytes<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = toml::to_string(meta).expect("checkpoint metadata serializes");
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, checkpoint_bytes(model, meta)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8"))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let text = r.string()?;
    let meta: CheckpointMeta =
        toml::from_str(&text).map_err(|e| Error::format(path, format!("metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let tag = r.take(1)?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::format(path, format!("{name}: unknown dtype {tag}")))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = r.take(n * dtype.size())?;
        let data: Vec<f64> = match dtype {
            DType::F32 => bytes.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
            DType::F64 => bytes.chunks_exact(8).map(f64::read_le).collect(),
        };
        params.push((name, Tensor::from_vec(&shape, data), dtype));
    }
    if r.pos != buf.len() {
        return Err(Error::format(path, "trailing bytes after parameters"));
    }
    Ok(Checkpoint { meta, params })
}

/// Rebuilds the model described by a checkpoint and loads every parameter.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let ck = read_checkpoint(path)?;
    let mut model = Model::<T>::new(ck.meta.model.clone(), 0)?;
    let loaded = import_params(&mut model, &ck, |_| true, path)?;
    if loaded != model.params.len() {
        return Err(Error::format(
            path,
            format!("checkpoint covers {loaded} of {} parameters", model.params.len()),
        ));
    }
    Ok((model, ck.meta))
}

/// Copies parameters whose name passes `filter` and exists in the model
/// with the same shape. Returns how many were copied.
pub fn import_params<T: Scalar>(
    model: &mut Model<T>,
    ck: &Checkpoint,
    filter: impl Fn(&str) -> bool,
    path: &Path,
) -> Result<usize> {
    let mut n = 0;
    for (name, t, _) in &ck.params {
        if !filter(name) {
            continue;
        }
        let Some(id) = model.params.find(name) else { continue };
        let dst = model.params.get_mut(id);
        if dst.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "{}: parameter {name} has shape {:?}, model expects {:?}",
                path.display(),
                t.shape(),
                dst.shape()
            )));
        }
        *dst = t.cast();
        n += 1;
    }
    Ok(n)
}

/// Partial import for pretrained weights, e.g. a backbone trained elsewhere.
pub fn load_pretrained<T: Scalar>(model: &mut Model<T>, path: &Path, prefix: &str) -> Result<usize> {
    let ck = read_checkpoint(path)?;
    import_params(model, &ck, |n| n.starts_with(prefix), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BackboneName;

    fn cfg() -> ModelConfig {
        ModelConfig {
            backbone: BackboneName::TinyConv,
            width: 0.25,
            fpn_channels: 4,
            num_prototypes: 3,
            input_size: [32, 32],
            ..Default::default()
        }
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            iteration: 12,
            model: cfg(),
            run: None,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = Model::<f32>::new(cfg(), 9).unwrap();
        save_checkpoint(&m, &meta(), &p).unwrap();
        let (back, meta2) = load_checkpoint::<f32>(&p).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(meta2, meta());
        assert_eq!(checkpoint_bytes(&back, &meta2), fs::read(&p).unwrap());
        // cross-precision load widens exactly
        let (wide, _) = load_checkpoint::<f64>(&p).unwrap();
        assert_eq!(wide.params.get(wide.params.find("motion.cls.weight").unwrap()).data()[0],
            m.params.get(m.params.find("motion.cls.weight").unwrap()).data()[0] as f64);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = Model::<f32>::new(cfg(), 9).unwrap();
        let bytes = checkpoint_bytes(&m, &meta());
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::Format { .. })));
        fs::write(&p, b"garbage").unwrap();
        assert!(load_checkpoint::<f32>(&p).is_err());
        assert!(matches!(
            load_checkpoint::<f32>(&dir.path().join("none.ckpt")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn partial_import_by_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let src = Model::<f32>::new(cfg(), 1).unwrap();
        save_checkpoint(&src, &meta(), &p).unwrap();
        let mut dst = Model::<f32>::new(cfg(), 2).unwrap();
        let n = load_pretrained(&mut dst, &p, "trunk.appearance.").unwrap();
        assert_eq!(n, 10);
        let id = dst.params.find("trunk.appearance.conv0.weight").unwrap();
        assert_eq!(dst.params.get(id), src.params.get(id));
        let id = dst.params.find("trunk.motion.conv0.weight").unwrap();
        assert_ne!(dst.params.get(id), src.params.get(id));
    }
}
