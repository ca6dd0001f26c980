//! Single-file parameter checkpoints.
//!
//! ```text
//! "AVCK"  u16 version=1
//! u32 kind_len, kind (UTF-8)
//! u32 config_len, config (JSON)
//! u32 n_tensors, then per tensor:
//!   u32 name_len, name, u32 rank, rank × u32 dims, numel × f64
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{LocalizerModel, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVCK";
const VERSION: u16 = 1;
pub(crate) const LOCALIZER_KIND: &str = "localizer";

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn write_checkpoint<C: Serialize, W: Write>(out: &mut W, kind: &str, config: &C, store: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut buf, kind);
    put_str(&mut buf, &serde_json::to_string(config)?);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        put_str(&mut buf, name);
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return self.fail(format!("checkpoint truncated reading {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let at = self.pos;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format {
            offset: at as u64,
            message: format!("{what} is not UTF-8"),
        })
    }
}

/// The model kind recorded in a checkpoint's header.
pub fn checkpoint_kind(bytes: &[u8]) -> Result<String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return r.fail("bad magic, expected \"AVCK\"");
    }
    r.take(2, "version")?;
    r.string("kind")
}

/// Decodes a checkpoint of the given kind into its config and named tensors.
pub fn read_checkpoint<C: DeserializeOwned, R: Read>(source: &mut R, kind: &str) -> Result<(C, Vec<(String, Tensor)>)> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return r.fail("bad magic, expected \"AVCK\"");
    }
    let at = r.pos;
    let b = r.take(2, "version")?;
    if u16::from_le_bytes([b[0], b[1]]) != VERSION {
        r.pos = at;
        return r.fail("unsupported checkpoint version");
    }
    let at = r.pos;
    let found = r.string("kind")?;
    if found != kind {
        r.pos = at;
        return r.fail(format!("checkpoint holds a {found} model, expected {kind}"));
    }
    let at = r.pos;
    let json = r.string("config")?;
    let config = serde_json::from_str(&json).map_err(|e| Error::Format {
        offset: at as u64,
        message: format!("checkpoint config: {e}"),
    })?;
    let n = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dim")?);
        }
        let numel: usize = shape.iter().product();
        let at = r.pos;
        let raw = r.take(numel.saturating_mul(8), &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: at as u64,
            message: format!("{name}: {e}"),
        })?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return r.fail("trailing bytes after checkpoint");
    }
    Ok((config, tensors))
}

/// Copies named tensors into `store`, which must have exactly that layout.
pub(crate) fn restore(store: &mut ParamStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Dimension(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Dimension(format!("checkpoint tensor {name} is not a model parameter")))?;
        let dst = store.get_mut(id);
        if dst.shape() != t.shape() {
            return Err(Error::Dimension(format!(
                "{name}: checkpoint shape {:?}, model shape {:?}",
                t.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &LocalizerModel, store: &ParamStore) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut out, LOCALIZER_KIND, &model.config, store)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(LocalizerModel, ParamStore)> {
    let mut f = BufReader::new(fs::File::open(path)?);
    let (config, tensors): (ModelConfig, _) = read_checkpoint(&mut f, LOCALIZER_KIND)?;
    let (model, mut store) = LocalizerModel::new(config)?;
    restore(&mut store, tensors)?;
    Ok((model, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localizer::{FeatureDims, Variant};

    fn model() -> (LocalizerModel, ParamStore) {
        let dims = FeatureDims {
            visual_channels: 4,
            regions: 4,
            audio_dim: 3,
            num_classes: 3,
            audio_map: None,
        };
        let mut cfg = ModelConfig::new("A+V-att".parse::<Variant>().unwrap(), dims);
        cfg.hidden = 5;
        cfg.att_dim = 4;
        cfg.att_hidden = 2;
        LocalizerModel::new(cfg).unwrap()
    }

    #[test]
    fn round_trip_and_corruption() {
        let (m, mut store) = model();
        store.tensors_mut()[0].data_mut()[0] = 0.123456789;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &m, &store).unwrap();
        let (m2, s2) = load_checkpoint(&path).unwrap();
        assert_eq!(m2.config, m.config);
        assert_eq!(s2, store);

        let bytes = fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            read_checkpoint::<ModelConfig, _>(&mut &cut[..], LOCALIZER_KIND),
            Err(Error::Format { .. })
        ));
        assert!(read_checkpoint::<ModelConfig, _>(&mut &bytes[..], "avdln").is_err());
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let (m, store) = model();
        let mut buf = Vec::new();
        let mut cfg = m.config.clone();
        cfg.hidden = 6;
        write_checkpoint(&mut buf, LOCALIZER_KIND, &cfg, &store).unwrap();
        let (cfg, tensors): (ModelConfig, _) = read_checkpoint(&mut &buf[..], LOCALIZER_KIND).unwrap();
        let (_, mut fresh) = LocalizerModel::new(cfg).unwrap();
        assert!(matches!(restore(&mut fresh, tensors), Err(Error::Dimension(_))));
    }
}
