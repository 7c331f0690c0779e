//! MGC1 model checkpoints.
//!
//! ```text
//! "MGC1" | u32 version | u32 n + config text | u32 n + meta JSON
//!        | u32 tensor count | per tensor: u32 rows, u32 cols, f64 LE values
//!        | u32 CRC32 of every byte after the magic
//! ```
//!
//! Integers are little-endian. The config text is the flat `key = value`
//! form, so a checkpoint fully describes how its graphs were built.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::LabelSchema;
use crate::model::MagicModel;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGC1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub labels: Vec<String>,
    pub best_n: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub meta: CheckpointMeta,
    pub model: MagicModel,
}

impl Checkpoint {
    pub fn new(config: RunConfig, schema: &LabelSchema, model: MagicModel) -> Result<Self> {
        if schema.num_classes() != model.config.num_classes {
            return Err(Error::Invalid(format!(
                "schema has {} classes, model {}",
                schema.num_classes(),
                model.config.num_classes
            )));
        }
        let meta = CheckpointMeta {
            labels: schema.labels().to_vec(),
            best_n: model.num_layers(),
            input_dim: model.config.input_dim,
            hidden_dim: model.config.hidden_dim,
            num_classes: model.config.num_classes,
        };
        Ok(Checkpoint { config, meta, model })
    }

    pub fn schema(&self) -> Result<LabelSchema> {
        LabelSchema::new(self.meta.labels.clone())
    }

    /// Errors unless `schema` lists the same classes in the same order.
    pub fn check_schema(&self, schema: &LabelSchema) -> Result<()> {
        if schema.num_classes() != self.meta.num_classes {
            return Err(Error::Invalid(format!(
                "checkpoint has {} classes but the dataset schema has {}",
                self.meta.num_classes,
                schema.num_classes()
            )));
        }
        if schema.labels() != self.meta.labels.as_slice() {
            return Err(Error::Invalid(format!(
                "checkpoint labels {:?} differ from schema labels {:?}",
                self.meta.labels,
                schema.labels()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut body = Vec::new();
        body.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_block(&mut body, self.config.to_text().as_bytes())?;
        put_block(&mut body, serde_json::to_string(&self.meta)?.as_bytes())?;
        let params = self.model.params();
        body.extend_from_slice(&u32_of(params.len())?.to_le_bytes());
        for t in params {
            body.extend_from_slice(&u32_of(t.rows())?.to_le_bytes());
            body.extend_from_slice(&u32_of(t.cols())?.to_le_bytes());
            for v in t.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&body);
        let mut out = Vec::with_capacity(body.len() + 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format(format!("checkpoint truncated at {} bytes", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"MGC1\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let body = &bytes[4..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Format(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
            )));
        }
        let config_text = std::str::from_utf8(r.block()?)
            .map_err(|_| Error::Format("config block is not UTF-8".into()))?;
        let config = RunConfig::parse(config_text)?;
        let meta: CheckpointMeta = serde_json::from_slice(r.block()?)
            .map_err(|e| Error::Format(format!("bad checkpoint metadata: {e}")))?;
        if meta.labels.len() != meta.num_classes {
            return Err(Error::Format("label list does not match num_classes".into()));
        }
        let model_config = config.model_config(meta.input_dim, meta.num_classes);
        if model_config.hidden_dim != meta.hidden_dim {
            return Err(Error::Format("hidden_dim in config and metadata disagree".into()));
        }
        let mut model = MagicModel::with_rng(model_config, meta.best_n, &mut ChaCha8Rng::seed_from_u64(0))?;
        let count = r.u32()? as usize;
        let expected = model.params().len();
        if count != expected {
            return Err(Error::Format(format!(
                "checkpoint stores {count} tensors, a depth-{} model has {expected}",
                meta.best_n
            )));
        }
        let names = model.param_names();
        for (slot, name) in model.params_mut().into_iter().zip(names) {
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if (rows, cols) != slot.shape() {
                return Err(Error::Format(format!(
                    "{name} stored as {rows}x{cols}, expected {:?}",
                    slot.shape()
                )));
            }
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            *slot = Tensor::new(rows, cols, data)?;
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} unread bytes before checksum", body.len() - r.pos)));
        }
        Ok(Checkpoint { config, meta, model })
    }
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in 32 bits")))
}

fn put_block(out: &mut Vec<u8>, data: &[u8]) -> Result<()> {
    out.extend_from_slice(&u32_of(data.len())?.to_le_bytes());
    out.extend_from_slice(data);
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at offset {}", self.pos + 4)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

pub fn checkpoint_save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = RunConfig::parse("hidden_dim = 8\nheads = 2\nseed = 3\n").unwrap();
        let model = MagicModel::new(cfg.model_config(5, 2), 2).unwrap();
        Checkpoint::new(cfg, &LabelSchema::builtin("fakeddit2").unwrap(), model).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn detects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("MGC1"));
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x01;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("checksum"));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[4..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string().contains("version 9"));
    }

    #[test]
    fn schema_mismatch() {
        let c = sample();
        assert!(c.check_schema(&LabelSchema::builtin("fakeddit2").unwrap()).is_ok());
        assert!(c.check_schema(&LabelSchema::builtin("mfnd").unwrap()).is_err());
    }
}
