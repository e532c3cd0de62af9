//! Checkpoint files.
//!
//! Layout: magic `TSMCKPT1`, `u32` format version, `u32` header length, the
//! JSON header, then named tensor blobs. Each blob is a `u32` name length,
//! the UTF-8 name, a `u32` rank, `rank` `u32` extents and the `f32` values.
//! All integers and floats are little-endian. Parameters come first in model
//! order, followed by optimizer velocities named `velocity/<param>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSMCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

/// Where the training RNG streams resume: every epoch reseeds from
/// `(seed, epoch)`, so the pair fully describes the generator state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    train_config_digest: String,
    epoch: usize,
    rng: RngState,
    tensors: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config_digest: String,
    pub epoch: usize,
    pub rng: RngState,
    pub params: Vec<(String, Tensor<f32>)>,
    /// Momentum buffers aligned with `params`; empty when not stored.
    pub velocity: Vec<Tensor<f32>>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model<f32>,
        velocity: Vec<Tensor<f32>>,
        train_config_digest: String,
        epoch: usize,
        rng: RngState,
    ) -> Self {
        Checkpoint {
            model_config: model.config().clone(),
            train_config_digest,
            epoch,
            rng,
            params: model
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            velocity,
        }
    }

    /// Rebuilds the model and loads the stored parameters into it.
    pub fn model(&self) -> Result<Model<f32>> {
        let mut model = build_model::<f32>(&self.model_config, 0)?;
        model.params_mut().load(self.params.clone())?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            model: self.model_config.clone(),
            train_config_digest: self.train_config_digest.clone(),
            epoch: self.epoch,
            rng: self.rng,
            tensors: self.params.len() + self.velocity.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let velocity_names = self
            .params
            .iter()
            .map(|(n, _)| format!("{VELOCITY_PREFIX}{n}"));
        let blobs = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t))
            .chain(velocity_names.zip(&self.velocity));
        for (name, t) in blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "missing TSMCKPT1 magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::format(path, format!("header: {e}")))?;
        let mut params = Vec::new();
        let mut velocity = Vec::new();
        for _ in 0..header.tensors {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let values = r
                .take(4 * count)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::from_vec(&shape, values)?;
            if name.starts_with(VELOCITY_PREFIX) {
                velocity.push(tensor);
            } else {
                params.push((name, tensor));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last tensor"));
        }
        if !velocity.is_empty() && velocity.len() != params.len() {
            return Err(Error::format(
                path,
                "velocity buffers do not match parameters",
            ));
        }
        Ok(Checkpoint {
            model_config: header.model,
            train_config_digest: header.train_config_digest,
            epoch: header.epoch,
            rng: header.rng,
            params,
            velocity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
