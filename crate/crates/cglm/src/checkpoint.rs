//! Bit-exact checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "CGLM" | u32 version=1 | u32 cfg_len | cfg (UTF-8 key=value lines)
//! u32 tensor_count
//! per tensor: u32 name_len | name | u8 dtype (0=f32, 1=f64) | u8 rank
//!             | u32 dims[rank] | raw little-endian payload
//! ```
//!
//! The config lines carry the model hyperparameters plus the training
//! iteration. Optimizer moments ride along as `opt.m.*` / `opt.v.*`
//! tensors so a run can resume exactly.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::mixers::{ContextOp, MixerKind};
use crate::model::{MlpMode, Model, ModelConfig, ModelError};
use crate::tensor::{Element, Tensor};
use crate::train::AdamState;

const MAGIC: &[u8; 4] = b"CGLM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("file is truncated or has trailing bytes")]
    Corrupt,
    #[error("config line {0:?} is malformed")]
    BadConfigLine(String),
    #[error("config key {0} missing")]
    MissingKey(&'static str),
    #[error("dtype code {got} does not match requested precision (expected {expected})")]
    DtypeMismatch { expected: u8, got: u8 },
    #[error("tensor {name}: shape {got:?} does not match expected {want:?}")]
    ShapeMismatch {
        name: String,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint contains unknown tensor {0}")]
    UnknownTensor(String),
    #[error("checkpoint {field} is {file}, requested config has {requested}")]
    ConfigMismatch {
        field: &'static str,
        file: String,
        requested: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub struct Loaded<E> {
    pub model: Model<E>,
    pub opt: Option<AdamState<E>>,
    pub iteration: u64,
}

fn config_lines(cfg: &ModelConfig, iteration: u64) -> String {
    format!(
        "n_layer={}\nn_head={}\nn_embd={}\nblock_size={}\nvocab_size={}\nmixer={}\nmlp_mode={}\ncontext_op={}\ndropout={}\niteration={}\n",
        cfg.n_layer,
        cfg.n_head,
        cfg.n_embd,
        cfg.block_size,
        cfg.vocab_size,
        cfg.mixer,
        cfg.mlp_mode,
        cfg.context_op,
        cfg.dropout,
        iteration
    )
}

fn parse_config(text: &str) -> Result<(ModelConfig, u64), CheckpointError> {
    let mut map = HashMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::BadConfigLine(line.to_string()))?;
        map.insert(k.to_string(), v.to_string());
    }
    fn get<'a>(
        map: &'a HashMap<String, String>,
        key: &'static str,
    ) -> Result<&'a str, CheckpointError> {
        map.get(key)
            .map(String::as_str)
            .ok_or(CheckpointError::MissingKey(key))
    }
    let bad = |line: &str| CheckpointError::BadConfigLine(line.to_string());
    let cfg = ModelConfig {
        n_layer: get(&map, "n_layer")?.parse().map_err(|_| bad("n_layer"))?,
        n_head: get(&map, "n_head")?.parse().map_err(|_| bad("n_head"))?,
        n_embd: get(&map, "n_embd")?.parse().map_err(|_| bad("n_embd"))?,
        block_size: get(&map, "block_size")?
            .parse()
            .map_err(|_| bad("block_size"))?,
        vocab_size: get(&map, "vocab_size")?
            .parse()
            .map_err(|_| bad("vocab_size"))?,
        mixer: get(&map, "mixer")?
            .parse::<MixerKind>()
            .map_err(|_| bad("mixer"))?,
        mlp_mode: get(&map, "mlp_mode")?
            .parse::<MlpMode>()
            .map_err(|_| bad("mlp_mode"))?,
        context_op: get(&map, "context_op")?
            .parse::<ContextOp>()
            .map_err(|_| bad("context_op"))?,
        dropout: get(&map, "dropout")?.parse().map_err(|_| bad("dropout"))?,
    };
    let iteration = get(&map, "iteration")?
        .parse()
        .map_err(|_| bad("iteration"))?;
    Ok((cfg, iteration))
}

fn write_tensor<E: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<E>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(E::DTYPE_CODE);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Serialize model + optional optimizer state. Byte output is a pure
/// function of the inputs, so save -> load -> save round-trips
/// identically.
pub fn save_checkpoint<E: Element>(
    model: &Model<E>,
    opt: Option<&AdamState<E>>,
    iteration: u64,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_lines(model.config(), iteration);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());

    let n_params = model.params().len() as u32;
    let count = n_params + if opt.is_some() { 2 * n_params } else { 0 };
    out.extend_from_slice(&count.to_le_bytes());
    for p in model.params() {
        write_tensor(&mut out, &p.name, &p.value);
    }
    if let Some(state) = opt {
        for (p, m) in model.params().iter().zip(&state.m) {
            write_tensor(&mut out, &format!("opt.m.{}", p.name), m);
        }
        for (p, v) in model.params().iter().zip(&state.v) {
            write_tensor(&mut out, &format!("opt.v.{}", p.name), v);
        }
    }

    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
}

/// Read a checkpoint back. Every expected tensor must be present with
/// its exact shape; truncated or padded files are rejected.
pub fn load_checkpoint<E: Element>(path: &Path) -> Result<Loaded<E>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text =
        std::str::from_utf8(r.take(cfg_len)?).map_err(|_| CheckpointError::Corrupt)?;
    let (cfg, iteration) = parse_config(cfg_text)?;

    let mut model = Model::<E>::skeleton(&cfg)?;
    let count = r.u32()? as usize;

    let mut tensors: HashMap<String, Tensor<E>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Corrupt)?
            .to_string();
        let dtype = r.u8()?;
        if dtype != E::DTYPE_CODE {
            return Err(CheckpointError::DtypeMismatch {
                expected: E::DTYPE_CODE,
                got: dtype,
            });
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * E::BYTE_WIDTH)?;
        let data: Vec<E> = raw
            .chunks_exact(E::BYTE_WIDTH)
            .map(|c| E::read_le(c))
            .collect();
        let t = Tensor::new(shape, data).map_err(|_| CheckpointError::Corrupt)?;
        tensors.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt);
    }

    for p in model.params_mut() {
        let t = tensors
            .remove(&p.name)
            .ok_or_else(|| CheckpointError::MissingTensor(p.name.clone()))?;
        if t.shape() != p.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: p.name.clone(),
                want: p.value.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        p.value = t;
    }

    let opt = if tensors.keys().any(|k| k.starts_with("opt.")) {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for p in model.params() {
            let take = |tensors: &mut HashMap<String, Tensor<E>>,
                        key: String|
             -> Result<Tensor<E>, CheckpointError> {
                let t = tensors
                    .remove(&key)
                    .ok_or_else(|| CheckpointError::MissingTensor(key.clone()))?;
                if t.shape() != p.value.shape() {
                    return Err(CheckpointError::ShapeMismatch {
                        name: key,
                        want: p.value.shape().to_vec(),
                        got: t.shape().to_vec(),
                    });
                }
                Ok(t)
            };
            m.push(take(&mut tensors, format!("opt.m.{}", p.name))?);
            v.push(take(&mut tensors, format!("opt.v.{}", p.name))?);
        }
        Some(AdamState {
            m,
            v,
            step: iteration,
        })
    } else {
        None
    };

    if let Some(name) = tensors.into_keys().next() {
        return Err(CheckpointError::UnknownTensor(name));
    }

    Ok(Loaded {
        model,
        opt,
        iteration,
    })
}

/// Load and verify the stored config matches `expected` field by field.
pub fn load_checkpoint_expecting<E: Element>(
    path: &Path,
    expected: &ModelConfig,
) -> Result<Loaded<E>, CheckpointError> {
    let loaded = load_checkpoint::<E>(path)?;
    let got = loaded.model.config();
    let check = |field: &'static str, file: String, requested: String| {
        if file != requested {
            Err(CheckpointError::ConfigMismatch {
                field,
                file,
                requested,
            })
        } else {
            Ok(())
        }
    };
    check("mixer", got.mixer.to_string(), expected.mixer.to_string())?;
    check(
        "mlp_mode",
        got.mlp_mode.to_string(),
        expected.mlp_mode.to_string(),
    )?;
    check("n_layer", got.n_layer.to_string(), expected.n_layer.to_string())?;
    check("n_embd", got.n_embd.to_string(), expected.n_embd.to_string())?;
    check(
        "block_size",
        got.block_size.to_string(),
        expected.block_size.to_string(),
    )?;
    check(
        "vocab_size",
        got.vocab_size.to_string(),
        expected.vocab_size.to_string(),
    )?;
    Ok(loaded)
}
