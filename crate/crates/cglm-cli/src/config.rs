//! Run configuration: `key = value` files with `#` comments, overridable
//! from the command line. Unknown keys are hard errors so a typo like
//! `mixr` cannot silently fall back to a default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cglm::mixers::{ContextOp, MixerKind};
use cglm::model::{MlpMode, ModelConfig};
use cglm::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Everything one training run needs: model shape, optimizer schedule,
/// paths and mode flags. `vocab_size` is not a key; it comes from the
/// prepared corpus at train time.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    pub block_size: usize,
    pub mixer: MixerKind,
    pub mlp_mode: MlpMode,
    pub context_op: ContextOp,
    pub dropout: f64,
    pub train: TrainConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub deterministic: bool,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_layer: 4,
            n_head: 4,
            n_embd: 128,
            block_size: 64,
            mixer: MixerKind::Attention,
            mlp_mode: MlpMode::Gelu,
            context_op: ContextOp::Min,
            dropout: 0.0,
            train: TrainConfig::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/run"),
            deterministic: false,
            precision: Precision::F32,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layer: self.n_layer,
            n_head: self.n_head,
            n_embd: self.n_embd,
            block_size: self.block_size,
            vocab_size,
            mixer: self.mixer,
            mlp_mode: self.mlp_mode,
            context_op: self.context_op,
            dropout: self.dropout,
        }
    }

    fn apply(&mut self, key: &str, value: &str, at: &str) -> Result<()> {
        let err = |what: &str| anyhow!("{at}: {what} for key `{key}` (got `{value}`)");
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|_| err(concat!("expected ", stringify!($ty))))?
            };
        }
        match key {
            "n_layer" => self.n_layer = parse!(usize),
            "n_head" => self.n_head = parse!(usize),
            "n_embd" => self.n_embd = parse!(usize),
            "block_size" => self.block_size = parse!(usize),
            "mixer" => self.mixer = value.parse().map_err(|_| err("unknown mixer"))?,
            "mlp_mode" => self.mlp_mode = value.parse().map_err(|_| err("unknown mlp_mode"))?,
            "context_op" => {
                self.context_op = value.parse().map_err(|_| err("expected max or min"))?
            }
            "dropout" => self.dropout = parse!(f64),
            "max_iters" => self.train.max_iters = parse!(u64),
            "lr" => self.train.lr = parse!(f64),
            "lr_decay_iters" => self.train.lr_decay_iters = parse!(u64),
            "warmup_iters" => self.train.warmup_iters = parse!(u64),
            "min_lr" => self.train.min_lr = parse!(f64),
            "beta1" => self.train.beta1 = parse!(f64),
            "beta2" => self.train.beta2 = parse!(f64),
            "weight_decay" => self.train.weight_decay = parse!(f64),
            "grad_clip" => self.train.grad_clip = parse!(f64),
            "eval_interval" => self.train.eval_interval = parse!(u64),
            "eval_iters" => self.train.eval_iters = parse!(u64),
            "batch_size" => self.train.batch_size = parse!(usize),
            "seed" => self.train.seed = parse!(u64),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "deterministic" => {
                self.deterministic = parse!(bool);
                self.train.deterministic = self.deterministic;
            }
            "precision" => {
                self.precision = match value {
                    "32" => Precision::F32,
                    "64" => Precision::F64,
                    _ => bail!("{at}: precision must be 32 or 64 (got `{value}`)"),
                }
            }
            _ => bail!("{at}: unknown key `{key}`"),
        }
        Ok(())
    }

    /// Cross-field invariants, checked after all overrides are applied.
    pub fn validate(&self) -> Result<()> {
        if self.train.warmup_iters >= self.train.lr_decay_iters {
            bail!("warmup_iters must be < lr_decay_iters");
        }
        if self.train.min_lr > self.train.lr {
            bail!("min_lr must be <= lr");
        }
        if self.mixer == MixerKind::Attention
            && (self.n_head == 0 || self.n_embd % self.n_head != 0)
        {
            bail!(
                "n_embd {} is not divisible by n_head {}",
                self.n_embd,
                self.n_head
            );
        }
        Ok(())
    }

    /// Canonical `key = value` rendering, written to the run directory
    /// as resolved.cfg.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let t = &self.train;
        let _ = write!(
            s,
            "n_layer = {}\nn_head = {}\nn_embd = {}\nblock_size = {}\nmixer = {}\nmlp_mode = {}\ncontext_op = {}\ndropout = {}\n\
             max_iters = {}\nlr = {}\nlr_decay_iters = {}\nwarmup_iters = {}\nmin_lr = {}\nbeta1 = {}\nbeta2 = {}\nweight_decay = {}\ngrad_clip = {}\neval_interval = {}\neval_iters = {}\nbatch_size = {}\nseed = {}\n\
             data_dir = {}\nout_dir = {}\ndeterministic = {}\nprecision = {}\n",
            self.n_layer,
            self.n_head,
            self.n_embd,
            self.block_size,
            self.mixer,
            self.mlp_mode,
            self.context_op,
            self.dropout,
            t.max_iters,
            t.lr,
            t.lr_decay_iters,
            t.warmup_iters,
            t.min_lr,
            t.beta1,
            t.beta2,
            t.weight_decay,
            t.grad_clip,
            t.eval_interval,
            t.eval_iters,
            t.batch_size,
            t.seed,
            self.data_dir.display(),
            self.out_dir.display(),
            self.deterministic,
            match self.precision {
                Precision::F32 => "32",
                Precision::F64 => "64",
            },
        );
        s
    }
}

/// Parse a config file, then apply `--set key=value` overrides in order.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut cfg = RunConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = format!("{}:{}", path.display(), lineno + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{at}: expected `key = value`, got {line:?}"))?;
        cfg.apply(key.trim(), value.trim(), &at)?;
    }
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for (i, pair) in overrides.iter().enumerate() {
        let at = format!("--set #{}", i + 1);
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("{at}: expected key=value, got {pair:?}"))?;
        cfg.apply(key.trim(), value.trim(), &at)?;
    }
    Ok(())
}
