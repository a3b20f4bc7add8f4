//! Training engine: AdamW with decoupled decay, global gradient
//! clipping, warmup + cosine learning-rate schedule, periodic evaluation
//! and CSV loss logging. One loop serves every mixer and feed-forward
//! mode; the configuration decides what the model does, not the loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{save_checkpoint, CheckpointError};
use crate::data::{DataError, Split, TokenStore};
use crate::graph::Graph;
use crate::model::{Model, ModelError};
use crate::tensor::{el, Element, Tensor};

pub const ADAM_EPS: f64 = 1e-8;
pub const CLIP_EPS: f64 = 1e-6;

pub const BEST_CHECKPOINT: &str = "ckpt_best.bin";
pub const LAST_CHECKPOINT: &str = "ckpt_last.bin";
pub const LOSS_CSV: &str = "loss.csv";

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub max_iters: u64,
    pub lr: f64,
    pub lr_decay_iters: u64,
    pub warmup_iters: u64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub eval_interval: u64,
    pub eval_iters: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Reproducible-log mode: the ms_per_iter column is written as 0 so
    /// two runs with the same seed produce byte-identical loss.csv.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 5000,
            lr: 1e-3,
            lr_decay_iters: 5000,
            warmup_iters: 100,
            min_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.1,
            grad_clip: 1.0,
            eval_interval: 250,
            eval_iters: 200,
            batch_size: 12,
            seed: 1337,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.warmup_iters >= self.lr_decay_iters {
            return Err(TrainError::Config(
                "warmup_iters must be < lr_decay_iters".into(),
            ));
        }
        if self.min_lr > self.lr {
            return Err(TrainError::Config("min_lr must be <= lr".into()));
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.eval_iters == 0 {
            return Err(TrainError::Config(
                "batch_size, eval_interval and eval_iters must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("gradient for {param} is not finite at iteration {iter}")]
    NonFiniteGradient { param: String, iter: u64 },
    #[error("loss became non-finite at iteration {iter}; last checkpoint kept")]
    NonFiniteLoss { iter: u64 },
    #[error("parameter {0} has no gradient; run backward first")]
    MissingGradient(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Warmup ramp, cosine decay to `min_lr`, flat afterwards.
pub fn lr_at(iter: u64, tc: &TrainConfig) -> f64 {
    if iter < tc.warmup_iters {
        return tc.lr * (iter + 1) as f64 / (tc.warmup_iters + 1) as f64;
    }
    if iter > tc.lr_decay_iters {
        return tc.min_lr;
    }
    let progress =
        (iter - tc.warmup_iters) as f64 / (tc.lr_decay_iters - tc.warmup_iters) as f64;
    tc.min_lr + 0.5 * (tc.lr - tc.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moments per parameter, in parameter order.
pub struct AdamState<E> {
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
    pub step: u64,
}

impl<E: Element> AdamState<E> {
    pub fn new(model: &Model<E>) -> Self {
        AdamState {
            m: model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            v: model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
            step: 0,
        }
    }
}

/// One AdamW update: global L2 clip, decoupled weight decay on the
/// matrix group only, bias-corrected moments.
pub fn adamw_step<E: Element>(
    model: &mut Model<E>,
    state: &mut AdamState<E>,
    lr: f64,
    tc: &TrainConfig,
    iter: u64,
) -> Result<(), TrainError> {
    // global gradient norm, accumulated in f64 in parameter order
    let mut sq_sum = 0.0f64;
    for p in model.params() {
        let g = p
            .grad
            .as_ref()
            .ok_or_else(|| TrainError::MissingGradient(p.name.clone()))?;
        let mut local = 0.0f64;
        for &v in g.data() {
            let v = v.to_f64();
            local += v * v;
        }
        if !local.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                param: p.name.clone(),
                iter,
            });
        }
        sq_sum += local;
    }
    let norm = sq_sum.sqrt();
    let coef = if tc.grad_clip > 0.0 {
        (tc.grad_clip / (norm + CLIP_EPS)).min(1.0)
    } else {
        1.0
    };

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - tc.beta1.powi(t);
    let bias2 = 1.0 - tc.beta2.powi(t);

    let coef_e = el::<E>(coef);
    let beta1 = el::<E>(tc.beta1);
    let beta2 = el::<E>(tc.beta2);
    let one_m_beta1 = el::<E>(1.0 - tc.beta1);
    let one_m_beta2 = el::<E>(1.0 - tc.beta2);
    let inv_bias1 = el::<E>(1.0 / bias1);
    let inv_bias2 = el::<E>(1.0 / bias2);
    let lr_e = el::<E>(lr);
    let eps = el::<E>(ADAM_EPS);
    let decay_mult = el::<E>(1.0 - lr * tc.weight_decay);

    for (i, p) in model.params_mut().iter_mut().enumerate() {
        let g = p.grad.as_ref().expect("checked above");
        let decayed = p.is_decayed();
        let pv = p.value.data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..pv.len() {
            let grad = g.data()[j] * coef_e;
            if decayed {
                pv[j] = pv[j] * decay_mult;
            }
            m[j] = beta1 * m[j] + one_m_beta1 * grad;
            v[j] = beta2 * v[j] + one_m_beta2 * grad * grad;
            let m_hat = m[j] * inv_bias1;
            let v_hat = v[j] * inv_bias2;
            pv[j] = pv[j] - lr_e * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitLosses {
    pub train: f64,
    pub val: f64,
}

/// Mean cross-entropy over `eval_iters` freshly sampled batches per
/// split. The model is not modified.
pub fn estimate_loss<E: Element>(
    model: &Model<E>,
    store: &TokenStore,
    tc: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SplitLosses, TrainError> {
    let block = model.config().block_size;
    let mut out = [0.0f64; 2];
    for (slot, split) in [Split::Train, Split::Val].into_iter().enumerate() {
        let mut acc = 0.0f64;
        for _ in 0..tc.eval_iters {
            let (x, y) = store.sample_batch(split, block, tc.batch_size, rng)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g, false);
            let loss = model.loss(&mut g, &bound, &x, &y, tc.batch_size, block)?;
            acc += g.scalar(loss).to_f64();
        }
        out[slot] = acc / tc.eval_iters as f64;
    }
    Ok(SplitLosses {
        train: out[0],
        val: out[1],
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: u64,
    pub split: Split,
    pub loss: f64,
    pub lr: f64,
    pub ms_per_iter: f64,
}

/// In-memory mirror of loss.csv.
#[derive(Clone, Debug, Default)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    pub fn csv_header() -> &'static str {
        "iter,split,loss,lr,ms_per_iter"
    }

    pub fn csv_line(r: &LossRecord) -> String {
        format!(
            "{},{},{},{},{}",
            r.iter, r.split, r.loss, r.lr, r.ms_per_iter
        )
    }

    pub fn last_val(&self) -> Option<f64> {
        self.records
            .iter()
            .rev()
            .find(|r| r.split == Split::Val)
            .map(|r| r.loss)
    }
}

pub struct TrainReport {
    pub log: LossLog,
    pub final_val: f64,
    pub best_val: f64,
    pub best_iter: u64,
    pub out_dir: PathBuf,
}

/// Run the training loop: sample, forward, loss, backward, clip, step at
/// the scheduled rate; evaluate and checkpoint every `eval_interval`
/// iterations and at the end. The lowest-validation model lands in
/// `ckpt_best.bin`, the newest in `ckpt_last.bin`.
pub fn train<E: Element>(
    model: &mut Model<E>,
    store: &TokenStore,
    tc: &TrainConfig,
    out_dir: &Path,
    progress: bool,
) -> Result<TrainReport, TrainError> {
    train_from(model, &mut AdamState::new(model), 0, store, tc, out_dir, progress)
}

/// [`train`] continued from a checkpointed iteration. The batch stream
/// is replayed up to `start_iter` so a resumed run consumes exactly the
/// batches the uninterrupted run would have.
pub fn train_from<E: Element>(
    model: &mut Model<E>,
    opt: &mut AdamState<E>,
    start_iter: u64,
    store: &TokenStore,
    tc: &TrainConfig,
    out_dir: &Path,
    progress: bool,
) -> Result<TrainReport, TrainError> {
    tc.validate()?;
    let block = model.config().block_size;
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(LOSS_CSV);
    let mut csv = fs::File::create(&csv_path)?;
    writeln!(csv, "{}", LossLog::csv_header())?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    for _ in 0..start_iter {
        // replay the sampling stream without training
        let _ = store.sample_batch(Split::Train, block, tc.batch_size, &mut data_rng)?;
    }

    let mut log = LossLog::default();
    let mut best_val = f64::INFINITY;
    let mut best_iter = 0;
    let mut timer = Instant::now();
    let mut iters_since_eval = 0u64;

    let mut iter = start_iter;
    loop {
        let at_eval = iter % tc.eval_interval == 0 || iter == tc.max_iters;
        if at_eval {
            let ms = if tc.deterministic || iters_since_eval == 0 {
                0.0
            } else {
                timer.elapsed().as_secs_f64() * 1000.0 / iters_since_eval as f64
            };
            let mut eval_rng =
                ChaCha8Rng::seed_from_u64(tc.seed ^ (iter.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let losses = estimate_loss(model, store, tc, &mut eval_rng)?;
            let lr = lr_at(iter, tc);
            for (split, loss) in [(Split::Train, losses.train), (Split::Val, losses.val)] {
                let rec = LossRecord {
                    iter,
                    split,
                    loss,
                    lr,
                    ms_per_iter: ms,
                };
                writeln!(csv, "{}", LossLog::csv_line(&rec))?;
                log.records.push(rec);
            }
            csv.flush()?;
            if progress {
                println!(
                    "iter={} train={:.4} val={:.4} lr={:.3e} ms={:.1}",
                    iter, losses.train, losses.val, lr, ms
                );
            }
            if losses.val < best_val {
                best_val = losses.val;
                best_iter = iter;
                save_checkpoint(model, Some(opt), iter, &out_dir.join(BEST_CHECKPOINT))?;
            }
            save_checkpoint(model, Some(opt), iter, &out_dir.join(LAST_CHECKPOINT))?;
            timer = Instant::now();
            iters_since_eval = 0;
        }
        if iter >= tc.max_iters {
            break;
        }

        let (x, y) = store.sample_batch(Split::Train, block, tc.batch_size, &mut data_rng)?;
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let loss = model.loss(&mut g, &bound, &x, &y, tc.batch_size, block)?;
        if !g.scalar(loss).is_finite() {
            return Err(TrainError::NonFiniteLoss { iter });
        }
        g.backward(loss)?;
        model.absorb_grads(&g, &bound);
        drop(g);
        adamw_step(model, opt, lr_at(iter, tc), tc, iter)?;

        iter += 1;
        iters_since_eval += 1;
    }

    let final_val = log.last_val().unwrap_or(f64::INFINITY);
    Ok(TrainReport {
        log,
        final_val,
        best_val,
        best_iter,
        out_dir: out_dir.to_path_buf(),
    })
}
