//! A character-level GPT-style decoder whose sequence-mixing stage is
//! pluggable: standard causal multi-head attention or parameter-free
//! causal generative functions (pairwise max/min/mean with the previous
//! token, with an optional prefix-mean context vector), plus the same
//! functions as feed-forward activations.
//!
//! The numeric stack is self-contained: dense tensors, a tape-based
//! reverse-mode autodiff, AdamW with warmup+cosine decay, checkpointing,
//! op-count models and a scaling benchmark harness.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod graph;
pub mod linalg;
pub mod mixers;
pub mod model;
pub mod plot;
pub mod tensor;
pub mod train;

pub use graph::{grad_check, Graph, GraphError, VarId};
pub use mixers::{AttentionParams, ContextOp, MixerKind, OpCounter, PairOp};
pub use tensor::{Element, Tensor};
