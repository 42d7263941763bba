//! Replay-free continual learning for named-entity sequence labeling.
//!
//! The crate trains a compact cosine-prototype tagger over a sequence of
//! class-incremental steps. At each step the model learns a new batch of
//! entity types from a data slice annotated only with those types, while
//! old knowledge is preserved by distilling colliding effects from the
//! frozen previous-step model: every anchor token's prediction is averaged
//! with the predictions of its K nearest neighbors in the old feature
//! space before the loss is computed, with gradients flowing only through
//! the anchor.
//!
//! Modules map onto the pipeline:
//! - [`corpus`]: CoNLL I/O, BIO handling, greedy slice partitioning,
//!   label masking, synthetic corpus generation.
//! - [`tagger`]: the trainable encoder + cosine-prototype classifier,
//!   classifier extension across steps, Adam.
//! - [`objective`]: analytic backpropagation shared by every loss kind,
//!   plus finite-difference gradient checking.
//! - [`causal`]: pseudo-annotation of Other-class tokens, old-feature KNN
//!   matching, the two colliding-effect losses, curriculum threshold and
//!   adaptive weight.
//! - [`baselines`]: Finetune-Only, Self-Training and ExtendNER reference
//!   losses.
//! - [`metrics`]: span extraction and micro/macro F1.
//! - [`protocol`]: the per-step train / select / evaluate loop and
//!   cross-seed aggregation.
//! - [`config`] / [`report`] / [`cli`]: experiment configuration, JSONL /
//!   CSV reporting, and the command-line entry points.

pub mod baselines;
pub mod causal;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod objective;
pub mod protocol;
pub mod report;
pub mod tagger;

pub use error::{CfnerError, Result};
