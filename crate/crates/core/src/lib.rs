//! Desk-scale machine unlearning.
//!
//! A tiny character-level language model with exact gradients, the GA,
//! GradDiff, PO and NPO unlearning objectives, first-order (AdamW) and
//! clipped second-order (Sophia) optimizers driven in ascent/descent mode,
//! one-shot influence unlearning with an exact-retrain oracle, and the
//! evaluation suite (KS forget quality, truth ratios, Min-k% MIA AUC,
//! Rouge-L, BLEU, perplexity).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod influence;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
pub use model::{Arch, ModelConfig, ReferenceModel, Sample, TinyLM, TokenSequence};
pub use numerics::{ParamVector, Seed, Stream};
