//! Student graduation prediction from raw time-stamped event logs.
//!
//! The pipeline runs end to end in this crate:
//!
//! - [`events`]: data model and ingestion for per-student event logs,
//!   plus week-level truncation.
//! - [`encoding`]: ordinal action ids, day-granularity time-delta buckets,
//!   sequence pre-padding and batching.
//! - [`nncore`]: a minimal differentiable layer stack (embedding, LSTM,
//!   bidirectional wrapper, global max pooling, FC + sigmoid + BCE) with
//!   hand-written reverse-mode gradients, RMSProp, parameter freezing and
//!   checkpoint I/O.
//! - [`gritnet`]: the composed sequence classifier and its training loop.
//! - [`adapt`]: unsupervised domain adaptation by pseudo-labeling a target
//!   course and fine-tuning only the final FC layer.
//! - [`baseline`]: count-feature logistic regression comparison arm.
//! - [`eval`]: ROC/AUC, AUC recovery rate, stratified k-fold splits and
//!   week-indexed reports.
//! - [`synth`]: seeded synthetic course generator with controllable
//!   distribution shift between a source and a target course.
//! - [`experiment`]: the four-setup, week-by-week benchmark orchestrator.

pub mod adapt;
pub mod baseline;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod events;
pub mod experiment;
pub mod gritnet;
pub mod nncore;
pub mod synth;

pub use error::{Error, Result};
