//! Phrase-patch grounding losses and a counterfactual region-removal
//! protocol for text-to-image person retrieval.
//!
//! * [`diffmath`]: dense matrices and differentiable primitives with
//!   exact backward passes and a finite-difference checker.
//! * [`ppim`]: phrase-to-patch similarity, soft assignment, region
//!   aggregation, coverage and per-phrase contrastive losses.
//! * [`cfeval`]: relevance maps, two-stage `(α, p)` masks, gallery
//!   perturbation, single-cell similarity update and retrieval metrics.
//! * [`toyworld`]: a synthetic grounded dataset, trainable toy encoders
//!   and a deterministic training loop.
//! * [`iocli`]: on-disk formats, phrase-annotation ingestion, report
//!   emission and the command-line front end.

pub mod cfeval;
pub mod diffmath;
pub mod error;
pub mod iocli;
pub mod ppim;
pub mod toyworld;

pub use error::{Error, Result};
