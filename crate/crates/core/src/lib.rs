//! Graph-learning engine for joint remoteness prediction and missing-feature
//! restoration on bipartite member-job graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: immutable bipartite graph with multi-channel features, masks and splits.
//! - [`synth`]: synthetic graph generator with planted cluster/label structure.
//! - [`diff`]: dense f64 kernel with a recorded-operation tape, Adam and gradient checking.
//! - [`restore`]: learnable per-edge, per-channel, per-direction feature restoration.
//! - [`encoders`]: type-specific projections plus MLP, GCN, GraphSAGE-mean and GAT encoders.
//! - [`trainer`]: decoder head, joint loss, mini-batch training, checkpoints.
//! - [`eval`]: metrics, robustness sweeps, restoration evaluation and embedding export.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod diff;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod graph;
pub mod par;
pub mod restore;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
