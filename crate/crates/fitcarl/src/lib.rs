//! Few-shot link prediction over temporal knowledge graphs.
//!
//! The library trains a reinforcement-learning agent that answers link
//! prediction queries about entities unseen during background training. An
//! agent starts at the query entity and walks the graph for a fixed number of
//! hops; a time-aware transformer encodes each unseen entity from its few
//! support facts, and a confidence-weighted policy scores the outgoing edges
//! at every hop. Taxonomy concepts attached to entities regularize the policy
//! towards plausible answer types.
//!
//! Modules are layered bottom-up:
//!
//! * [`tensor`] - minimal reverse-mode autodiff engine and the Adam optimizer
//! * [`store`] - quadruple store, vocabularies, concept tables
//! * [`episodes`] - out-of-graph splits, episodic task sampling
//! * [`pretrain`] - bilinear complex-valued embedding pretraining
//! * [`encoder`] - time encoding and the entity encoder
//! * [`policy`] - search states, action sampling, policy and confidence scores
//! * [`model`] - parameter registry and the per-episode computation graph
//! * [`search`] - policy rollouts and beam search over the task graph
//! * [`train`] - episodic training loop and loss
//! * [`eval`] - filtered ranking metrics and explanation traces
//! * [`synth`] - synthetic dataset generator for desk-scale experiments

pub mod binio;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod episodes;
pub mod eval;
pub mod model;
pub mod policy;
pub mod pretrain;
pub mod search;
pub mod store;
pub mod synth;
pub mod tensor;
pub mod train;

use std::path::PathBuf;

/// Crate-wide error type. Variants distinguish user-input problems
/// (bad files, bad configuration) from runtime failures so callers
/// can map them to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("unknown {kind} name '{name}' in {context}")]
    UnknownName {
        kind: &'static str,
        name: String,
        context: String,
    },
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from user input (missing or malformed
    /// files, bad flags) rather than an internal failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::UnknownName { .. }
            | Error::Invariant(_)
            | Error::Config(_)
            | Error::Format { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Runtime(_) => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
