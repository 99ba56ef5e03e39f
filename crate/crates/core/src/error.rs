//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the pipeline library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    Csv {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("empty session: manifest declares no channels")]
    EmptySession,

    #[error("duplicate channel name {0:?}")]
    DuplicateChannel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("device {device:?} is missing a {which} marker")]
    MissingMarker { device: String, which: &'static str },

    #[error("empty common interval: latest start {start_s} >= earliest end {end_s}")]
    EmptyInterval { start_s: f64, end_s: f64 },

    #[error("invalid filter spec: {0}")]
    FilterSpec(String),

    #[error("unstable filter design: {0}")]
    UnstableDesign(String),

    #[error("input too short: need more than {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("non-integer decimation factor: {org_fs} Hz -> {target_fs} Hz")]
    NonIntegerFactor { org_fs: f64, target_fs: f64 },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("rank-deficient input: {0}")]
    RankDeficient(String),

    #[error("rejection criterion removed every component")]
    RejectAll,

    #[error("zero-norm vector passed to cosine similarity")]
    ZeroNorm,

    #[error("missing modality {0} in fusion input")]
    MissingModality(String),

    #[error("mismatched stream durations after alignment: {0}")]
    DurationMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no annotations available for evaluation")]
    NoAnnotations,

    #[error("infeasible event schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    /// True when the error is a usage/input problem (CLI exit code 2) rather
    /// than a computational failure (exit code 1).
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::UnstableDesign(_)
                | Error::NonConvergence(_)
                | Error::RankDeficient(_)
                | Error::RejectAll
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
