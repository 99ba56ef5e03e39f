//! Multimodal physiological signal pipeline.
//!
//! The crate ingests synchronized EEG/GSR/PPG recordings, reconstructs and
//! denoises each modality, fuses them into a normalized feature matrix,
//! extracts high-attention episodes with sliding-window change-point
//! detection plus windowed Morlet wavelet analysis, and evaluates detection
//! quality with the metric suite in [`metrics`]. A deterministic synthetic
//! session generator ([`synth`]) provides ground truth for every stage.
//!
//! All numeric code is generic over the scalar type via [`float::Float`]
//! (`f32` or `f64`); the `*64` aliases at the crate root fix `f64`, which is
//! what the CLI and the test suites use.

pub mod dsp;
pub mod eda;
pub mod episode;
pub mod metrics;
pub(crate) mod linalg;
pub(crate) mod rngutil;
pub mod error;
pub mod float;
pub mod fusion;
pub mod ica;
pub mod ppg;
pub mod session;

pub use error::{Error, Result};
pub use float::Float;

/// Concrete `f64` aliases for the common types.
pub type ChannelStream64 = session::ChannelStream<f64>;
pub type SessionRecording64 = session::SessionRecording<f64>;
pub type FusedMatrix64 = fusion::FusedMatrix<f64>;
pub type EpisodeSet64 = episode::EpisodeSet<f64>;
pub type IcaModel64 = ica::IcaModel<f64>;
pub type EdaDecomposition64 = eda::EdaDecomposition<f64>;
