//! EEG-guided target speaker extraction.
//!
//! Given a two-talker mixture and the listener's EEG, the model estimates the
//! attended talker's waveform. The pieces:
//!
//! - [`datasets`]: pseudo-EEG corpus synthesis, segmentation, manifests and
//!   WAV / raw EEG I/O.
//! - [`eeg_encoder`]: residual temporal blocks and Chebyshev graph
//!   convolutions over the electrode graph.
//! - [`speech_encoder`]: multi-scale convolutional encoder followed by
//!   cross-scan selective state-space blocks with channel attention.
//! - [`alignment`]: projection of both streams onto a common grid and the
//!   contrastive alignment loss.
//! - [`extractor`]: cross-modal attention fusion, dual-path recurrent mask
//!   estimation and the waveform decoder.
//! - [`objectives`] and [`metrics`]: SI-SDR / InfoNCE training objective,
//!   SDR, STOI and ESTOI.
//! - [`training`], [`evaluation`], [`ablation`]: optimizer, checkpoints,
//!   corpus scoring and variant sweeps.
//!
//! Everything runs on a small reverse-mode autodiff engine ([`autograd`])
//! over `f64` ndarray tensors.

pub mod ablation;
pub mod alignment;
pub mod autograd;
pub mod config;
pub mod datasets;
pub mod eeg_encoder;
pub mod error;
pub mod evaluation;
pub mod extractor;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod params;
pub mod scan;
pub mod speech_encoder;
pub mod testing;
pub mod training;

pub use config::ModelConfig;
pub use error::{Error, Result};
