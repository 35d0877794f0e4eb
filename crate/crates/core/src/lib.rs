//! Noise-robust personalized speech synthesis on mel spectrograms.
//!
//! A speech-enhancement model predicts per-bin denoise masks (clean energy
//! over total energy); a Tacotron-style synthesizer is conditioned on a
//! speaker embedding in its encoder and on the normalized mask in its
//! Post-Net, so that adapting on noisy speech and then conditioning on the
//! all-ones clean mask yields clean speech for a new voice.

pub mod dsp;
pub mod enhancer;
pub mod error;
pub mod grid;
mod init;
pub mod maskkit;
pub mod pipeline;
pub mod speaker;
pub mod training;
pub mod ttscore;

pub use error::{Error, Result};
pub use grid::Grid;
