//! melforge: phoneme-to-mel speech synthesis with explicit prosody modeling.
//!
//! A self-contained, CPU-only implementation of a non-autoregressive
//! acoustic model that predicts mel-spectrograms from phoneme sequences and
//! injects duration, pitch and energy information through a variance
//! adaptor. Everything is built from first principles on a small
//! reverse-mode autodiff core: the signal-processing front end (STFT, mel
//! filterbank, F0 estimation, wavelet pitch decomposition), the feed-forward
//! Transformer network, teacher-forced training, and the objective prosody
//! metrics used to evaluate it.
//!
//! See the book under `book/` for a guided tour; its code snippets are
//! compiled and run as doctests.

pub mod align;
pub mod config;
pub mod data;
pub mod demo;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod sections;
pub mod train;
pub mod tensor;
pub mod vocab;

pub(crate) mod util;

pub use error::{Error, Result};

// The book's code blocks run as doctests so the guide can't drift from the
// library. Compiled only under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors-and-autodiff.md")]
    mod tensors_and_autodiff {}
    #[doc = include_str!("../../../book/src/signal-processing.md")]
    mod signal_processing {}
    #[doc = include_str!("../../../book/src/pitch-and-wavelets.md")]
    mod pitch_and_wavelets {}
    #[doc = include_str!("../../../book/src/alignments-and-durations.md")]
    mod alignments_and_durations {}
    #[doc = include_str!("../../../book/src/acoustic-model.md")]
    mod acoustic_model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
