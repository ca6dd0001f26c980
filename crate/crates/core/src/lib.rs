//! Audio-visual event localization over pre-extracted feature sequences.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors with a reverse-mode gradient tape.
//! - [`nn`]: parameter storage, dense layers and the Adam optimizer.
//! - [`data`]: feature sequences, the AVEF file format, synthetic corpora,
//!   pair sampling and stratified splits.
//! - [`attention`]: guided spatial attention (audio-guided visual,
//!   visual-guided audio, co-attention).
//! - [`temporal`]: single-layer LSTM sequence modelling.
//! - [`fusion`]: audio-visual fusion operators and their placements.
//! - [`localizer`]: supervised and weakly-supervised event localization.
//! - [`crossmod`]: distance learning and sliding-window cross-modality
//!   localization.

pub mod attention;
pub mod crossmod;
pub mod data;
pub mod error;
pub mod fusion;
pub mod localizer;
pub mod nn;
pub mod temporal;
pub mod tensor;

pub use error::{Error, Result};
