//! Region-aware RGB-D spatial VQA at desk scale.
//!
//! The crate provides everything needed to train and evaluate a small
//! encoder-decoder VQA model over synthetic warehouse scenes: a tape-based
//! f64 autodiff engine, RLE mask handling, dual-modality toy feature
//! encoders with an on-disk cache, region injection and cross-attention
//! fusion, a distance-gated sparse Mixture-of-Experts layer, a two-phase
//! training curriculum, and a deterministic scene/question generator with
//! geometrically exact answers.

pub mod data;
pub mod error;
pub mod eval;
pub mod extract;
pub mod features;
pub mod fsutil;
pub mod fusion;
pub mod masks;
pub mod model;
pub mod moe;
pub mod parallel;
pub mod seq2seq;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
