//! Experiment kit for multilingual multimodal news classification.
//!
//! The pipeline runs four feature pathways per article: native-script
//! text plus its English translation, two image encoders, a joint
//! text-image encoder, and a generated image caption. Per-pathway
//! projections are fused by concatenation and classified by a small
//! trained head; everything upstream of the head is frozen.
//!
//! Encoder backends are pluggable. The built-in `stub` backend is a
//! deterministic hash-based stand-in that keeps the whole pipeline
//! hermetic and bit-reproducible, so the interesting parts (dataset
//! handling, fusion, training, ablations, reporting) are testable
//! without model weights.

pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod imageproc;
pub mod parallel;
pub mod plot;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
