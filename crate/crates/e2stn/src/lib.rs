//! Emotional EEG style transfer network for cross-dataset emotion recognition.
//!
//! The crate implements the full pipeline: a self-contained reverse-mode
//! autodiff engine ([`tensor`]), domain-specific attention encoders with a
//! cross-attention transfer decoder ([`transfer`]), frozen-convolution
//! transfer-evaluation losses ([`transfer_eval`]), a dynamic-graph Chebyshev
//! classifier ([`classifier`]), joint training ([`training`]), dataset
//! containers plus a synthetic two-domain benchmark ([`data`]), and the
//! evaluation/reporting layer ([`metrics`], [`stats`], [`report`]).

#![allow(clippy::needless_range_loop)]

pub mod array;
pub mod benchmark;
pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod params;
pub mod report;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod training;
pub mod transfer;
pub mod transfer_eval;

pub use array::{Array, ParamStore};
pub use config::{ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{ConvKind, Graph, Tensor};
