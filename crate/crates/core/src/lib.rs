//! Uplink throughput prediction for 5G standalone networks.
//!
//! - [`tensor`]: tensors, reverse-mode autodiff, Adam, gradient checking
//! - [`phy`]: NR-ARFCN raster and maximum uplink rate
//! - [`data`]: telemetry traces, CSV, features, windows
//! - [`synth`]: seeded synthetic trace generator
//! - [`models`]: ConvLSTM, LSTM, CNN-LSTM and Transformer predictors
//! - [`train`], [`eval`], [`checkpoint`]: training, metrics, persistence

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod phy;
pub mod synth;
pub mod tensor;
pub mod train;

pub use data::{FeatureSet, Normalizer, Trace, WindowedDataset};
pub use error::{Error, Result};
pub use eval::{EvalReport, Split, TraceMetrics};
pub use models::{ArchConfig, Model, ModelKind, ModelSpec, TrainedModel};
pub use phy::{BandClass, Duplex, UlLinkConfig};
pub use synth::{Preset, Scenario};
pub use tensor::{Graph, Tensor, Var};
pub use train::TrainConfig;
