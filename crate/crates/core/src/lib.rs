//! Configuration-aware low-rank adapters for mixed-precision NormalFloat
//! quantization: the quantizer, the configuration space, a small network
//! substrate with adapters and a configuration hypernetwork, and a
//! surrogate-guided Pareto search over training configurations.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::excessive_precision)]

pub mod autodiff;
pub mod error;
pub mod linalg;
pub mod nfquant;
pub mod pareto;
pub mod qconfig;
pub mod scalar;
pub mod search;
pub mod surrogate;
pub mod tinynet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat64 = linalg::Mat<f64>;
pub type Mat32 = linalg::Mat<f32>;
pub type QuantizedTensor64 = nfquant::QuantizedTensor<f64>;
pub type QuantizedTensor32 = nfquant::QuantizedTensor<f32>;
pub type GpModel64 = surrogate::GpModel<f64>;
pub type GpModel32 = surrogate::GpModel<f32>;
pub type EmbeddingTables64 = qconfig::EmbeddingTables<f64>;
