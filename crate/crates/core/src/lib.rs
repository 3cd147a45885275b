//! Incremental learning for cross-sectional forecasting under distribution
//! shift, with a meta-learned data adapter and model adapter.
//!
//! The numeric core ([`engine`], [`models`], [`adapter`], [`model_adapter`],
//! [`meta`]) is generic over the scalar type; the data pipeline and reports
//! use `f64`, and the aliases below name the concrete instantiations.

pub mod adapter;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod meta;
pub mod model_adapter;
pub mod models;
pub mod pipeline;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor = engine::Tensor<f64>;
pub type ParamSet = engine::ParamSet<f64>;
pub type AdamState = engine::AdamState<f64>;
pub type DataAdapter = adapter::DataAdapter<f64>;
pub type ModelAdapter = model_adapter::ModelAdapter<f64>;

pub type Tensor32 = engine::Tensor<f32>;
pub type ParamSet32 = engine::ParamSet<f32>;
pub type DataAdapter32 = adapter::DataAdapter<f32>;
