//! Fully convolutional data description (FCDD) for image anomaly detection:
//! a small from-scratch FCN trained with the pseudo-Huber objective, anomaly
//! scores with optional hazard weights, Gaussian receptive-field heatmaps,
//! evaluation and the end-to-end pipeline.
//!
//! Numerical code is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the common 64-bit instantiation.

// `!(x >= 0)` rejects NaN as well; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backbone;
pub mod data;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod numerics;
pub mod objective;
pub mod pipeline;
pub mod scalar;

pub use backbone::{Backbone, BackboneSpec, FieldGeometry, LayerSpec};
pub use data::{DatasetManifest, Record, Split, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::{CalibrationRule, MetricsReport};
pub use heatmap::{DisplayRange, Heatmap, UpsampleMode};
pub use numerics::{AdamConfig, AdamState, Checkpoint, Dims, Tensor4};
pub use objective::{AnomalyMap, LabeledBatch, ScoreReduction};
pub use scalar::Scalar;

pub type Tensor = Tensor4<f64>;
pub type Tensor32 = Tensor4<f32>;
pub type Backbone64 = Backbone<f64>;
pub type Backbone32 = Backbone<f32>;
pub type Map = AnomalyMap<f64>;
pub type Map32 = AnomalyMap<f32>;
pub type Heatmap64 = Heatmap<f64>;
