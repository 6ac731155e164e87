//! Region-to-attribute saliency networks for zero-shot learning, on
//! precomputed feature maps.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for common use.

pub mod attribute_constraint;
pub mod cosine_classifier;
pub mod dataset;
pub mod echo;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod region_mapping;
pub mod scalar;
pub mod synthetic_bench;
pub mod tensor;
pub mod tensor_ops;
pub mod trainer;

pub use cosine_classifier::{ClassId, ClassifierConfig, GzslMetrics, ScoreRule, SemanticTable};
pub use dataset::{Dataset, Sample, Split};
pub use echo::ConfigEcho;
pub use error::{Result, RsanError};
pub use scalar::Scalar;
pub use synthetic_bench::{BenchSpec, Benchmark};
pub use tensor::Tensor;
pub use trainer::{AblationFlags, Checkpoint, RsanModel, TrainConfig, Trainer};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Model64 = RsanModel<f64>;
pub type Model32 = RsanModel<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Checkpoint64 = Checkpoint<f64>;
pub type Table64 = SemanticTable<f64>;
