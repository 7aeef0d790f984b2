//! Event causality identification via in-context cloze prompting with a
//! supervised contrastive loss over event-pair offset vectors.
//!
//! Pipeline: [`corpus`] parses the annotated corpora into a normalized
//! document model and plans cross-validation folds; [`prompt`] renders
//! queries and labeled demonstrations into a single cloze input; [`encoder`]
//! abstracts the masked language model (with a seeded trainable reference
//! implementation); [`objective`] holds the losses; [`trainer`] runs the
//! joint optimization and ablation variants; [`eval`] scores predictions
//! and exports relation-vector dumps.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below pin the two concrete instantiations.

pub mod corpus;
pub mod encoder;
pub mod eval;
mod hashing;
pub mod objective;
pub mod prompt;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use scalar::Scalar;

pub type TensorF32 = tensor::Tensor<f32>;
pub type TensorF64 = tensor::Tensor<f64>;
pub type TinyEncoderF32 = encoder::tiny::TinyEncoder<f32>;
pub type TinyEncoderF64 = encoder::tiny::TinyEncoder<f64>;
pub type CheckpointF32 = trainer::Checkpoint<f32>;
pub type CheckpointF64 = trainer::Checkpoint<f64>;
pub type LossBreakdownF32 = objective::LossBreakdown<f32>;
pub type LossBreakdownF64 = objective::LossBreakdown<f64>;
