//! Query-query alignment and key/value rearrangement for cross-image attention.
//!
//! The structure image's queries are matched against the appearance image's
//! queries; the best matches scatter the appearance keys and values onto the
//! structure positions, and cross-image attention then runs against the
//! rearranged keys and values. Diagnostics measure how much attention mass
//! lands outside the semantically matching region, and a seeded synthetic
//! harness exercises the whole path without a diffusion model.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the storage type used by the file formats and CLI.

pub mod align;
pub mod attention;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod sim;
pub mod tensor;

pub use align::{
    apply_fallback, build_aggregation, compute_alignment, qq_align_pipeline, reweight_softmax,
    AggregationMatrix, AlignmentMatrix, Stage,
};
pub use attention::{
    appearance_attention, apply_contrast, cross_image_attention, rearrange_kv,
    rearranged_attention, AttentionOutput, RearrangedKV,
};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Grid, Matrix};

/// Single-precision feature matrix, the unit stored in tensor files.
pub type FeatureMatrix = Matrix<f32>;
/// Row-stochastic attention map.
pub type AttentionMap = Matrix<f32>;
pub type Alignment = AlignmentMatrix<f32>;
pub type Aggregation = AggregationMatrix<f32>;

/// Double-precision counterparts, convenient for oracles and analysis.
pub type FeatureMatrix64 = Matrix<f64>;
pub type Alignment64 = AlignmentMatrix<f64>;
pub type Aggregation64 = AggregationMatrix<f64>;
