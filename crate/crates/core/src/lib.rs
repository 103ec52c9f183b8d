//! LGSA segmentation engine.
//!
//! A two-stage (coarse location → fine segmentation) siamese network over
//! triplets of adjacent image slices, built on a small dense-tensor engine
//! with reverse-mode automatic differentiation. The crate also ships the
//! compound Dice+BCE loss, segmentation metrics (DSC / HD95 / F1), a
//! synthetic volumetric benchmark generator, a deterministic training loop,
//! and the ablation harness used to compare structural variants.

pub mod ablation;
pub mod baselines;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

/// Scalar element type for all differentiable computation.
///
/// Defaults to `f64` so gradient checks run at full precision; build with
/// `--features f32` for single-precision training binaries. All tolerances
/// in tests are quoted for the default `f64` build.
#[cfg(not(feature = "f32"))]
pub type Elem = f64;
#[cfg(feature = "f32")]
pub type Elem = f32;

pub use error::LgsaError;
pub use graph::{Graph, Var};
pub use tensor::Tensor;
