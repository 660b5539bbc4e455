//! Monocular-guided two-view pointmap refinement.
//!
//! The library covers the full desk-scale pipeline: a minimal dense-tensor
//! engine with reverse-mode autodiff ([`tensor`]), weighted Umeyama / Sim(3)
//! estimation and pose recovery ([`geometry`]), pointmap types and global
//! alignment ([`pointmap`]), the ConvGRU refinement network ([`refine`]),
//! confidence-aware training losses ([`loss`]), pose and point-cloud metric
//! suites ([`metrics`]), a deterministic synthetic scene harness ([`synth`]),
//! and bit-exact container / PLY serialization ([`container`], [`ply`]).
//!
//! Everything is `f64` and deterministic: identical inputs produce
//! bit-identical outputs, with or without the `parallel` feature, for any
//! thread count. Parallel sections compute independent items and reduce in
//! fixed index order.

pub mod container;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod parallel;
pub mod ply;
pub mod pointmap;
pub mod refine;
pub mod report;
pub mod synth;
pub mod tensor;

pub use geometry::{RigidPose, Sim3};
pub use pointmap::{ConfidenceMap, ImageGrid, Pointmap};
pub use tensor::Tensor;
