//! Transfer-matrix spectral analysis for Hermitian operators on locally
//! finite graphs.
//!
//! The toolkit decomposes a Hermitian hopping operator into spherical shells,
//! factors the inter-shell connections into full-rank channel pairs, and
//! propagates boundary resolvent data along the shells through an associative
//! block composition. On top of that sit affine spaces of rectangular
//! transfer matrices, Weyl-disc geometry for the root resolvent entry, and a
//! spectral-averaging formula that produces absolutely continuous density
//! curves together with detected point masses. Built-in generators cover
//! stair graphs of coupled wires, the rooted binary tree and strips, each
//! with optional random decaying shell-matrix potentials, plus a Monte Carlo
//! harness for fourth-moment growth of conjugated transfer products.

pub mod boundary;
pub mod error;
pub mod graph;
pub mod models;
pub mod numerics;
pub mod report;
pub mod sampling;
pub mod spectral;
pub mod transfer;
pub mod verify;
pub mod weyl;

mod parallel;

pub use error::{Error, Result};
pub use numerics::{c64, C64, CMatrix, CVector, TolerancePolicy};
