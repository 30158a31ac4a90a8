//! Error types shared across the crate.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The spectral parameter collides with an eigenvalue of the truncated
    /// operator and no admissible analytic extension exists (the channel
    /// vectors overlap the kernel).
    #[error("spectral parameter {z} is within tolerance of an eigenvalue and cannot be extended")]
    SingularSpectralParameter { z: Complex64 },

    #[error("matrix has numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("graph is disconnected: vertex {vertex} is unreachable from the root")]
    Disconnected { vertex: usize },

    #[error("partition is invalid: {reason}")]
    PartitionInvalid { reason: String },

    #[error("no shell grouping with non-decreasing ranks exists (connection {shell} has rank 0)")]
    GroupingFailed { shell: usize },

    #[error("connection matrix W_{shell} is numerically zero; the graph disconnects between shells")]
    ZeroConnection { shell: usize },

    #[error("composition pair is not suitable: cond(1 - alpha~ delta) = {cond:e}")]
    NotSuitable { cond: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix 1 - delta A is not invertible (cond = {cond:e})")]
    NotInvertible { cond: f64 },

    #[error("boundary data carry different spectral parameters: {z1} vs {z2}")]
    ParameterMismatch { z1: Complex64, z2: Complex64 },

    #[error("sweep failed at shell {shell}: {reason}")]
    SweepFailed { shell: usize, reason: String },

    #[error("gamma vector is numerically zero at this spectral parameter")]
    ZeroGamma,

    #[error("shell {shell} is singular at the requested spectral parameter")]
    SingularShell { shell: usize },

    #[error("lambda = {lambda} violates the band margin {margin}")]
    OutsideBand { lambda: f64, margin: f64 },

    #[error("invalid model spec: {0}")]
    SpecInvalid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
