//! PI-consensus distributed least squares.
//!
//! Each agent `i` holds a contiguous block `(X_i, Y_i)` of the lifted data and
//! iterates
//!
//! ```text
//! K_i ← K_i − α [ (K_i X_i − Y_i) X_iᵀ + k_P Σ_{j∈N(i)} (K_i − K_j) + k_I R_i ]
//! R_i ← R_i + α Σ_{j∈N(i)} (K_i − K_j)
//! ```
//!
//! synchronously, reading only the previous round's neighbor values. The
//! step-size bound comes from the spectrum of the block matrix
//! `M = [[−𝐗𝐗ᵀ − k_P 𝐋, 𝐋], [−k_I I, 0]]` with `𝐋 = L ⊗ I_n`.

mod blocks;
mod partition;
mod solver;
mod spectral;

pub use blocks::{assemble_block_x, assemble_m, assemble_m_tilde};
pub use partition::{partition_data, Partition};
pub use solver::{
    consensus_error, kkt_residual, observed_contraction, run, run_observed, step, tail_contraction,
    AgentState, InitMode, RunOptions, RunResult, RunStatus, RunTrace, SolverGains, StepSize,
    TraceRecord,
};
pub use spectral::{
    compute_alpha_max, compute_rho_max, semi_hurwitz_check, spectral_report, structured_spectra,
    SpectralReport,
};

use thiserror::Error;

use crate::edmd::EdmdError;
use crate::graph::GraphError;
use crate::linalg::LinalgError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("communication graph is not connected")]
    Disconnected,
    #[error("partition: {0}")]
    Partition(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid solver gains: {0}")]
    Gains(String),
    #[error("spectrum is not semi-Hurwitz: eigenvalue {re:e}{im:+e}i has nonnegative real part")]
    NotSemiHurwitz { re: f64, im: f64 },
    #[error("spectrum has no nonzero eigenvalues")]
    NoNonzeroEigenvalues,
    #[error("step size {alpha:e} is outside (0, α_max = {alpha_max:e})")]
    AlphaOutOfRange { alpha: f64, alpha_max: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Edmd(#[from] EdmdError),
}

pub type Result<T> = std::result::Result<T, ConsensusError>;
