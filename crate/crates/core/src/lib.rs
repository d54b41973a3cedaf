//! Simulation of measure-valued transfer dynamics.
//!
//! Cells carry a non-negative trait x (a protein quantity). When two cells
//! meet, each sends a random fraction Z ∼ B of its trait to the other. This
//! crate computes the resulting bilinear transfer operator exactly on atomic
//! measures, solves for its fixed distributions and integrates the Cauchy
//! problem ∂ₜn = g + hn + 𝕋_B[n, n]/‖n‖ with three independent schemes.

pub mod error;
pub mod cauchy;
pub mod fixedpoint;
pub mod kernels;
pub mod measures;
pub mod oracles;
pub mod sum;
pub mod transfer;

pub use error::{Result, XferError};
pub use kernels::{make_kernel, KernelSpec, TransferKernel};
pub use measures::{tv_distance, w1_distance, AtomicMeasure, CompressionReport};
