//! Orbital-feature molecular property prediction.
//!
//! A spin-polarized, charge-self-consistent extended-Hückel engine produces
//! the six quantum-mechanical matrices `(F_a, F_b, P_a, P_b, S, H_core)` for
//! molecules of any charge, multiplicity and uniform external field. An
//! SE(3)-equivariant message-passing network consumes them and is trained by
//! delta-learning against higher-level energies.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod basis;
pub mod dataio;
pub mod equivariant;
pub mod error;
pub mod network;
pub mod scalar;
pub mod scf;
pub mod system;
pub mod toy;
pub mod training;
pub mod units;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
