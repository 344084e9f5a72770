//! Contractivity certificates for continuous- and discrete-time dynamical
//! systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`norms`]: vector norms, induced matrix norms, matrix log norms and
//!   spectral quantities, plus the limit-definition oracle for log norms.
//! * [`system`]: vector fields and discrete maps with Jacobians, sampled
//!   Lipschitz / one-sided Lipschitz estimates and the pointwise and pairwise
//!   contractivity conditions for the ℓ1, ℓ2 (weighted) and ℓ∞ norms.
//! * [`certificates`]: Lyapunov, Perron, LMI and closed-form certificates for
//!   linear, Metzler, firing-rate, Lur'e and implicit neural network models,
//!   plus local and weak contraction probes.
//! * [`discretization`]: forward Euler maps, contracting step search and
//!   Banach fixed-point iteration.
//! * [`interconnect`]: gain-matrix analysis of networks of contracting
//!   subsystems.
//! * [`simulate`]: fixed-step RK4 integration and empirical checks of the
//!   incremental stability, incremental ISS and equilibrium tracking bounds.
//!
//! Sampling loops run on rayon when the `parallel` feature is enabled (the
//! default); see [`exec`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod discretization;
pub mod error;
pub mod exec;
pub mod interconnect;
pub mod norms;
pub mod serde_rows;
pub mod simulate;
pub mod system;

pub use error::{Error, Result};
pub use norms::{Matrix, NormSpec, Vector};
