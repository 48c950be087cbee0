//! Numerical toolkit for behavioral measures on finite horizons.
//!
//! Probability measures on trajectory space are represented by finitely many
//! weighted atoms. On top of that representation the crate provides:
//!
//! * deterministic state-space models and pathwise graph residuals ([`system`]),
//! * behavioral-measure membership, operator identities, occupation marginals
//!   and moment identities ([`measure`], [`moments`]),
//! * block-Hankel matrices, persistency of excitation and the Hankel
//!   factorization of trajectory distributions ([`hankel`]),
//! * data-driven optimization over coefficient-space distributions
//!   ([`data_driven`]),
//! * occupation-measure linear programs with an exact simplex solver, the
//!   Bellman recursion, duality and policy extraction ([`lp`], [`ocp`]),
//! * history-conditional kernel consistency for finite stochastic systems
//!   ([`stochastic`]).

pub mod data_driven;
pub mod error;
pub mod hankel;
pub mod lp;
pub mod measure;
pub mod moments;
pub mod ocp;
pub mod poly;
pub mod rng;
pub mod stochastic;
pub mod system;

pub use error::{Error, Result};
