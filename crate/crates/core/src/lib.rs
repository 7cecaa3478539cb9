//! Stackelberg-Nash hierarchic control of the linearized micropolar system on a
//! moving planar domain, solved on the fixed reference cylinder.
//!
//! The pipeline: `motion` pulls the moving domain back, `basis` builds the
//! divergence-free Galerkin operators, `state` and `adjoint` march forward and
//! backward in time, `nash` solves for the follower equilibrium and `leader`
//! computes the approximate-controllability control through the dual functional.

pub mod adjoint;
pub mod basis;
pub mod config;
pub mod error;
pub mod fields;
pub mod functionals;
pub mod geometry;
pub mod krylov;
pub mod leader;
pub mod motion;
pub mod nash;
pub mod output;
pub mod scenario;
pub mod state;
pub mod suite;

pub use error::{Error, Result};
