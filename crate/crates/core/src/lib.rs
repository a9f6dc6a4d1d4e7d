//! Numerical solver for the mutation–selection model of dispersal evolution
//!
//! ```text
//! u_t = αΔu + ε²u_αα + (m(x) − û(x))u,   û(x) = ∫ u(x, α) dα,
//! ```
//!
//! posed on `D × [α_lo, α_hi]` with zero-flux conditions, together with the
//! tools needed to check its small-mutation asymptotics: the logistic profile
//! `θ_α`, principal eigenvalue curves, the Airy boundary-layer profile, ε
//! sweeps with scaling-law fits, and the discrete-trait analogue.

pub mod airy;
pub mod asymptotics;
pub mod cli;
pub mod discrete;
pub mod eigen;
pub mod error;
pub mod grid;
pub mod habitat;
pub mod linalg;
pub mod logistic;
pub mod solver;

pub use error::{Error, Result};
