//! Heston model calibration for European and American puts.
//!
//! Pricing backends: P1 finite elements with Crank-Nicolson time stepping
//! and a primal-dual active set for the early-exercise constraint, a
//! reduced-basis surrogate built by greedy POD, binomial-tree
//! de-Americanization, and a Fourier closed form for European puts.

pub mod calibration;
pub mod closed_form;
pub mod deam;
pub mod error;
pub mod fem;
pub mod heston;
pub mod io;
pub mod linalg;
pub mod params;
pub mod rbm;
pub mod solver;

pub use error::{Error, Result};
pub use params::*;
