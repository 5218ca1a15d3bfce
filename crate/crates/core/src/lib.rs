//! Simultaneous input and state estimation for discrete-time linear systems.
//!
//! The crate estimates an unknown input `d_t` together with the state `x_t`
//! of a linear plant, decides ahead of time whether that estimator is stable,
//! and offers an inner-outer factorization route when it is not.

pub mod cli;
pub mod error;
pub mod factorization;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod par;
pub mod singular_kf;
pub mod sise;
pub mod stability;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use model::{validate, AssumptionReport, LinearSystem, Trajectory, TransformedSystem};
