//! Electrical impedance tomography on a 2D disk: finite-element forward
//! model, a regularized objective, a real-coded genetic algorithm, and a
//! damped Gauss-Newton (Levenberg) baseline.

pub mod baseline;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod ga;
pub mod mesh;
pub mod objective;
pub mod recon;
pub mod render;
pub mod seed;
pub mod skyline;

pub use error::{Error, Result};
