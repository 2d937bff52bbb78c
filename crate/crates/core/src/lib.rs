//! Numerical laboratory for linear stochastic delay differential equations
//!
//! ```text
//! dX(t) = A X(t) dt + ∫_{[-1,0]} η(ds) X(t+s) dt + B(X(t), X_t) dW(t)
//! ```
//!
//! lifted to the product space `R^d × L^p(-1, 0; R^d)`.

pub mod analysis;
pub mod config;
pub mod delay_op;
pub mod error;
pub mod lift;
pub mod mc;
pub mod model;
pub mod noise;
pub mod report;
pub mod segments;
pub mod solvers;
pub mod suite;

pub use error::{Error, Result};
pub use mc::Execution;
pub use model::{DelayMeasure, NoiseField, Problem, SolverConfig};
pub use segments::{Segment, SegmentPath, SegmentView};
