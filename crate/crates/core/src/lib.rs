//! Periodized cell problems for random Hamilton-Jacobi-Bellman and fully
//! nonlinear elliptic operators.

pub mod elliptic_solver;
pub mod environment;
pub mod error;
pub mod grid;
pub mod harness;
pub mod hjb_solver;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod periodize;
pub mod scheme;
pub mod solve;
pub mod validate;

pub use error::{Error, Result};
