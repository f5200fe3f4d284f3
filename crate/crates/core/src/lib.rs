//! Polynomial trajectory generation posed as a finite-horizon optimal control
//! problem over the spline's state-space form.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod constraints;
pub mod error;
pub mod objective;
pub mod polyspline;
pub mod problem;
pub mod problem_io;
pub mod solver_ipddp;
pub mod solver_lqt;

pub use error::{Error, Result};
