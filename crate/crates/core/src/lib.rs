#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cone;
pub mod config;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod geodesic;
pub mod geometry;
pub mod report;
pub mod scenario;

pub use error::{JflowError, Result};
