#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod data;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod risk;
pub mod simlab;
pub mod solver;
pub mod tuner;

pub use error::{Error, Result};
