#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod belief;
pub mod cli;
pub mod delay;
pub mod envs;
pub mod error;
pub mod numcore;
pub mod theory;

pub use error::{Error, Result};
