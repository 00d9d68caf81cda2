//! Dense arrays, reverse-mode differentiation, optimizers and checkpoints.

pub mod array;
pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;

pub use array::DArray;
pub use gradcheck::{grad_check, grad_check_model, grad_check_params, grad_check_report, GradCheckReport};
pub use nn::{LayerNorm, Linear, Mlp};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use rng::{RngStreams, StreamRng};
pub use tape::{OpKind, Tape, Var};
