//! Dense reverse-mode differentiation and optimizers.

pub mod check;
mod optim;
mod tape;

pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{Tape, Var};
