//! Graph contrastive learning with hardness-adaptive reweighting.
//!
//! The crate covers the whole experiment loop: a dataset format and split
//! logic ([`graph`]), stochastic views ([`augment`]), a small dense
//! reverse-mode engine ([`autodiff`]), GCN/GAT encoders with an MLP
//! projector ([`encoders`]), the contrastive objectives ([`losses`]), the
//! two-step pre-train / pseudo-label / fine-tune pipeline ([`pipeline`]) and
//! the degree-aware evaluation harness ([`eval`]).

pub mod augment;
pub mod autodiff;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod graph;
pub mod losses;
pub mod matrix;
pub mod par;
pub mod pipeline;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
pub use matrix::{Csr, Matrix};
