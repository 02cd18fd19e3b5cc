//! Differentiable ops, implemented as methods on [`crate::Graph`].

mod attention;
mod conv;
mod elementwise;
pub(crate) mod linalg;
mod norm;
mod reduce;
mod sample;
mod shape;

pub use attention::AttnGroups;
pub use reduce::PoolKind;
