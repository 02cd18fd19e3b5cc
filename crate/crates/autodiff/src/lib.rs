//! Reverse-mode differentiation over a recorded graph of dense `f64`
//! tensors, with the op set, optimizer and checkpoint format used by the
//! ILV network.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod init;
mod ops;
mod optim;
mod params;
mod tensor;

pub use error::{AdError, AdResult};
pub use gradcheck::{grad_check, grad_check_coords, grad_check_params};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use ops::{AttnGroups, PoolKind};
pub use optim::{clip_grad_norm, cosine_warmup_lr, grad_norm, AdamW};
pub use params::{Param, ParamId, ParamStore, Session};
pub use tensor::{numel, Tensor};
