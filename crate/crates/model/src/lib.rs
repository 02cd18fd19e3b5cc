//! The ILV network: hybrid multi-view encoding, a latent volume refined by
//! grouped cross-attention, a Gaussian decoder with exact X-ray rendering
//! and voxelization, residual U-Net refinement, and its training loop.

pub mod config;
pub mod decode;
pub mod error;
pub mod gsplat;
pub mod ilvnet;
pub mod loss;
pub mod model;
pub mod nn;
pub mod train;
pub mod unet;

pub use config::{DataConfig, LossConfig, ModelConfig, RunConfig, TrainConfig};
pub use error::{ModelError, ModelResult};
pub use gsplat::GaussianSet;
pub use model::{IlvModel, Reconstruction};
