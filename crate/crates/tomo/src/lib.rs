//! Cone-beam CT building blocks: acquisition geometry, voxel volumes and
//! projection sets, a matched projector/backprojector pair, the classical
//! FDK / SART / ASD-POCS reconstructions, and PSNR/SSIM metrics.

pub mod classical;
pub mod error;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod ramp;
pub mod volume;
pub mod xproj;

pub use error::{TomoError, TomoResult};
pub use geom::{equispaced_angles, ConeBeamGeometry, PluckerEmbedding, Ray, Vec3};
pub use volume::{hu_normalize, ProjectionSet, Volume};
