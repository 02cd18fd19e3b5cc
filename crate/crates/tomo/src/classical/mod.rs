//! Classical sparse-view baselines: FDK, SART and ASD-POCS.

mod fdk;
mod sart;
pub mod tv;

pub use fdk::{fdk, FdkOutput, FdkParams};
pub use sart::{asd_pocs, interleaved_order, sart, sart_with_trace, AsdPocsParams, SartParams};
