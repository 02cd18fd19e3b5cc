use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{TomoError, TomoResult};
use crate::ramp::{Apodization, RampFilter};
use crate::volume::{ProjectionSet, Volume};
use crate::xproj::Grid;

#[derive(Debug, Clone, Copy, Default)]
pub struct FdkParams {
    pub apodization: Apodization,
}

pub struct FdkOutput {
    /// Clamped to `[0, 1]` for comparison against normalized volumes.
    pub volume: Volume,
    pub raw: Volume,
}

/// Feldkamp-Davis-Kress reconstruction for a full circular scan.
///
/// The views are assumed to be equispaced over 360°, so each one is weighted
/// by `2π / n_views`; the factor ½ compensates the double coverage of the
/// full turn.
pub fn fdk(p: &ProjectionSet, grid: &Grid, params: FdkParams) -> TomoResult<FdkOutput> {
    let n_images = p.n_images();
    if n_images < 2 {
        return Err(TomoError::InvalidArgument(format!("FDK needs at least 2 views, got {n_images}")));
    }
    let g = &p.geometry;
    let (rows, cols) = (g.det_rows, g.det_cols);
    let scale = g.dso / g.dsd;
    // pixel pitch on the virtual detector through the isocenter
    let tau = g.det_pixel * scale;
    let filter = RampFilter::new(cols, params.apodization)?;

    let mut filtered = vec![0.0f64; n_images * rows * cols];
    let mut row_in = vec![0.0; cols];
    for i in 0..n_images {
        let img = p.image(i);
        for r in 0..rows {
            let v = (r as f64 + 0.5 - rows as f64 * 0.5) * tau;
            for c in 0..cols {
                let u = (c as f64 + 0.5 - cols as f64 * 0.5) * tau;
                let w = g.dso / (g.dso * g.dso + u * u + v * v).sqrt();
                row_in[c] = img[r * cols + c] as f64 * w;
            }
            let out = &mut filtered[(i * rows + r) * cols..(i * rows + r + 1) * cols];
            filter.apply(&row_in, out)?;
            for o in out.iter_mut() {
                *o /= tau;
            }
        }
    }

    let dbeta = 2.0 * PI / n_images as f64;
    let views: Vec<(f64, f64)> = p.view_indices.iter().map(|&v| g.angles[v].sin_cos()).collect();
    let origin = grid.origin();
    let [nx, ny, _] = grid.dims;
    let vs = grid.voxel_size;
    let mut raw = vec![0.0f64; grid.len()];
    raw.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        let z = origin.z() + k as f64 * vs;
        for j in 0..ny {
            let y = origin.y() + j as f64 * vs;
            for i in 0..nx {
                let x = origin.x() + i as f64 * vs;
                let mut acc = 0.0;
                for (vi, &(s, c)) in views.iter().enumerate() {
                    // distance from the source plane, measured toward the detector
                    let depth = g.dso - (x * c + y * s);
                    let mag = g.dsd / depth;
                    let u = (-x * s + y * c) * mag / g.det_pixel + cols as f64 * 0.5 - 0.5;
                    let v = z * mag / g.det_pixel + rows as f64 * 0.5 - 0.5;
                    let q = bilinear(&filtered[vi * rows * cols..(vi + 1) * rows * cols], rows, cols, v, u);
                    let w = g.dso / depth;
                    acc += w * w * q;
                }
                slab[i + nx * j] = 0.5 * dbeta * acc;
            }
        }
    });
    let raw = Volume::from_f64(grid.dims, grid.voxel_size, &raw)?;
    Ok(FdkOutput { volume: raw.clamped(0.0, 1.0), raw })
}

/// Bilinear lookup at index-space `(r, c)`, zero outside the image.
fn bilinear(img: &[f64], rows: usize, cols: usize, r: f64, c: f64) -> f64 {
    if !(r > -1.0 && c > -1.0 && r < rows as f64 && c < cols as f64) {
        return 0.0;
    }
    let r0 = r.floor();
    let c0 = c.floor();
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |rr: isize, cc: isize| {
        if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
            0.0
        } else {
            img[rr as usize * cols + cc as usize]
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}
