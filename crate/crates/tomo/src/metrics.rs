//! PSNR over whole volumes and SSIM averaged over orthogonal slices, both
//! with data range 1.

use crate::error::{TomoError, TomoResult};
use crate::volume::Volume;

/// Reported PSNR for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn psnr(a: &[f64], b: &[f64]) -> TomoResult<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TomoError::DimensionMismatch(format!("psnr of {} vs {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub fn psnr_3d(v: &Volume, v_gt: &Volume) -> TomoResult<f64> {
    if v.dims != v_gt.dims {
        return Err(TomoError::DimensionMismatch(format!("volume dims {:?} vs {:?}", v.dims, v_gt.dims)));
    }
    psnr(&v.to_f64(), &v_gt.to_f64())
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable 'valid' filtering with the SSIM window.
fn blur_valid(img: &[f64], rows: usize, cols: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (orows, ocols) = (rows + 1 - SSIM_WINDOW, cols + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; rows * ocols];
    for r in 0..rows {
        for c in 0..ocols {
            tmp[r * ocols + c] = (0..SSIM_WINDOW).map(|t| w[t] * img[r * cols + c + t]).sum();
        }
    }
    let mut out = vec![0.0; orows * ocols];
    for r in 0..orows {
        for c in 0..ocols {
            out[r * ocols + c] = (0..SSIM_WINDOW).map(|t| w[t] * tmp[(r + t) * ocols + c]).sum();
        }
    }
    out
}

/// Mean SSIM of two row-major images (11×11 Gaussian window, σ = 1.5,
/// K1 = 0.01, K2 = 0.03, data range 1, valid window positions only).
pub fn ssim_2d(a: &[f64], b: &[f64], rows: usize, cols: usize) -> TomoResult<f64> {
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(TomoError::DimensionMismatch(format!(
            "ssim of {} and {} values for {rows}x{cols}",
            a.len(),
            b.len()
        )));
    }
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(TomoError::InvalidArgument(format!("ssim needs images of at least 11x11, got {rows}x{cols}")));
    }
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = blur_valid(a, rows, cols, &w);
    let mu_b = blur_valid(b, rows, cols, &w);
    let e_aa = blur_valid(&aa, rows, cols, &w);
    let e_bb = blur_valid(&bb, rows, cols, &w);
    let e_ab = blur_valid(&ab, rows, cols, &w);
    let n = mu_a.len();
    let mut sum = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(sum / n as f64)
}

/// SSIM averaged over every slice along each axis, then over the three axes.
pub fn ssim_3slab(v: &Volume, v_gt: &Volume) -> TomoResult<f64> {
    if v.dims != v_gt.dims {
        return Err(TomoError::DimensionMismatch(format!("volume dims {:?} vs {:?}", v.dims, v_gt.dims)));
    }
    let mut total = 0.0;
    for axis in 0..3 {
        let mut acc = 0.0;
        for idx in 0..v.dims[axis] {
            let (rows, cols, a) = v.slice(axis, idx)?;
            let (_, _, b) = v_gt.slice(axis, idx)?;
            acc += ssim_2d(&a, &b, rows, cols)?;
        }
        total += acc / v.dims[axis] as f64;
    }
    Ok(total / 3.0)
}
