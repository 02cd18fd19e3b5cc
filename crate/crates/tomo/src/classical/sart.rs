use crate::classical::tv::{tv_gradient, tv_value, TV_EPS};
use crate::error::{TomoError, TomoResult};
use crate::volume::{ProjectionSet, Volume};
use crate::xproj::{adjoint_raw, forward_raw, Grid};

const GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct SartParams {
    pub iters: usize,
    pub relax: f64,
}

impl Default for SartParams {
    fn default() -> Self {
        SartParams { iters: 20, relax: 0.3 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AsdPocsParams {
    pub sart: SartParams,
    pub tv_steps: usize,
    pub tv_alpha_init: f64,
    /// Multiplicative decay of the TV step factor per outer iteration.
    pub tv_alpha_decay: f64,
    /// Halve a TV step until it does not increase TV (up to 12 times).
    pub backtracking: bool,
}

impl Default for AsdPocsParams {
    fn default() -> Self {
        AsdPocsParams {
            sart: SartParams::default(),
            tv_steps: 10,
            tv_alpha_init: 0.2,
            tv_alpha_decay: 0.95,
            backtracking: true,
        }
    }
}

/// Order in which SART visits `n` views: 0, n/2, n/4, 3n/4, ... (the
/// van der Corput sequence scaled to `n`, duplicates skipped).
pub fn interleaved_order(n: usize) -> Vec<usize> {
    let mut used = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut k: u64 = 0;
    while order.len() < n {
        let mut v = 0.0;
        let mut denom = 1.0;
        let mut m = k;
        while m > 0 {
            denom *= 2.0;
            v += (m & 1) as f64 / denom;
            m >>= 1;
        }
        let idx = ((v * n as f64) as usize).min(n - 1);
        if !used[idx] {
            used[idx] = true;
            order.push(idx);
        }
        k += 1;
    }
    order
}

/// Per-view data and normalizations for the SART update.
struct SartSystem<'a> {
    grid: &'a Grid,
    p: &'a ProjectionSet,
    rowsum: Vec<Vec<f64>>,
    colsum: Vec<Vec<f64>>,
    data: Vec<Vec<f64>>,
    order: Vec<usize>,
}

impl<'a> SartSystem<'a> {
    fn new(p: &'a ProjectionSet, grid: &'a Grid) -> TomoResult<Self> {
        let g = &p.geometry;
        let per = p.pixels_per_image();
        let ones_vol = vec![1.0; grid.len()];
        let ones_img = vec![1.0; per];
        let mut rowsum = Vec::new();
        let mut colsum = Vec::new();
        let mut data = Vec::new();
        for i in 0..p.n_images() {
            let view = [p.view_indices[i]];
            rowsum.push(forward_raw(grid, &ones_vol, g, &view)?);
            colsum.push(adjoint_raw(grid, &ones_img, g, &view)?);
            data.push(p.image(i).iter().map(|&v| v as f64).collect());
        }
        Ok(SartSystem { grid, p, rowsum, colsum, data, order: interleaved_order(p.n_images()) })
    }

    /// One pass over all views.
    fn pass(&self, x: &mut [f64], relax: f64) -> TomoResult<()> {
        let g = &self.p.geometry;
        for &i in &self.order {
            let view = [self.p.view_indices[i]];
            let ax = forward_raw(self.grid, x, g, &view)?;
            let resid: Vec<f64> = ax
                .iter()
                .zip(&self.data[i])
                .zip(&self.rowsum[i])
                .map(|((a, b), w)| if *w > GUARD { (b - a) / w } else { 0.0 })
                .collect();
            let bp = adjoint_raw(self.grid, &resid, g, &view)?;
            for ((xv, b), c) in x.iter_mut().zip(&bp).zip(&self.colsum[i]) {
                if *c > GUARD {
                    *xv = (*xv + relax * b / c).max(0.0);
                }
            }
        }
        Ok(())
    }

    fn residual_norm(&self, x: &[f64]) -> TomoResult<f64> {
        let ax = forward_raw(self.grid, x, &self.p.geometry, &self.p.view_indices)?;
        let b = self.data.iter().flatten();
        Ok(ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }
}

fn check(params: &SartParams) -> TomoResult<()> {
    if params.iters == 0 {
        return Err(TomoError::InvalidArgument("SART needs at least one iteration".into()));
    }
    if !(params.relax > 0.0 && params.relax <= 1.0) {
        return Err(TomoError::InvalidArgument(format!("relaxation {} outside (0, 1]", params.relax)));
    }
    Ok(())
}

pub fn sart(p: &ProjectionSet, grid: &Grid, params: SartParams) -> TomoResult<Volume> {
    Ok(sart_with_trace(p, grid, params, false)?.0)
}

/// SART, optionally recording `‖Ax − b‖₂` after every iteration.
pub fn sart_with_trace(
    p: &ProjectionSet,
    grid: &Grid,
    params: SartParams,
    trace: bool,
) -> TomoResult<(Volume, Vec<f64>)> {
    check(&params)?;
    let system = SartSystem::new(p, grid)?;
    let mut x = vec![0.0; grid.len()];
    let mut residuals = Vec::new();
    for _ in 0..params.iters {
        system.pass(&mut x, params.relax)?;
        if trace {
            residuals.push(system.residual_norm(&x)?);
        }
    }
    Ok((Volume::from_f64(grid.dims, grid.voxel_size, &x)?, residuals))
}

/// ASD-POCS: SART data passes alternated with normalized steepest descent on
/// isotropic TV, with the TV step tied to the size of the data update.
pub fn asd_pocs(p: &ProjectionSet, grid: &Grid, params: AsdPocsParams) -> TomoResult<Volume> {
    check(&params.sart)?;
    if params.tv_steps == 0 {
        return Err(TomoError::InvalidArgument("ASD-POCS needs tv_steps >= 1".into()));
    }
    if !(params.tv_alpha_init >= 0.0) {
        return Err(TomoError::InvalidArgument("tv_alpha_init must be >= 0".into()));
    }
    let system = SartSystem::new(p, grid)?;
    let mut x = vec![0.0; grid.len()];
    let mut alpha = params.tv_alpha_init;
    for _ in 0..params.sart.iters {
        let before = x.clone();
        system.pass(&mut x, params.sart.relax)?;
        let dp = x.iter().zip(&before).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dtvg = alpha * dp;
        if dtvg > 0.0 {
            for _ in 0..params.tv_steps {
                if !tv_descent_step(&mut x, grid.dims, dtvg, params.backtracking) {
                    break;
                }
            }
            for v in &mut x {
                *v = v.max(0.0);
            }
        }
        alpha *= params.tv_alpha_decay;
    }
    Volume::from_f64(grid.dims, grid.voxel_size, &x)
}

/// One normalized-gradient TV step of length `step`. Returns false when no
/// step was taken (flat field, or backtracking found no decrease).
fn tv_descent_step(x: &mut [f64], dims: [usize; 3], step: f64, backtracking: bool) -> bool {
    let g = tv_gradient(x, dims, TV_EPS);
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if gn == 0.0 {
        return false;
    }
    if !backtracking {
        for (xv, gv) in x.iter_mut().zip(&g) {
            *xv -= step * gv / gn;
        }
        return true;
    }
    let tv0 = tv_value(x, dims, TV_EPS);
    let mut s = step;
    for _ in 0..12 {
        let cand: Vec<f64> = x.iter().zip(&g).map(|(xv, gv)| xv - s * gv / gn).collect();
        if tv_value(&cand, dims, TV_EPS) <= tv0 {
            x.copy_from_slice(&cand);
            return true;
        }
        s *= 0.5;
    }
    false
}
