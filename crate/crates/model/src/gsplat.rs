//! Gaussian primitives: exact X-ray line integrals and voxelization, both
//! differentiable in center, scale, rotation and density, plus the `.ilvg`
//! file format.
//!
//! A primitive has covariance `Σ = R(q)·diag(s²)·R(q)ᵀ` with the quaternion
//! in `(w, x, y, z)` order. Both operators work in the whitened frame
//! `x̃ = A(x − μ)` with `A = diag(1/s)·Rᵀ`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::rc::Rc;

use ilv_autodiff::{Graph, Tensor, Var};
use ilv_tomo::geom::{ConeBeamGeometry, Ray, Vec3};
use ilv_tomo::Volume;

use crate::error::{ModelError, ModelResult};

/// Mahalanobis radius beyond which contributions are dropped.
pub const TRUNC_RADIUS: f64 = 3.0;

/// Plain-valued primitives, e.g. for export or inspection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianSet {
    pub centers: Vec<[f64; 3]>,
    pub scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub densities: Vec<f64>,
}

/// Graph handles of a primitive set: `[N, 3]`, `[N, 3]`, `[N, 4]` (unit
/// rows) and `[N]`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars {
    pub centers: Var,
    pub scales: Var,
    pub rotations: Var,
    pub densities: Var,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn push(&mut self, center: [f64; 3], scale: [f64; 3], rotation: [f64; 4], density: f64) {
        self.centers.push(center);
        self.scales.push(scale);
        self.rotations.push(rotation);
        self.densities.push(density);
    }

    pub fn from_graph(g: &Graph, v: &GaussianVars) -> Self {
        let rows3 = |t: &Tensor| t.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        GaussianSet {
            centers: rows3(g.value(v.centers)),
            scales: rows3(g.value(v.scales)),
            rotations: g.value(v.rotations).data.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
            densities: g.value(v.densities).data.clone(),
        }
    }

    /// Bind the set into a graph as gradient-receiving inputs.
    pub fn to_graph(&self, g: &mut Graph) -> GaussianVars {
        let n = self.len();
        let flat3 = |v: &[[f64; 3]]| Tensor { shape: vec![n, 3], data: v.iter().flatten().copied().collect() };
        GaussianVars {
            centers: g.input(flat3(&self.centers)),
            scales: g.input(flat3(&self.scales)),
            rotations: g.input(Tensor { shape: vec![n, 4], data: self.rotations.iter().flatten().copied().collect() }),
            densities: g.input(Tensor { shape: vec![n], data: self.densities.clone() }),
        }
    }

    fn prims(&self) -> ModelResult<Vec<Prim>> {
        (0..self.len())
            .map(|j| Prim::new(self.centers[j], self.scales[j], normalize_quat(self.rotations[j])?, self.densities[j]))
            .collect()
    }
}

fn normalize_quat(q: [f64; 4]) -> ModelResult<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(ModelError::InvalidArgument(format!("degenerate quaternion {q:?}")));
    }
    Ok(q.map(|v| v / n))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// `Σ_ij gR_ij ∂R_ij/∂q` for the polynomial map above.
fn rotation_grad(q: [f64; 4], gr: &[[f64; 3]; 3]) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dw = [[0.0, -2.0 * z, 2.0 * y], [2.0 * z, 0.0, -2.0 * x], [-2.0 * y, 2.0 * x, 0.0]];
    let dx = [[0.0, 2.0 * y, 2.0 * z], [2.0 * y, -4.0 * x, -2.0 * w], [2.0 * z, 2.0 * w, -4.0 * x]];
    let dy = [[-4.0 * y, 2.0 * x, 2.0 * w], [2.0 * x, 0.0, 2.0 * z], [-2.0 * w, 2.0 * z, -4.0 * y]];
    let dz = [[-4.0 * z, -2.0 * w, 2.0 * x], [2.0 * w, -4.0 * z, 2.0 * y], [2.0 * x, 2.0 * y, 0.0]];
    let contract = |d: &[[f64; 3]; 3]| (0..3).flat_map(|i| (0..3).map(move |k| (i, k))).map(|(i, k)| gr[i][k] * d[i][k]).sum();
    [contract(&dw), contract(&dx), contract(&dy), contract(&dz)]
}

#[inline]
fn mat_vec(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k][0] * v[0] + a[k][1] * v[1] + a[k][2] * v[2])
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// One primitive with its whitening map precomputed.
#[derive(Debug, Clone)]
struct Prim {
    mu: [f64; 3],
    s: [f64; 3],
    q: [f64; 4],
    r: [[f64; 3]; 3],
    /// `A[k][i] = R[i][k] / s[k]`
    a: [[f64; 3]; 3],
    d: f64,
}

/// Per-primitive gradient accumulators.
#[derive(Debug, Clone, Default)]
struct PrimGrad {
    /// w.r.t. the whitening map
    ga: [[f64; 3]; 3],
    /// w.r.t. the whitened offset `A(x − μ)`, summed over samples
    gdt: [f64; 3],
    gd: f64,
}

impl Prim {
    fn new(mu: [f64; 3], s: [f64; 3], q: [f64; 4], d: f64) -> ModelResult<Prim> {
        if s.iter().any(|&v| !(v > 0.0)) {
            return Err(ModelError::InvalidArgument(format!("non-positive gaussian scale {s:?}")));
        }
        let r = rotation_matrix(q);
        let a = [0, 1, 2].map(|k| [0, 1, 2].map(|i| r[i][k] / s[k]));
        Ok(Prim { mu, s, q, r, a, d })
    }

    fn whiten(&self, p: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.a, [p[0] - self.mu[0], p[1] - self.mu[1], p[2] - self.mu[2]])
    }

    /// Half extents of the axis-aligned box around the truncation ellipsoid.
    fn half_extents(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| {
            TRUNC_RADIUS * (0..3).map(|k| (self.r[i][k] * self.s[k]).powi(2)).sum::<f64>().sqrt()
        })
    }

    /// Chain accumulated gradients back to `(μ, s, q)` given the points the
    /// whitened offsets were taken from (`offset_sum = Σ gδ̃ ⊗ (x − μ)` is
    /// already folded into `ga`).
    fn finish(&self, pg: &PrimGrad) -> ([f64; 3], [f64; 3], [f64; 4]) {
        // μ enters only through δ̃ = A(x − μ)
        let gmu = [0, 1, 2].map(|i| -(0..3).map(|k| self.a[k][i] * pg.gdt[k]).sum::<f64>());
        let mut gr = [[0.0; 3]; 3];
        let mut gs = [0.0; 3];
        for k in 0..3 {
            for i in 0..3 {
                gr[i][k] = pg.ga[k][i] / self.s[k];
                gs[k] -= pg.ga[k][i] * self.a[k][i] / self.s[k];
            }
        }
        (gmu, gs, rotation_grad(self.q, &gr))
    }
}

/// `∫ d·exp(−½ (x(t) − μ)ᵀ Σ⁻¹ (x(t) − μ)) dt` along a ray with unit
/// direction, in closed form.
pub fn gaussian_ray_integral(center: [f64; 3], scale: [f64; 3], rotation: [f64; 4], density: f64, ray: &Ray) -> ModelResult<f64> {
    let p = Prim::new(center, scale, normalize_quat(rotation)?, density)?;
    let ut = mat_vec(&p.a, ray.direction.0);
    let dt = p.whiten(ray.origin.0);
    let (a, b, c) = (dot(ut, ut), dot(ut, dt), dot(dt, dt));
    Ok(density * (2.0 * PI / a).sqrt() * (-0.5 * (c - b * b / a)).exp())
}

/// Pixel ray directions of one view, row-major.
fn view_directions(geom: &ConeBeamGeometry, view: usize) -> ModelResult<(Vec3, Vec<[f64; 3]>)> {
    let src = geom.source_position(view)?;
    let mut dirs = Vec::with_capacity(geom.det_rows * geom.det_cols);
    for r in 0..geom.det_rows {
        for c in 0..geom.det_cols {
            let p = geom.detector_point(view, c as f64 + 0.5, r as f64 + 0.5)?;
            dirs.push((p - src).normalized().0);
        }
    }
    Ok((src, dirs))
}

/// Inclusive index range `[lo, hi]` of cells with centers `(i + 0.5)` in
/// `[a, b]` (in cell units), clipped to `[0, n)`. `None` when empty.
fn cell_range(a: f64, b: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (a - 0.5).ceil().max(0.0);
    let hi = (b - 0.5).floor().min(n as f64 - 1.0);
    (lo <= hi && hi >= 0.0).then(|| (lo as usize, hi as usize))
}

/// Detector pixel window that can see the truncated primitive.
fn pixel_window(p: &Prim, geom: &ConeBeamGeometry, view: usize, truncate: bool) -> ModelResult<Option<[(usize, usize); 2]>> {
    let full = [(0, geom.det_rows - 1), (0, geom.det_cols - 1)];
    if !truncate {
        return Ok(Some(full));
    }
    let e = p.half_extents();
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for corner in 0..8 {
        let sgn = |bit: usize| if corner >> bit & 1 == 1 { 1.0 } else { -1.0 };
        let x = Vec3::new(p.mu[0] + sgn(0) * e[0], p.mu[1] + sgn(1) * e[1], p.mu[2] + sgn(2) * e[2]);
        let (u, v, _) = geom.project_point(view, x)?;
        if !u.is_finite() {
            // box reaches behind the source
            return Ok(Some(full));
        }
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    match (cell_range(vmin, vmax, geom.det_rows), cell_range(umin, umax, geom.det_cols)) {
        (Some(r), Some(c)) => Ok(Some([r, c])),
        _ => Ok(None),
    }
}

/// Closed-form terms of one ray: `(a, b, c)` and the unit-density integral.
#[inline]
fn ray_terms(ut: [f64; 3], dt: [f64; 3]) -> (f64, f64, f64, f64) {
    let (a, b, c) = (dot(ut, ut), dot(ut, dt), dot(dt, dt));
    let q = c - b * b / a;
    (a, b, q, (2.0 * PI / a).sqrt() * (-0.5 * q).exp())
}

fn render_kernel(prims: &[Prim], geom: &ConeBeamGeometry, view: usize, truncate: bool) -> ModelResult<Vec<f64>> {
    let (src, dirs) = view_directions(geom, view)?;
    let cols = geom.det_cols;
    let mut out = vec![0.0; dirs.len()];
    let cut = TRUNC_RADIUS * TRUNC_RADIUS;
    for p in prims {
        let Some([(r0, r1), (c0, c1)]) = pixel_window(p, geom, view, truncate)? else { continue };
        let dt = p.whiten(src.0);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let pix = r * cols + c;
                let (_, _, q, base) = ray_terms(mat_vec(&p.a, dirs[pix]), dt);
                if truncate && q > cut {
                    continue;
                }
                out[pix] += p.d * base;
            }
        }
    }
    Ok(out)
}

fn render_backward(prims: &[Prim], geom: &ConeBeamGeometry, view: usize, truncate: bool, g: &[f64]) -> ModelResult<Vec<PrimGrad>> {
    let (src, dirs) = view_directions(geom, view)?;
    let cols = geom.det_cols;
    let cut = TRUNC_RADIUS * TRUNC_RADIUS;
    let mut grads = vec![PrimGrad::default(); prims.len()];
    for (p, pg) in prims.iter().zip(grads.iter_mut()) {
        let Some([(r0, r1), (c0, c1)]) = pixel_window(p, geom, view, truncate)? else { continue };
        let delta = [src.0[0] - p.mu[0], src.0[1] - p.mu[1], src.0[2] - p.mu[2]];
        let dt = mat_vec(&p.a, delta);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let pix = r * cols + c;
                let gp = g[pix];
                if gp == 0.0 {
                    continue;
                }
                let u = dirs[pix];
                let ut = mat_vec(&p.a, u);
                let (a, b, q, base) = ray_terms(ut, dt);
                if truncate && q > cut {
                    continue;
                }
                let i = p.d * base;
                pg.gd += gp * base;
                // I = d·√(2π/a)·exp(−½(c − b²/a))
                let ga = gp * i * (-0.5 / a - 0.5 * b * b / (a * a));
                let gb = gp * i * b / a;
                let gc = -0.5 * gp * i;
                for k in 0..3 {
                    let gut = 2.0 * ga * ut[k] + gb * dt[k];
                    for m in 0..3 {
                        pg.ga[k][m] += gut * u[m];
                    }
                    pg.gdt[k] += gb * ut[k] + 2.0 * gc * dt[k];
                }
            }
        }
        // δ̃ = A·δ with δ shared by all pixels
        for k in 0..3 {
            for m in 0..3 {
                pg.ga[k][m] += pg.gdt[k] * delta[m];
            }
        }
    }
    Ok(grads)
}

/// Voxel grid of the bounding box: dims and isotropic voxel size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

impl VoxelGrid {
    /// Cubic grid spanning `[−bbox_half, bbox_half]` along its longest axis.
    pub fn new(dims: [usize; 3], bbox_half: f64) -> ModelResult<Self> {
        if dims.iter().any(|&n| n < 2) || !(bbox_half > 0.0) {
            return Err(ModelError::InvalidArgument(format!("voxel grid {dims:?} over half-width {bbox_half}")));
        }
        let n = *dims.iter().max().unwrap();
        Ok(VoxelGrid { dims, voxel_size: 2.0 * bbox_half / n as f64 })
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5 - self.dims[axis] as f64 * 0.5) * self.voxel_size
    }

    /// Voxel index window of the truncated primitive, or the whole grid.
    fn window(&self, p: &Prim, truncate: bool) -> Option<[(usize, usize); 3]> {
        if !truncate {
            return Some([0, 1, 2].map(|a| (0, self.dims[a] - 1)));
        }
        let e = p.half_extents();
        let mut w = [(0, 0); 3];
        for a in 0..3 {
            let off = self.dims[a] as f64 * 0.5;
            w[a] = cell_range((p.mu[a] - e[a]) / self.voxel_size + off, (p.mu[a] + e[a]) / self.voxel_size + off, self.dims[a])?;
        }
        Some(w)
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }
}

fn voxelize_kernel(prims: &[Prim], grid: &VoxelGrid, truncate: bool) -> Vec<f64> {
    let [nx, ny, _] = grid.dims;
    let mut out = vec![0.0; grid.len()];
    let cut = TRUNC_RADIUS * TRUNC_RADIUS;
    for p in prims {
        let Some([(x0, x1), (y0, y1), (z0, z1)]) = grid.window(p, truncate) else { continue };
        for k in z0..=z1 {
            let z = grid.coord(2, k);
            for j in y0..=y1 {
                let y = grid.coord(1, j);
                for i in x0..=x1 {
                    let dt = p.whiten([grid.coord(0, i), y, z]);
                    let m = dot(dt, dt);
                    if truncate && m > cut {
                        continue;
                    }
                    out[i + nx * (j + ny * k)] += p.d * (-0.5 * m).exp();
                }
            }
        }
    }
    out
}

fn voxelize_backward(prims: &[Prim], grid: &VoxelGrid, truncate: bool, g: &[f64]) -> Vec<PrimGrad> {
    let [nx, ny, _] = grid.dims;
    let cut = TRUNC_RADIUS * TRUNC_RADIUS;
    let mut grads = vec![PrimGrad::default(); prims.len()];
    for (p, pg) in prims.iter().zip(grads.iter_mut()) {
        let Some([(x0, x1), (y0, y1), (z0, z1)]) = grid.window(p, truncate) else { continue };
        for k in z0..=z1 {
            let z = grid.coord(2, k);
            for j in y0..=y1 {
                let y = grid.coord(1, j);
                for i in x0..=x1 {
                    let gv = g[i + nx * (j + ny * k)];
                    if gv == 0.0 {
                        continue;
                    }
                    let delta = [grid.coord(0, i) - p.mu[0], y - p.mu[1], z - p.mu[2]];
                    let dt = mat_vec(&p.a, delta);
                    let m = dot(dt, dt);
                    if truncate && m > cut {
                        continue;
                    }
                    let e = (-0.5 * m).exp();
                    pg.gd += gv * e;
                    let s = -gv * p.d * e;
                    for kk in 0..3 {
                        let gdt = s * dt[kk];
                        pg.gdt[kk] += gdt;
                        for mm in 0..3 {
                            pg.ga[kk][mm] += gdt * delta[mm];
                        }
                    }
                }
            }
        }
    }
    grads
}

fn prims_from_graph(g: &Graph, v: &GaussianVars) -> ModelResult<Vec<Prim>> {
    let n = g.shape(v.densities).iter().product::<usize>();
    let (c, s, r) = (g.value(v.centers), g.value(v.scales), g.value(v.rotations));
    if c.shape != [n, 3] || s.shape != [n, 3] || r.shape != [n, 4] {
        return Err(ModelError::InvalidArgument(format!(
            "gaussian tensors {:?} {:?} {:?} for {n} densities",
            c.shape, s.shape, r.shape
        )));
    }
    let d = &g.value(v.densities).data;
    (0..n)
        .map(|j| {
            let c3 = |t: &Tensor| [t.data[3 * j], t.data[3 * j + 1], t.data[3 * j + 2]];
            let q = [r.data[4 * j], r.data[4 * j + 1], r.data[4 * j + 2], r.data[4 * j + 3]];
            Prim::new(c3(c), c3(s), q, d[j])
        })
        .collect()
}

/// Push a node whose parents are the four Gaussian tensors.
fn push_gaussian_op<F>(g: &mut Graph, v: &GaussianVars, prims: Rc<Vec<Prim>>, out: Tensor, backward: F) -> Var
where
    F: Fn(&[f64]) -> Vec<PrimGrad> + 'static,
{
    let n = prims.len();
    let dshape = g.shape(v.densities).to_vec();
    let parents = [v.centers, v.scales, v.rotations, v.densities];
    g.push_op(out, &parents, move |grad, _| {
        let pgs = backward(&grad.data);
        let (mut gm, mut gs, mut gq, mut gd) = (vec![0.0; 3 * n], vec![0.0; 3 * n], vec![0.0; 4 * n], vec![0.0; n]);
        for (j, (p, pg)) in prims.iter().zip(&pgs).enumerate() {
            let (a, b, c) = p.finish(pg);
            gm[3 * j..3 * j + 3].copy_from_slice(&a);
            gs[3 * j..3 * j + 3].copy_from_slice(&b);
            gq[4 * j..4 * j + 4].copy_from_slice(&c);
            gd[j] = pg.gd;
        }
        vec![
            Some(Tensor { shape: vec![n, 3], data: gm }),
            Some(Tensor { shape: vec![n, 3], data: gs }),
            Some(Tensor { shape: vec![n, 4], data: gq }),
            Some(Tensor { shape: dshape.clone(), data: gd }),
        ]
    })
}

/// Detector image `[rows, cols]` of the primitives for one view. Rotations
/// must already be unit quaternions.
pub fn render_xray(g: &mut Graph, v: &GaussianVars, geom: &ConeBeamGeometry, view: usize, truncate: bool) -> ModelResult<Var> {
    let prims = Rc::new(prims_from_graph(g, v)?);
    let img = render_kernel(&prims, geom, view, truncate)?;
    // the geometry was validated by the forward pass, so backward cannot fail
    let (geom, p2) = (geom.clone(), Rc::clone(&prims));
    let out = Tensor { shape: vec![geom.det_rows, geom.det_cols], data: img };
    Ok(push_gaussian_op(g, v, prims, out, move |grad| {
        render_backward(&p2, &geom, view, truncate, grad).expect("view validated in forward")
    }))
}

/// Density field `[nz, ny, nx]` sampled at voxel centers.
pub fn voxelize(g: &mut Graph, v: &GaussianVars, grid: VoxelGrid, truncate: bool) -> ModelResult<Var> {
    let prims = Rc::new(prims_from_graph(g, v)?);
    let vol = voxelize_kernel(&prims, &grid, truncate);
    let p2 = Rc::clone(&prims);
    let [nx, ny, nz] = grid.dims;
    let out = Tensor { shape: vec![nz, ny, nx], data: vol };
    Ok(push_gaussian_op(g, v, prims, out, move |grad| voxelize_backward(&p2, &grid, truncate, grad)))
}

/// Truncated render of a plain set.
pub fn render_set(gs: &GaussianSet, geom: &ConeBeamGeometry, view: usize) -> ModelResult<Vec<f64>> {
    render_kernel(&gs.prims()?, geom, view, true)
}

/// Truncated voxelization of a plain set into a cubic volume of side `n`.
pub fn voxelize_set(gs: &GaussianSet, n: usize, bbox_half: f64) -> ModelResult<Volume> {
    let grid = VoxelGrid::new([n, n, n], bbox_half)?;
    let data = voxelize_kernel(&gs.prims()?, &grid, true);
    Ok(Volume::from_f64(grid.dims, grid.voxel_size, &data)?)
}

pub const ILVG_MAGIC: [u8; 4] = *b"ILVG";
/// Center, scale, quaternion and density.
pub const ILVG_FIELDS: usize = 11;

/// `"ILVG"`, u32 count, then per primitive 11 little-endian f32 values.
pub fn encode_gaussians(gs: &GaussianSet) -> Vec<u8> {
    let mut out = ILVG_MAGIC.to_vec();
    out.extend_from_slice(&(gs.len() as u32).to_le_bytes());
    for j in 0..gs.len() {
        let fields = gs.centers[j].iter().chain(&gs.scales[j]).chain(&gs.rotations[j]).chain(std::iter::once(&gs.densities[j]));
        for &f in fields {
            out.extend_from_slice(&(f as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_gaussians_file(buf: &[u8]) -> ModelResult<GaussianSet> {
    if buf.len() < 8 || buf[..4] != ILVG_MAGIC {
        return Err(ModelError::GaussianFile("missing ILVG header".into()));
    }
    let n = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let expected = 8 + n * ILVG_FIELDS * 4;
    if buf.len() != expected {
        return Err(ModelError::GaussianFile(format!("{} bytes, expected {expected}", buf.len())));
    }
    let vals: Vec<f64> = buf[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let mut gs = GaussianSet::default();
    for r in vals.chunks_exact(ILVG_FIELDS) {
        gs.push([r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8], r[9]], r[10]);
    }
    Ok(gs)
}

pub fn save_gaussians(gs: &GaussianSet, path: impl AsRef<Path>) -> ModelResult<()> {
    fs::write(path, encode_gaussians(gs))?;
    Ok(())
}

pub fn load_gaussians(path: impl AsRef<Path>) -> ModelResult<GaussianSet> {
    decode_gaussians_file(&fs::read(path)?)
}
