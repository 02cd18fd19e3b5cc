//! Sampled trilinear (Joseph-style) line-integral projector and its exact
//! adjoint.
//!
//! Each detector pixel casts one ray from the source through the pixel
//! center. The ray is clipped to the support of the zero-padded trilinear
//! interpolant (voxel index range `(-1, n)` on every axis) and sampled at the
//! midpoints of steps of length `h = voxel_size / 2`; the pixel value is
//! `h · Σ interp(sample)`. The backprojector replays the same traversal and
//! scatters with the same weights, so the pair is adjoint to rounding.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{TomoError, TomoResult};
use crate::geom::{view_rays, ConeBeamGeometry, Ray, Vec3};
use crate::volume::{ProjectionSet, Volume};

/// Shape and spacing of a centered voxel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

impl Grid {
    pub fn new(dims: [usize; 3], voxel_size: f64) -> Self {
        Grid { dims, voxel_size }
    }

    pub fn of(v: &Volume) -> Self {
        Grid { dims: v.dims, voxel_size: v.voxel_size }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self) -> Vec3 {
        let h = |n: usize| (0.5 - n as f64 * 0.5) * self.voxel_size;
        Vec3::new(h(self.dims[0]), h(self.dims[1]), h(self.dims[2]))
    }
}

/// Visit every (voxel index, weight) pair of one ray's quadrature, with the
/// weights already multiplied by the step length.
#[inline]
fn trace_ray<F: FnMut(usize, f64)>(grid: &Grid, ray: &Ray, step: f64, mut visit: F) {
    let origin = grid.origin();
    let vs = grid.voxel_size;
    let n = grid.dims;
    // ray in index space: f(t) = (o + t d - origin) / vs
    let o = [
        (ray.origin.x() - origin.x()) / vs,
        (ray.origin.y() - origin.y()) / vs,
        (ray.origin.z() - origin.z()) / vs,
    ];
    let d = [ray.direction.x() / vs, ray.direction.y() / vs, ray.direction.z() / vs];
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let (lo, hi) = (-1.0, n[a] as f64);
        if d[a].abs() < 1e-15 {
            if o[a] <= lo || o[a] >= hi {
                return;
            }
            continue;
        }
        let ta = (lo - o[a]) / d[a];
        let tb = (hi - o[a]) / d[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    if !(t1 > t0) {
        return;
    }
    let count = ((t1 - t0) / step).ceil() as usize;
    let (nx, ny) = (n[0], n[1]);
    for s in 0..count {
        let t = t0 + (s as f64 + 0.5) * step;
        let f = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
        let i0 = [f[0].floor(), f[1].floor(), f[2].floor()];
        let w1 = [f[0] - i0[0], f[1] - i0[1], f[2] - i0[2]];
        let base = [i0[0] as isize, i0[1] as isize, i0[2] as isize];
        for corner in 0..8 {
            let mut idx = [0isize; 3];
            let mut w = step;
            for a in 0..3 {
                let hi = (corner >> a) & 1 == 1;
                idx[a] = base[a] + hi as isize;
                w *= if hi { w1[a] } else { 1.0 - w1[a] };
            }
            if w == 0.0 {
                continue;
            }
            if idx[0] < 0
                || idx[1] < 0
                || idx[2] < 0
                || idx[0] as usize >= nx
                || idx[1] as usize >= ny
                || idx[2] as usize >= n[2]
            {
                continue;
            }
            visit(idx[0] as usize + nx * (idx[1] as usize + ny * idx[2] as usize), w);
        }
    }
}

fn step_for(grid: &Grid) -> f64 {
    grid.voxel_size * 0.5
}

/// Forward projection of a raw field. Output is `[views][rows][cols]`.
pub fn forward_raw(grid: &Grid, x: &[f64], geom: &ConeBeamGeometry, views: &[usize]) -> TomoResult<Vec<f64>> {
    forward_raw_with_step(grid, x, geom, views, step_for(grid))
}

pub fn forward_raw_with_step(
    grid: &Grid,
    x: &[f64],
    geom: &ConeBeamGeometry,
    views: &[usize],
    step: f64,
) -> TomoResult<Vec<f64>> {
    if x.len() != grid.len() {
        return Err(TomoError::DimensionMismatch(format!("field of {} values for grid {:?}", x.len(), grid.dims)));
    }
    let per = geom.det_rows * geom.det_cols;
    let mut out = vec![0.0; per * views.len()];
    for (vi, &view) in views.iter().enumerate() {
        let rays = view_rays(geom, view)?;
        out[vi * per..(vi + 1) * per].par_iter_mut().zip(rays.par_iter()).for_each(|(px, ray)| {
            let mut acc = 0.0;
            trace_ray(grid, ray, step, |idx, w| acc += w * x[idx]);
            *px = acc;
        });
    }
    Ok(out)
}

/// Adjoint of [`forward_raw`]: `<forward(x), y> = <x, adjoint(y)>`.
pub fn adjoint_raw(grid: &Grid, y: &[f64], geom: &ConeBeamGeometry, views: &[usize]) -> TomoResult<Vec<f64>> {
    let per = geom.det_rows * geom.det_cols;
    if y.len() != per * views.len() {
        return Err(TomoError::DimensionMismatch(format!(
            "{} detector values for {} views of {per} pixels",
            y.len(),
            views.len()
        )));
    }
    let step = step_for(grid);
    // One buffer per view, summed in view order afterwards so the result does
    // not depend on scheduling.
    let partials: Vec<TomoResult<Vec<f64>>> = views
        .par_iter()
        .enumerate()
        .map(|(vi, &view)| {
            let rays = view_rays(geom, view)?;
            let mut acc = vec![0.0; grid.len()];
            for (ray, &val) in rays.iter().zip(&y[vi * per..(vi + 1) * per]) {
                if val == 0.0 {
                    continue;
                }
                trace_ray(grid, ray, step, |idx, w| acc[idx] += w * val);
            }
            Ok(acc)
        })
        .collect();
    let mut out = vec![0.0; grid.len()];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p?) {
            *o += v;
        }
    }
    Ok(out)
}

pub fn forward_project(v: &Volume, geom: &ConeBeamGeometry, views: &[usize]) -> TomoResult<ProjectionSet> {
    check_inside(v, geom)?;
    let raw = forward_raw(&Grid::of(v), &v.to_f64(), geom, views)?;
    // tiny negative values cannot occur (nonnegative weights) unless the
    // volume itself is negative; clamp so the set stays a valid attenuation image
    let images = raw.iter().map(|&p| p.max(0.0) as f32).collect();
    ProjectionSet::new(geom.clone(), views.to_vec(), images)
}

pub fn back_project(p: &ProjectionSet, grid: &Grid) -> TomoResult<Vec<f64>> {
    let y: Vec<f64> = p.images.iter().map(|&v| v as f64).collect();
    adjoint_raw(grid, &y, &p.geometry, &p.view_indices)
}

fn check_inside(v: &Volume, geom: &ConeBeamGeometry) -> TomoResult<()> {
    let he = v.half_extent();
    if he.iter().any(|&h| h > geom.bbox_half * (1.0 + 1e-9)) {
        return Err(TomoError::InvalidArgument(format!(
            "volume half extents {he:?} exceed the geometry box {}",
            geom.bbox_half
        )));
    }
    Ok(())
}

/// Add zero-mean Gaussian noise of standard deviation `sigma` to every pixel,
/// clamping at zero.
pub fn add_gaussian_noise<R: Rng>(p: &mut ProjectionSet, sigma: f64, rng: &mut R) -> TomoResult<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| TomoError::InvalidArgument(e.to_string()))?;
    for px in &mut p.images {
        *px = (*px as f64 + normal.sample(rng)).max(0.0) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::equispaced_angles;
    use crate::phantom::{make_phantom, PhantomSpec};
    use rand::{Rng, SeedableRng};

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn small_geom() -> ConeBeamGeometry {
        ConeBeamGeometry::fitted(1000.0, 1500.0, 24, 2, 8.0).unwrap()
    }

    #[test]
    fn zero_volume_projects_to_zero() {
        let g = small_geom();
        let grid = Grid::new([16; 3], 1.0);
        let p = forward_raw(&grid, &vec![0.0; grid.len()], &g, &[0, 1]).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
        let b = adjoint_raw(&grid, &vec![0.0; 2 * 24 * 24], &g, &[0, 1]).unwrap();
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_the_volume() {
        let g = small_geom();
        let grid = Grid::new([16; 3], 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..grid.len()).map(|_| rng.gen()).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = forward_raw(&grid, &x, &g, &[0, 1]).unwrap();
        let b = forward_raw(&grid, &x2, &g, &[0, 1]).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(2.0 * p, *q);
        }
    }

    #[test]
    fn uniform_cube_central_chord() {
        let n = 32;
        let geom = ConeBeamGeometry::fitted(1000.0, 1500.0, 33, 1, n as f64 * 0.5).unwrap();
        let v = Volume::from_data([n; 3], 1.0, vec![1.0; n * n * n]).unwrap();
        let p = forward_project(&v, &geom, &[0]).unwrap();
        // odd detector: pixel (16,16) is centered on the central ray
        let center = p.images[16 * 33 + 16] as f64;
        assert!((center - n as f64).abs() / (n as f64) < 0.02, "chord {center}");
    }

    #[test]
    fn adjointness_inner_product() {
        let g = small_geom();
        let grid = Grid::new([16; 3], 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..2 * 24 * 24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ax = forward_raw(&grid, &x, &g, &[0, 1]).unwrap();
            let aty = adjoint_raw(&grid, &y, &g, &[0, 1]).unwrap();
            let lhs = dot(&ax, &y);
            let rhs = dot(&x, &aty);
            let scale = dot(&ax, &ax).sqrt() * dot(&y, &y).sqrt();
            assert!((lhs - rhs).abs() <= 1e-5 * scale);
        }
    }

    #[test]
    fn single_pixel_backprojects_to_a_ray_tube() {
        let g = small_geom();
        let grid = Grid::new([16; 3], 1.0);
        let mut y = vec![0.0; 24 * 24];
        let (row, col) = (12, 9);
        y[row * 24 + col] = 1.0;
        let b = adjoint_raw(&grid, &y, &g, &[0]).unwrap();
        let ray = g.ray(0, col as f64 + 0.5, row as f64 + 0.5).unwrap();
        let origin = grid.origin();
        let mut touched = 0;
        for k in 0..16 {
            for j in 0..16 {
                for i in 0..16 {
                    let c = origin + Vec3::new(i as f64, j as f64, k as f64);
                    // distance from the voxel center to the ray
                    let w = c - ray.origin;
                    let dist = (w - ray.direction * w.dot(ray.direction)).norm();
                    let val = b[i + 16 * (j + 16 * k)];
                    if dist > 3f64.sqrt() {
                        assert_eq!(val, 0.0, "voxel {i},{j},{k} at distance {dist}");
                    }
                    if dist < 0.5 {
                        assert!(val > 0.0);
                        touched += 1;
                    }
                }
            }
        }
        assert!(touched > 0);
    }

    #[test]
    fn step_refinement_changes_little() {
        let v = make_phantom(&PhantomSpec::shepp_logan(), [32; 3], 1.0).unwrap();
        let g = ConeBeamGeometry::fitted(1000.0, 1500.0, 32, 4, 16.0).unwrap();
        let grid = Grid::of(&v);
        let x = v.to_f64();
        let views = [0, 1, 2, 3];
        let a = forward_raw_with_step(&grid, &x, &g, &views, 0.5).unwrap();
        let b = forward_raw_with_step(&grid, &x, &g, &views, 0.25).unwrap();
        let diff: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        let norm: f64 = a.iter().map(|p| p * p).sum::<f64>();
        assert!((diff / norm).sqrt() < 0.01);
    }

    #[test]
    fn translation_shifts_the_projection() {
        let n = 32;
        // shrunk so the shifted copy stays inside the box
        let mut spec = PhantomSpec::shepp_logan();
        for e in &mut spec.ellipsoids {
            e.center = e.center.map(|c| c * 0.7);
            e.semi_axes = e.semi_axes.map(|a| a * 0.7);
        }
        let mut shifted = spec.clone();
        // +4 voxels along y, which is the detector u axis at angle 0
        for e in &mut shifted.ellipsoids {
            e.center[1] += 4.0 / 16.0;
        }
        let a = make_phantom(&spec, [n; 3], 1.0).unwrap();
        let b = make_phantom(&shifted, [n; 3], 1.0).unwrap();
        let geom = ConeBeamGeometry::new(1000.0, 1500.0, 48, 48, 1.5, equispaced_angles(4), 16.0).unwrap();
        let pa = forward_project(&a, &geom, &[0]).unwrap();
        let pb = forward_project(&b, &geom, &[0]).unwrap();
        let centroid_u = |img: &[f32]| {
            let (mut s, mut w) = (0.0, 0.0);
            for (i, &p) in img.iter().enumerate() {
                s += (i % 48) as f64 * p as f64;
                w += p as f64;
            }
            s / w
        };
        let shift = centroid_u(&pb.images) - centroid_u(&pa.images);
        // 4 mm at magnification 1.5 over 1.5 mm pixels
        assert!((shift - 4.0).abs() < 1.0, "shift {shift}");
        // and the shifted image matches the original moved by 4 pixels away from the boundary
        let mut err = 0.0;
        let mut norm = 0.0;
        for r in 0..48 {
            for c in 4..44 {
                let d = pb.images[r * 48 + c + 4] as f64 - pa.images[r * 48 + c] as f64;
                err += d * d;
                norm += (pa.images[r * 48 + c] as f64).powi(2);
            }
        }
        assert!((err / norm).sqrt() < 0.1);
    }

    #[test]
    fn volume_outside_box_rejected() {
        let v = Volume::zeros([40; 3], 1.0);
        let geom = small_geom();
        assert!(forward_project(&v, &geom, &[0]).is_err());
    }

    #[test]
    fn noise_off_by_default_and_nonnegative() {
        let v = make_phantom(&PhantomSpec::shepp_logan(), [16; 3], 1.0).unwrap();
        let geom = small_geom();
        let mut p = forward_project(&v, &geom, &[0]).unwrap();
        let clean = p.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        add_gaussian_noise(&mut p, 0.0, &mut rng).unwrap();
        assert_eq!(p, clean);
        add_gaussian_noise(&mut p, 0.5, &mut rng).unwrap();
        assert!(p.images.iter().all(|&v| v >= 0.0));
        assert_ne!(p, clean);
    }
}
