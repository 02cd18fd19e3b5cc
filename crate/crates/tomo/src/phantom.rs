//! Analytic ellipsoid phantoms.

use rand::Rng;

use crate::error::{TomoError, TomoResult};
use crate::volume::Volume;

/// Ellipsoid in normalized box coordinates: the reconstruction box spans
/// `[-1, 1]` along every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// ZYZ Euler angles (radians): `R = Rz(a)·Ry(b)·Rz(c)`.
    pub euler: [f64; 3],
    /// Added to every voxel whose center lies inside.
    pub density: f64,
}

impl Ellipsoid {
    pub fn sphere(center: [f64; 3], radius: f64, density: f64) -> Self {
        Ellipsoid { center, semi_axes: [radius; 3], euler: [0.0; 3], density }
    }

    fn rotation(&self) -> [[f64; 3]; 3] {
        let rz = |t: f64| {
            let (s, c) = t.sin_cos();
            [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
        };
        let (s, c) = self.euler[1].sin_cos();
        let ry = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]];
        matmul3(&matmul3(&rz(self.euler[0]), &ry), &rz(self.euler[2]))
    }
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhantomSpec {
    pub ellipsoids: Vec<Ellipsoid>,
}

impl PhantomSpec {
    /// Ten-ellipsoid 3D Shepp-Logan head with the high-contrast densities,
    /// so the clamped volume spans `[0, 1]` (skull 1.0, brain 0.2,
    /// ventricles 0.0, small features 0.3).
    pub fn shepp_logan() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        #[rustfmt::skip]
        let table: [([f64; 3], [f64; 3], f64, f64); 10] = [
            ([0.0, 0.0, 0.0],        [0.69, 0.92, 0.81],     0.0,          1.0),
            ([0.0, -0.0184, 0.0],    [0.6624, 0.874, 0.78],  0.0,         -0.8),
            ([0.22, 0.0, 0.0],       [0.11, 0.31, 0.22],   -18.0 * deg,   -0.2),
            ([-0.22, 0.0, 0.0],      [0.16, 0.41, 0.28],    18.0 * deg,   -0.2),
            ([0.0, 0.35, -0.15],     [0.21, 0.25, 0.41],     0.0,          0.1),
            ([0.0, 0.1, 0.25],       [0.046, 0.046, 0.05],   0.0,          0.1),
            ([0.0, -0.1, 0.25],      [0.046, 0.046, 0.05],   0.0,          0.1),
            ([-0.08, -0.605, 0.0],   [0.046, 0.023, 0.05],   0.0,          0.1),
            ([0.0, -0.606, 0.0],     [0.023, 0.023, 0.02],   0.0,          0.1),
            ([0.06, -0.605, 0.0],    [0.023, 0.046, 0.02],   0.0,          0.1),
        ];
        PhantomSpec {
            ellipsoids: table
                .iter()
                .map(|&(center, semi_axes, phi, density)| Ellipsoid {
                    center,
                    semi_axes,
                    euler: [phi, 0.0, 0.0],
                    density,
                })
                .collect(),
        }
    }

    /// A random head-like phantom: one body ellipsoid plus `n_inner` inner
    /// structures of random shape, orientation and (signed) density.
    pub fn random<R: Rng>(rng: &mut R, n_inner: usize) -> Self {
        let mut ellipsoids = vec![Ellipsoid {
            center: [0.0; 3],
            semi_axes: [rng.gen_range(0.6..0.85), rng.gen_range(0.6..0.85), rng.gen_range(0.6..0.85)],
            euler: [rng.gen_range(0.0..std::f64::consts::PI), 0.0, 0.0],
            density: rng.gen_range(0.3..0.6),
        }];
        for _ in 0..n_inner {
            ellipsoids.push(Ellipsoid {
                center: [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)],
                semi_axes: [rng.gen_range(0.08..0.3), rng.gen_range(0.08..0.3), rng.gen_range(0.08..0.3)],
                euler: [
                    rng.gen_range(0.0..std::f64::consts::PI),
                    rng.gen_range(0.0..std::f64::consts::PI),
                    rng.gen_range(0.0..std::f64::consts::PI),
                ],
                density: rng.gen_range(-0.3..0.5),
            });
        }
        PhantomSpec { ellipsoids }
    }
}

struct Prepared {
    center: [f64; 3],
    inv_axes: [f64; 3],
    rot: [[f64; 3]; 3],
    density: f64,
}

/// Rasterize `spec` onto a centered grid; each voxel takes the clamped sum
/// of the densities of the ellipsoids containing its center.
pub fn make_phantom(spec: &PhantomSpec, dims: [usize; 3], voxel_size: f64) -> TomoResult<Volume> {
    if dims.iter().any(|&d| d < 8) {
        return Err(TomoError::InvalidArgument(format!("phantom dims {dims:?} must be at least 8 per axis")));
    }
    let prepared: Vec<Prepared> = spec
        .ellipsoids
        .iter()
        .map(|e| Prepared {
            center: e.center,
            inv_axes: e.semi_axes.map(|a| 1.0 / a),
            rot: e.rotation(),
            density: e.density,
        })
        .collect();
    let mut vol = Volume::zeros(dims, voxel_size);
    let half = vol.half_extent();
    let origin = vol.origin();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = [
                    (origin.x() + i as f64 * voxel_size) / half[0],
                    (origin.y() + j as f64 * voxel_size) / half[1],
                    (origin.z() + k as f64 * voxel_size) / half[2],
                ];
                let value = density_at(&prepared, p);
                let idx = vol.index(i, j, k);
                vol.data[idx] = value.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(vol)
}

fn density_at(prepared: &[Prepared], p: [f64; 3]) -> f64 {
    let mut sum = 0.0;
    for e in prepared {
        let d = [p[0] - e.center[0], p[1] - e.center[1], p[2] - e.center[2]];
        let mut r2 = 0.0;
        for a in 0..3 {
            // local coordinate = Rᵀ d
            let l = e.rot[0][a] * d[0] + e.rot[1][a] * d[1] + e.rot[2][a] * d[2];
            let s = l * e.inv_axes[a];
            r2 += s * s;
        }
        if r2 <= 1.0 {
            sum += e.density;
        }
    }
    sum
}
