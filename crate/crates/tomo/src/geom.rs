//! Circular-trajectory cone-beam geometry with a flat-panel detector.
//!
//! World frame: isocenter at the origin, rotation axis `+z`. At gantry
//! angle `θ` the source sits at `dso·(cos θ, sin θ, 0)` and the detector
//! center at `-(dsd - dso)·(cos θ, sin θ, 0)`. The detector `u` axis is
//! `(-sin θ, cos θ, 0)` (horizontal, in the gantry plane) and `v` is `+z`.
//!
//! Detector coordinates are continuous pixel coordinates with the corner of
//! pixel `(0, 0)` at `(0, 0)`; the center of pixel `(row, col)` is at
//! `(u, v) = (col + 0.5, row + 0.5)`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{TomoError, TomoResult};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }
    pub fn x(self) -> f64 {
        self.0[0]
    }
    pub fn y(self) -> f64 {
        self.0[1]
    }
    pub fn z(self) -> f64 {
        self.0[2]
    }
    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }
    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a1, a2, a3] = self.0;
        let [b1, b2, b3] = o.0;
        Vec3([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1])
    }
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }
    /// Rotation about `+z` by `angle` radians.
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3([c * self.0[0] - s * self.0[1], s * self.0[0] + c * self.0[1], self.0[2]])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Per-pixel Plücker coordinates `(d, o × d)`, stored row-major as
/// `[rows][cols][6]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerEmbedding {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 6]>,
}

impl PluckerEmbedding {
    pub fn get(&self, row: usize, col: usize) -> [f64; 6] {
        self.data[row * self.cols + col]
    }
}

/// `k` equispaced gantry angles covering the full circle, starting at 0.
pub fn equispaced_angles(k: usize) -> Vec<f64> {
    (0..k).map(|i| 2.0 * PI * i as f64 / k as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeBeamGeometry {
    /// Source to isocenter distance (mm).
    pub dso: f64,
    /// Source to detector distance (mm).
    pub dsd: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    /// Detector pixel pitch (mm).
    pub det_pixel: f64,
    /// Gantry angles (radians), strictly increasing in `[0, 2π)`.
    pub angles: Vec<f64>,
    /// Half side of the cubic reconstruction box (mm).
    pub bbox_half: f64,
}

impl ConeBeamGeometry {
    pub fn new(
        dso: f64,
        dsd: f64,
        det_rows: usize,
        det_cols: usize,
        det_pixel: f64,
        angles: Vec<f64>,
        bbox_half: f64,
    ) -> TomoResult<Self> {
        let g = ConeBeamGeometry { dso, dsd, det_rows, det_cols, det_pixel, angles, bbox_half };
        g.validate()?;
        Ok(g)
    }

    /// Geometry whose square detector of `det_n` pixels just covers the
    /// magnified shadow of the reconstruction box at every angle.
    pub fn fitted(dso: f64, dsd: f64, det_n: usize, n_views: usize, bbox_half: f64) -> TomoResult<Self> {
        // The box's circumscribed cylinder has radius bbox_half·√2; its widest
        // shadow comes from the near edge, at depth dso - r.
        let r = bbox_half * 2f64.sqrt();
        let near = dso - r;
        if near <= 0.0 {
            return Err(TomoError::InvalidGeometry("source inside the reconstruction box".into()));
        }
        let half_u = r * dsd / (dso * dso - r * r).sqrt();
        let half_v = bbox_half * dsd / near;
        let width = 2.0 * half_u.max(half_v) * 1.02;
        Self::new(dso, dsd, det_n, det_n, width / det_n as f64, equispaced_angles(n_views), bbox_half)
    }

    pub fn validate(&self) -> TomoResult<()> {
        let fail = |m: &str| Err(TomoError::InvalidGeometry(m.to_string()));
        let finite = [self.dso, self.dsd, self.det_pixel, self.bbox_half].iter().all(|v| v.is_finite());
        if !finite {
            return fail("non-finite parameter");
        }
        if self.bbox_half <= 0.0 || self.det_pixel <= 0.0 {
            return fail("bbox_half and det_pixel must be positive");
        }
        if !(self.dso > self.bbox_half * 3f64.sqrt()) {
            return fail("dso must exceed bbox_half·√3 (source outside the volume)");
        }
        if !(self.dsd > self.dso) {
            return fail("dsd must exceed dso");
        }
        if self.det_rows < 2 || self.det_cols < 2 {
            return fail("detector needs at least 2 rows and 2 columns");
        }
        if self.angles.is_empty() {
            return fail("no gantry angles");
        }
        for (i, &a) in self.angles.iter().enumerate() {
            if !(0.0..2.0 * PI).contains(&a) {
                return fail("angles must lie in [0, 2π)");
            }
            if i > 0 && a <= self.angles[i - 1] {
                return fail("angles must be strictly increasing");
            }
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    /// Same acquisition, but the circular trajectory resampled to `n_views`
    /// equispaced angles.
    pub fn with_views(&self, n_views: usize) -> Self {
        ConeBeamGeometry { angles: equispaced_angles(n_views), ..self.clone() }
    }

    fn angle(&self, view: usize) -> TomoResult<f64> {
        self.angles
            .get(view)
            .copied()
            .ok_or(TomoError::ViewOutOfRange { index: view, n_views: self.angles.len() })
    }

    pub fn source_position(&self, view: usize) -> TomoResult<Vec3> {
        let a = self.angle(view)?;
        Ok(Vec3::new(self.dso * a.cos(), self.dso * a.sin(), 0.0))
    }

    /// Detector frame at `view`: (center, u axis, v axis).
    pub fn detector_frame(&self, view: usize) -> TomoResult<(Vec3, Vec3, Vec3)> {
        let a = self.angle(view)?;
        let (s, c) = a.sin_cos();
        let center = Vec3::new(-(self.dsd - self.dso) * c, -(self.dsd - self.dso) * s, 0.0);
        Ok((center, Vec3::new(-s, c, 0.0), Vec3::new(0.0, 0.0, 1.0)))
    }

    /// World position of continuous detector coordinate `(u, v)`.
    pub fn detector_point(&self, view: usize, u: f64, v: f64) -> TomoResult<Vec3> {
        let (center, eu, ev) = self.detector_frame(view)?;
        let du = (u - self.det_cols as f64 * 0.5) * self.det_pixel;
        let dv = (v - self.det_rows as f64 * 0.5) * self.det_pixel;
        Ok(center + eu * du + ev * dv)
    }

    /// Ray from the source through continuous detector coordinate `(u, v)`.
    pub fn ray(&self, view: usize, u: f64, v: f64) -> TomoResult<Ray> {
        let origin = self.source_position(view)?;
        let target = self.detector_point(view, u, v)?;
        Ok(Ray { origin, direction: (target - origin).normalized() })
    }

    /// Perspective projection of a world point onto the detector of `view`.
    ///
    /// Returns `(u, v, valid)`; `valid` is false for points at or behind the
    /// source plane and for points landing outside the detector.
    pub fn project_point(&self, view: usize, p: Vec3) -> TomoResult<(f64, f64, bool)> {
        let a = self.angle(view)?;
        let (s, c) = a.sin_cos();
        let src = Vec3::new(self.dso * c, self.dso * s, 0.0);
        let w = p - src;
        let depth = -(w.x() * c + w.y() * s);
        if depth <= 0.0 {
            return Ok((f64::NAN, f64::NAN, false));
        }
        let mag = self.dsd / depth;
        let u = (-w.x() * s + w.y() * c) * mag / self.det_pixel + self.det_cols as f64 * 0.5;
        let v = w.z() * mag / self.det_pixel + self.det_rows as f64 * 0.5;
        let valid = (0.0..=self.det_cols as f64).contains(&u) && (0.0..=self.det_rows as f64).contains(&v);
        Ok((u, v, valid))
    }
}

/// Row-major grid of rays through every detector pixel center of `view`.
pub fn view_rays(geom: &ConeBeamGeometry, view: usize) -> TomoResult<Vec<Ray>> {
    let origin = geom.source_position(view)?;
    let (center, eu, ev) = geom.detector_frame(view)?;
    let mut rays = Vec::with_capacity(geom.det_rows * geom.det_cols);
    for r in 0..geom.det_rows {
        let dv = (r as f64 + 0.5 - geom.det_rows as f64 * 0.5) * geom.det_pixel;
        for c in 0..geom.det_cols {
            let du = (c as f64 + 0.5 - geom.det_cols as f64 * 0.5) * geom.det_pixel;
            let target = center + eu * du + ev * dv;
            rays.push(Ray { origin, direction: (target - origin).normalized() });
        }
    }
    Ok(rays)
}

pub fn plucker(ray: &Ray) -> [f64; 6] {
    let d = ray.direction;
    let m = ray.origin.cross(d);
    [d.x(), d.y(), d.z(), m.x(), m.y(), m.z()]
}

pub fn plucker_embed(rays: &[Ray], rows: usize, cols: usize) -> TomoResult<PluckerEmbedding> {
    if rays.len() != rows * cols {
        return Err(TomoError::DimensionMismatch(format!(
            "{} rays for a {rows}x{cols} grid",
            rays.len()
        )));
    }
    Ok(PluckerEmbedding { rows, cols, data: rays.iter().map(plucker).collect() })
}
