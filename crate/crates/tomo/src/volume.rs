use crate::error::{TomoError, TomoResult};
use crate::geom::{ConeBeamGeometry, Vec3};

/// Axis-aligned voxel grid centered on the isocenter.
///
/// Voxel `(i, j, k)` has its center at `((i + 0.5) - nx/2)·voxel_size` along
/// x (likewise y, z), and is stored at `i + nx·(j + ny·k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], voxel_size: f64) -> Self {
        Volume { dims, voxel_size, data: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn from_data(dims: [usize; 3], voxel_size: f64, data: Vec<f32>) -> TomoResult<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(TomoError::DimensionMismatch(format!(
                "{} values for dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        if !(voxel_size > 0.0) {
            return Err(TomoError::InvalidArgument("voxel_size must be positive".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TomoError::NonFinite(i));
        }
        Ok(Volume { dims, voxel_size, data })
    }

    pub fn from_f64(dims: [usize; 3], voxel_size: f64, data: &[f64]) -> TomoResult<Self> {
        Self::from_data(dims, voxel_size, data.iter().map(|&v| v as f32).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    /// World position of the center of voxel (0, 0, 0).
    pub fn origin(&self) -> Vec3 {
        let h = |n: usize| (0.5 - n as f64 * 0.5) * self.voxel_size;
        Vec3::new(h(self.dims[0]), h(self.dims[1]), h(self.dims[2]))
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin() + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Half extents of the grid along each axis (mm).
    pub fn half_extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.voxel_size * 0.5)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn clamped(&self, lo: f32, hi: f32) -> Volume {
        Volume { data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(), ..self.clone() }
    }

    /// Slice `index` perpendicular to `axis` (0 = x, 1 = y, 2 = z), as a
    /// row-major image. For axis 2 the image is `[ny][nx]`, for axis 1
    /// `[nz][nx]`, for axis 0 `[nz][ny]`.
    pub fn slice(&self, axis: usize, index: usize) -> TomoResult<(usize, usize, Vec<f64>)> {
        if axis > 2 || index >= self.dims[axis] {
            return Err(TomoError::InvalidArgument(format!(
                "slice {index} along axis {axis} outside dims {:?}",
                self.dims
            )));
        }
        let [nx, ny, nz] = self.dims;
        let (rows, cols) = match axis {
            0 => (nz, ny),
            1 => (nz, nx),
            _ => (ny, nx),
        };
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let (i, j, k) = match axis {
                    0 => (index, c, r),
                    1 => (c, index, r),
                    _ => (c, r, index),
                };
                out.push(self.get(i, j, k) as f64);
            }
        }
        Ok((rows, cols, out))
    }
}

/// Detector images for a subset of the trajectory's views.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub geometry: ConeBeamGeometry,
    /// Trajectory angle index of each stored image.
    pub view_indices: Vec<usize>,
    /// `[n_images][det_rows][det_cols]`, row-major.
    pub images: Vec<f32>,
}

impl ProjectionSet {
    pub fn new(geometry: ConeBeamGeometry, view_indices: Vec<usize>, images: Vec<f32>) -> TomoResult<Self> {
        geometry.validate()?;
        let per = geometry.det_rows * geometry.det_cols;
        if images.len() != per * view_indices.len() {
            return Err(TomoError::DimensionMismatch(format!(
                "{} pixels for {} views of {}x{}",
                images.len(),
                view_indices.len(),
                geometry.det_rows,
                geometry.det_cols
            )));
        }
        if let Some(&v) = view_indices.iter().find(|&&v| v >= geometry.n_views()) {
            return Err(TomoError::ViewOutOfRange { index: v, n_views: geometry.n_views() });
        }
        if let Some(i) = images.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(TomoError::NonFinite(i));
        }
        Ok(ProjectionSet { geometry, view_indices, images })
    }

    pub fn n_images(&self) -> usize {
        self.view_indices.len()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.geometry.det_rows * self.geometry.det_cols
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.images[i * n..(i + 1) * n]
    }

    /// Keep only the images whose trajectory index is in `views`, in that order.
    pub fn select(&self, views: &[usize]) -> TomoResult<ProjectionSet> {
        let mut images = Vec::with_capacity(views.len() * self.pixels_per_image());
        for &v in views {
            let pos = self.view_indices.iter().position(|&w| w == v).ok_or_else(|| {
                TomoError::InvalidArgument(format!("view {v} is not present in the projection set"))
            })?;
            images.extend_from_slice(self.image(pos));
        }
        Ok(ProjectionSet { geometry: self.geometry.clone(), view_indices: views.to_vec(), images })
    }
}

/// Map Hounsfield units onto `[0, 1]` using the window `[-1000, 1000]`.
pub fn hu_normalize(raw_hu: &[f64], dims: [usize; 3], voxel_size: f64) -> TomoResult<Volume> {
    if let Some(i) = raw_hu.iter().position(|v| !v.is_finite()) {
        return Err(TomoError::NonFinite(i));
    }
    let data = raw_hu.iter().map(|&hu| hu_to_unit(hu) as f32).collect();
    Volume::from_data(dims, voxel_size, data)
}

#[inline]
pub fn hu_to_unit(hu: f64) -> f64 {
    ((hu + 1000.0) / 2000.0).clamp(0.0, 1.0)
}
