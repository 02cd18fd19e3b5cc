//! `.ilv` binary files and PGM slice export.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "ILV1"  u8 kind
//! kind 0 (volume):      u32 nx, ny, nz; f64 voxel_size; f32 × nx·ny·nz
//! kind 1 (projections): u32 n_images, det_rows, det_cols; f64 det_pixel;
//!                       f64 dso, dsd, bbox_half; u32 n_angles; f64 × n_angles;
//!                       u32 × n_images view indices; f32 × n_images·rows·cols
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{TomoError, TomoResult};
use crate::geom::ConeBeamGeometry;
use crate::volume::{ProjectionSet, Volume};

pub const MAGIC: [u8; 4] = *b"ILV1";
pub const KIND_VOLUME: u8 = 0;
pub const KIND_PROJECTIONS: u8 = 1;

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(25 + 4 * v.data.len());
    out.extend_from_slice(&MAGIC);
    out.push(KIND_VOLUME);
    for d in v.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&v.voxel_size.to_le_bytes());
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn encode_projections(p: &ProjectionSet) -> Vec<u8> {
    let g = &p.geometry;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(KIND_PROJECTIONS);
    for d in [p.n_images(), g.det_rows, g.det_cols] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for f in [g.det_pixel, g.dso, g.dsd, g.bbox_half] {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out.extend_from_slice(&(g.angles.len() as u32).to_le_bytes());
    for a in &g.angles {
        out.extend_from_slice(&a.to_le_bytes());
    }
    for &v in &p.view_indices {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for x in &p.images {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> TomoResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TomoError::Truncated { expected: self.pos + n, found: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> TomoResult<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> TomoResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn header(&mut self, kind: u8) -> TomoResult<()> {
        let magic: [u8; 4] = self.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(TomoError::BadMagic { expected: MAGIC, found: magic });
        }
        let found = self.take(1)?[0];
        if found != kind {
            return Err(TomoError::WrongKind { expected: kind, found });
        }
        Ok(())
    }
    /// Remaining bytes must be exactly `count` f32 values.
    fn payload(&mut self, count: usize) -> TomoResult<Vec<f32>> {
        let expected = count * 4;
        let found = self.buf.len() - self.pos;
        if found < expected {
            return Err(TomoError::Truncated { expected, found });
        }
        if found > expected {
            return Err(TomoError::Oversized { expected, found });
        }
        let bytes = self.take(expected)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_volume(buf: &[u8]) -> TomoResult<Volume> {
    let mut r = Reader { buf, pos: 0 };
    r.header(KIND_VOLUME)?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let voxel_size = r.f64()?;
    let data = r.payload(dims[0] * dims[1] * dims[2])?;
    Volume::from_data(dims, voxel_size, data)
}

pub fn decode_projections(buf: &[u8]) -> TomoResult<ProjectionSet> {
    let mut r = Reader { buf, pos: 0 };
    r.header(KIND_PROJECTIONS)?;
    let (n, rows, cols) = (r.u32()?, r.u32()?, r.u32()?);
    let det_pixel = r.f64()?;
    let (dso, dsd, bbox_half) = (r.f64()?, r.f64()?, r.f64()?);
    let n_angles = r.u32()?;
    let angles = (0..n_angles).map(|_| r.f64()).collect::<TomoResult<Vec<_>>>()?;
    let views = (0..n).map(|_| r.u32()).collect::<TomoResult<Vec<_>>>()?;
    let images = r.payload(n * rows * cols)?;
    let geometry = ConeBeamGeometry::new(dso, dsd, rows, cols, det_pixel, angles, bbox_half)?;
    ProjectionSet::new(geometry, views, images)
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> TomoResult<()> {
    fs::write(path, encode_volume(v))?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> TomoResult<Volume> {
    decode_volume(&fs::read(path)?)
}

pub fn save_projections(p: &ProjectionSet, path: impl AsRef<Path>) -> TomoResult<()> {
    fs::write(path, encode_projections(p))?;
    Ok(())
}

pub fn load_projections(path: impl AsRef<Path>) -> TomoResult<ProjectionSet> {
    decode_projections(&fs::read(path)?)
}

/// Binary PGM (P5) of a row-major image, mapping `[0, 1]` linearly onto
/// `[0, 255]` (values outside are clamped).
pub fn encode_pgm(rows: usize, cols: usize, pixels: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[f64]) -> TomoResult<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(rows, cols, pixels))?;
    Ok(())
}
