//! Interpolation and fixed-kernel filtering. Sample positions are constants;
//! gradients flow to the sampled values only.

use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Linear interpolation taps `(i0, i1, w1)` for resampling `n_in → n_out`
/// with half-pixel centers and clamped borders.
fn resample_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Four taps and weights of a clamped bilinear lookup at `(x, y)` on `h × w`.
fn bilinear_taps(x: f64, y: f64, h: usize, w: usize) -> [(usize, f64); 4] {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    [
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ]
}

impl Graph {
    /// Trilinear resampling of `[D, H, W, C]` to `[dims..., C]`.
    pub fn trilinear_resample(&mut self, x: Var, dims: [usize; 3]) -> AdResult<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[..3].contains(&0) || dims.contains(&0) {
            return Err(AdError::shape("trilinear_resample", format!("{s:?} -> {dims:?}")));
        }
        let c = s[3];
        let tz = resample_taps(s[0], dims[0]);
        let ty = resample_taps(s[1], dims[1]);
        let tx = resample_taps(s[2], dims[2]);
        let n_out = dims[0] * dims[1] * dims[2];
        // eight (source voxel, weight) pairs per output voxel
        let mut taps = Vec::with_capacity(n_out * 8);
        for &(z0, z1, wz) in &tz {
            for &(y0, y1, wy) in &ty {
                for &(x0, x1, wx) in &tx {
                    for (z, fz) in [(z0, 1.0 - wz), (z1, wz)] {
                        for (y, fy) in [(y0, 1.0 - wy), (y1, wy)] {
                            for (xx, fx) in [(x0, 1.0 - wx), (x1, wx)] {
                                taps.push(((z * s[1] + y) * s[2] + xx, fz * fy * fx));
                            }
                        }
                    }
                }
            }
        }
        let xv = self.value(x);
        let mut out = vec![0.0; n_out * c];
        for (o, chunk) in taps.chunks_exact(8).enumerate() {
            for &(src, w) in chunk {
                for ch in 0..c {
                    out[o * c + ch] += w * xv.data[src * c + ch];
                }
            }
        }
        let oshape = vec![dims[0], dims[1], dims[2], c];
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &[x], move |g, _| {
            let mut d = vec![0.0; s.iter().product()];
            for (o, chunk) in taps.chunks_exact(8).enumerate() {
                for &(src, w) in chunk {
                    for ch in 0..c {
                        d[src * c + ch] += w * g.data[o * c + ch];
                    }
                }
            }
            vec![Some(Tensor { shape: s.clone(), data: d })]
        }))
    }

    /// Bilinear lookup in a stack of maps `[V, H, W, C]`. `coords` holds
    /// `n` continuous `(x, y)` positions per map (pixel centers at integers,
    /// borders clamped); entries with `valid[i] == false` output zeros.
    /// Returns `[V, n, C]`.
    pub fn bilinear_sample2d(&mut self, maps: Var, coords: &[(f64, f64)], valid: Option<&[bool]>) -> AdResult<Var> {
        let s = self.shape(maps).to_vec();
        if s.len() != 4 || s[1] == 0 || s[2] == 0 {
            return Err(AdError::shape("bilinear_sample2d", format!("maps {s:?}")));
        }
        let (nv, h, w, c) = (s[0], s[1], s[2], s[3]);
        if coords.len() % nv.max(1) != 0 || valid.is_some_and(|m| m.len() != coords.len()) {
            return Err(AdError::shape("bilinear_sample2d", format!("{} coordinates for {nv} maps", coords.len())));
        }
        let n = coords.len() / nv.max(1);
        let taps: Vec<Option<[(usize, f64); 4]>> = coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| valid.map_or(true, |m| m[i]).then(|| bilinear_taps(x, y, h, w)))
            .collect();
        let mv = self.value(maps);
        let mut out = vec![0.0; nv * n * c];
        for (i, t) in taps.iter().enumerate() {
            let Some(t) = t else { continue };
            let base = (i / n) * h * w;
            for &(p, wt) in t {
                for ch in 0..c {
                    out[i * c + ch] += wt * mv.data[(base + p) * c + ch];
                }
            }
        }
        Ok(self.push_op(Tensor { shape: vec![nv, n, c], data: out }, &[maps], move |g, _| {
            let mut d = vec![0.0; nv * h * w * c];
            for (i, t) in taps.iter().enumerate() {
                let Some(t) = t else { continue };
                let base = (i / n) * h * w;
                for &(p, wt) in t {
                    for ch in 0..c {
                        d[(base + p) * c + ch] += wt * g.data[i * c + ch];
                    }
                }
            }
            vec![Some(Tensor { shape: s.clone(), data: d })]
        }))
    }

    /// Separable "valid" filtering of `[B, H, W]` with the same 1-D taps on
    /// both axes.
    pub fn blur2d_valid(&mut self, x: Var, taps: &[f64]) -> AdResult<Var> {
        let y = self.filter_axis_valid(x, taps, 2)?;
        self.filter_axis_valid(y, taps, 1)
    }

    fn filter_axis_valid(&mut self, x: Var, taps: &[f64], axis: usize) -> AdResult<Var> {
        let s = self.shape(x).to_vec();
        let k = taps.len();
        if s.len() != 3 || k == 0 || s[axis] < k {
            return Err(AdError::shape("blur2d_valid", format!("{s:?} with {k} taps")));
        }
        let mut os = s.clone();
        os[axis] -= k - 1;
        let (b, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (os[1], os[2]);
        let step = if axis == 2 { 1 } else { w };
        let taps = taps.to_vec();
        let xv = self.value(x);
        let mut out = vec![0.0; b * oh * ow];
        for bi in 0..b {
            for r in 0..oh {
                for c in 0..ow {
                    let src = (bi * h + r) * w + c;
                    out[(bi * oh + r) * ow + c] = taps.iter().enumerate().map(|(t, tw)| tw * xv.data[src + t * step]).sum();
                }
            }
        }
        Ok(self.push_op(Tensor { shape: os, data: out }, &[x], move |g, _| {
            let mut d = vec![0.0; b * h * w];
            for bi in 0..b {
                for r in 0..oh {
                    for c in 0..ow {
                        let gv = g.data[(bi * oh + r) * ow + c];
                        let src = (bi * h + r) * w + c;
                        for (t, tw) in taps.iter().enumerate() {
                            d[src + t * step] += tw * gv;
                        }
                    }
                }
            }
            vec![Some(Tensor { shape: s.clone(), data: d })]
        }))
    }

    /// Normalize each row of `[N, 4]` to unit length.
    pub fn quat_normalize(&mut self, q: Var) -> AdResult<Var> {
        let s = self.shape(q).to_vec();
        if s.len() != 2 || s[1] != 4 {
            return Err(AdError::shape("quat_normalize", format!("{s:?}")));
        }
        let qv = self.value(q);
        let norms: Vec<f64> =
            qv.data.chunks_exact(4).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)).collect();
        let out: Vec<f64> = qv.data.iter().enumerate().map(|(i, v)| v / norms[i / 4]).collect();
        let unit = std::rc::Rc::new(Tensor { shape: s.clone(), data: out });
        let u = std::rc::Rc::clone(&unit);
        Ok(self.push_op_rc(unit, &[q], move |g, _| {
            let mut d = vec![0.0; g.numel()];
            for (r, n) in norms.iter().enumerate() {
                let (ur, gr) = (&u.data[4 * r..4 * r + 4], &g.data[4 * r..4 * r + 4]);
                let dot: f64 = ur.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..4 {
                    d[4 * r + i] = (gr[i] - ur[i] * dot) / n;
                }
            }
            vec![Some(Tensor { shape: g.shape.clone(), data: d })]
        }))
    }
}
