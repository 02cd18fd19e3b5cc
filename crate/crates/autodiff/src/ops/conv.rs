//! 3-D convolutions on channels-last volumes `[D, H, W, C]`.
//!
//! `conv3d` weights are `[k, k, k, C_in, C_out]` and `conv_transpose3d`
//! weights are `[C_in, k, k, k, C_out]`, so both reduce to one GEMM per
//! slab of output (resp. input) depth with an im2col/col2im around it.

use super::linalg::gemm;
use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `a·s + kk − p` if it lands in `[0, limit)`.
#[inline]
fn tap(a: usize, kk: usize, s: usize, p: usize, limit: usize) -> Option<usize> {
    let t = (a * s + kk).checked_sub(p)?;
    (t < limit).then_some(t)
}

/// Index pairs linking a "coarse" grid (conv output / transposed-conv input)
/// with a "fine" grid through a `k³` stencil. For coarse slab `cz`, yields
/// `(row within slab, tap index, fine voxel)`.
#[derive(Clone, Copy)]
struct Stencil {
    coarse: [usize; 3],
    fine: [usize; 3],
    k: usize,
    s: usize,
    p: usize,
}

impl Stencil {
    fn for_each(&self, cz: usize, mut f: impl FnMut(usize, usize, usize)) {
        let [_, ch, cw] = self.coarse;
        let [fd, fh, fw] = self.fine;
        let k = self.k;
        for cy in 0..ch {
            for cx in 0..cw {
                let row = cy * cw + cx;
                for kz in 0..k {
                    let Some(z) = tap(cz, kz, self.s, self.p, fd) else { continue };
                    for ky in 0..k {
                        let Some(y) = tap(cy, ky, self.s, self.p, fh) else { continue };
                        for kx in 0..k {
                            let Some(x) = tap(cx, kx, self.s, self.p, fw) else { continue };
                            f(row, (kz * k + ky) * k + kx, (z * fh + y) * fw + x);
                        }
                    }
                }
            }
        }
    }
}

fn vol_shape(op: &'static str, s: &[usize]) -> AdResult<([usize; 3], usize)> {
    if s.len() != 4 {
        return Err(AdError::shape(op, format!("expected [D, H, W, C], got {s:?}")));
    }
    Ok(([s[0], s[1], s[2]], s[3]))
}

fn check_bias(g: &Graph, op: &'static str, b: Option<Var>, cout: usize) -> AdResult<()> {
    match b {
        Some(b) if g.shape(b) != [cout] => Err(AdError::shape(op, format!("bias {:?} for {cout} outputs", g.shape(b)))),
        _ => Ok(()),
    }
}

fn bias_grad(g: &Tensor, cout: usize) -> Tensor {
    let mut d = vec![0.0; cout];
    for row in g.data.chunks_exact(cout) {
        for (a, v) in d.iter_mut().zip(row) {
            *a += v;
        }
    }
    Tensor { shape: vec![cout], data: d }
}

impl Graph {
    /// Cubic-kernel convolution with stride `s` and zero padding `p`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, s: usize, p: usize) -> AdResult<Var> {
        let (din, cin) = vol_shape("conv3d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 5 || ws[0] != ws[1] || ws[1] != ws[2] || ws[3] != cin || s == 0 {
            return Err(AdError::shape("conv3d", format!("weights {ws:?} (stride {s}) for {cin} input channels")));
        }
        let (k, cout) = (ws[0], ws[4]);
        check_bias(self, "conv3d", b, cout)?;
        let mut dout = [0; 3];
        for a in 0..3 {
            if din[a] + 2 * p < k {
                return Err(AdError::shape("conv3d", format!("kernel {k} larger than padded input {din:?}")));
            }
            dout[a] = (din[a] + 2 * p - k) / s + 1;
        }
        let st = Stencil { coarse: dout, fine: din, k, s, p };
        let kc = k * k * k * cin;
        let rows = dout[1] * dout[2];
        let im2col = move |xd: &[f64], cz: usize, cols: &mut Vec<f64>| {
            cols.clear();
            cols.resize(rows * kc, 0.0);
            st.for_each(cz, |row, t, v| {
                cols[row * kc + t * cin..row * kc + (t + 1) * cin].copy_from_slice(&xd[v * cin..(v + 1) * cin]);
            });
        };
        let (xv, wv) = (self.rc(x), self.rc(w));
        let mut out = vec![0.0; dout[0] * rows * cout];
        if let Some(b) = b {
            let bd = &self.value(b).data;
            for r in out.chunks_exact_mut(cout) {
                r.copy_from_slice(bd);
            }
        }
        let mut cols = Vec::new();
        for cz in 0..dout[0] {
            im2col(&xv.data, cz, &mut cols);
            gemm(rows, kc, cout, &cols, false, &wv.data, false, &mut out[cz * rows * cout..(cz + 1) * rows * cout], 1.0);
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let oshape = vec![dout[0], dout[1], dout[2], cout];
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &parents, move |g, needs| {
            let mut dx = needs[0].then(|| vec![0.0; xv.numel()]);
            let mut dw = needs[1].then(|| vec![0.0; wv.numel()]);
            let mut cols = Vec::new();
            let mut dcols = vec![0.0; rows * kc];
            for cz in 0..dout[0] {
                let gs = &g.data[cz * rows * cout..(cz + 1) * rows * cout];
                if let Some(dw) = dw.as_mut() {
                    im2col(&xv.data, cz, &mut cols);
                    gemm(kc, rows, cout, &cols, true, gs, false, dw, 1.0);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(rows, cout, kc, gs, false, &wv.data, true, &mut dcols, 0.0);
                    st.for_each(cz, |row, t, v| {
                        for c in 0..cin {
                            dx[v * cin + c] += dcols[row * kc + t * cin + c];
                        }
                    });
                }
            }
            let mut res = vec![
                dx.map(|d| Tensor { shape: xv.shape.clone(), data: d }),
                dw.map(|d| Tensor { shape: wv.shape.clone(), data: d }),
            ];
            if needs.len() == 3 {
                res.push(needs[2].then(|| bias_grad(g, cout)));
            }
            res
        }))
    }

    /// Transposed convolution (the adjoint of `conv3d` in `x`): output
    /// extent `(n − 1)·s − 2p + k` per axis.
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Option<Var>, s: usize, p: usize) -> AdResult<Var> {
        let (din, cin) = vol_shape("conv_transpose3d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 5 || ws[0] != cin || ws[1] != ws[2] || ws[2] != ws[3] || s == 0 {
            return Err(AdError::shape(
                "conv_transpose3d",
                format!("weights {ws:?} (stride {s}) for {cin} input channels"),
            ));
        }
        let (k, cout) = (ws[1], ws[4]);
        check_bias(self, "conv_transpose3d", b, cout)?;
        let mut dout = [0; 3];
        for a in 0..3 {
            let full = (din[a] - 1) * s + k;
            if din[a] == 0 || full <= 2 * p {
                return Err(AdError::shape("conv_transpose3d", format!("empty output for {din:?}")));
            }
            dout[a] = full - 2 * p;
        }
        let st = Stencil { coarse: din, fine: dout, k, s, p };
        let kc = k * k * k * cout;
        let rows = din[1] * din[2];
        let (xv, wv) = (self.rc(x), self.rc(w));
        let mut out = vec![0.0; dout.iter().product::<usize>() * cout];
        let mut cols = vec![0.0; rows * kc];
        for cz in 0..din[0] {
            let xs = &xv.data[cz * rows * cin..(cz + 1) * rows * cin];
            gemm(rows, cin, kc, xs, false, &wv.data, false, &mut cols, 0.0);
            st.for_each(cz, |row, t, v| {
                for c in 0..cout {
                    out[v * cout + c] += cols[row * kc + t * cout + c];
                }
            });
        }
        if let Some(b) = b {
            let bd = &self.value(b).data;
            for r in out.chunks_exact_mut(cout) {
                for (o, bv) in r.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        let oshape = vec![dout[0], dout[1], dout[2], cout];
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &parents, move |g, needs| {
            let mut dx = needs[0].then(|| vec![0.0; xv.numel()]);
            let mut dw = needs[1].then(|| vec![0.0; wv.numel()]);
            let mut gcols = vec![0.0; rows * kc];
            for cz in 0..din[0] {
                gcols.iter_mut().for_each(|v| *v = 0.0);
                st.for_each(cz, |row, t, v| {
                    gcols[row * kc + t * cout..row * kc + (t + 1) * cout]
                        .copy_from_slice(&g.data[v * cout..(v + 1) * cout]);
                });
                if let Some(dx) = dx.as_mut() {
                    gemm(rows, kc, cin, &gcols, false, &wv.data, true, &mut dx[cz * rows * cin..(cz + 1) * rows * cin], 0.0);
                }
                if let Some(dw) = dw.as_mut() {
                    let xs = &xv.data[cz * rows * cin..(cz + 1) * rows * cin];
                    gemm(cin, rows, kc, xs, true, &gcols, false, dw, 1.0);
                }
            }
            let mut res = vec![
                dx.map(|d| Tensor { shape: xv.shape.clone(), data: d }),
                dw.map(|d| Tensor { shape: wv.shape.clone(), data: d }),
            ];
            if needs.len() == 3 {
                res.push(needs[2].then(|| bias_grad(g, cout)));
            }
            res
        }))
    }
}
