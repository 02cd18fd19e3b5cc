use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `c = op(a)·op(b) + beta·c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
/// With `a_t` the slice holds `aᵀ` (`k×m` row-major); likewise `b_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the index ranges implied by the dimensions
    // and strides above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AdError::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(a).data, false, &self.value(b).data, false, &mut out, 0.0);
        let (av, bv) = (self.rc(a), self.rc(b));
        Ok(self.push_op(Tensor { shape: vec![m, n], data: out }, &[a, b], move |g, needs| {
            let ga = needs[0].then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, &g.data, false, &bv.data, true, &mut d, 0.0);
                Tensor { shape: vec![m, k], data: d }
            });
            let gb = needs[1].then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, &av.data, true, &g.data, false, &mut d, 0.0);
                Tensor { shape: vec![k, n], data: d }
            });
            vec![ga, gb]
        }))
    }

    /// `x·w + b` over the last axis of `x`; `w` is `[in, out]`, `b` is `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> AdResult<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(AdError::shape("linear", format!("x {sx:?}, w {sw:?}")));
        }
        let (din, dout) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(AdError::shape("linear", format!("bias {:?} for {dout} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / din;
        let mut out = vec![0.0; rows * dout];
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for r in 0..rows {
                out[r * dout..(r + 1) * dout].copy_from_slice(bv);
            }
        }
        gemm(rows, din, dout, &self.value(x).data, false, &self.value(w).data, false, &mut out, 1.0);
        let mut oshape = sx.clone();
        *oshape.last_mut().unwrap() = dout;
        let (xv, wv) = (self.rc(x), self.rc(w));
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &parents, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut d = vec![0.0; rows * din];
                gemm(rows, dout, din, &g.data, false, &wv.data, true, &mut d, 0.0);
                Tensor { shape: sx.clone(), data: d }
            });
            let gw = needs[1].then(|| {
                let mut d = vec![0.0; din * dout];
                gemm(din, rows, dout, &xv.data, true, &g.data, false, &mut d, 0.0);
                Tensor { shape: vec![din, dout], data: d }
            });
            let mut res = vec![gx, gw];
            if needs.len() == 3 {
                res.push(needs[2].then(|| {
                    let mut d = vec![0.0; dout];
                    for r in 0..rows {
                        for (acc, v) in d.iter_mut().zip(&g.data[r * dout..(r + 1) * dout]) {
                            *acc += v;
                        }
                    }
                    Tensor { shape: vec![dout], data: d }
                }));
            }
            res
        }))
    }
}
