//! Multi-head scaled dot-product attention with optional query/key groups
//! and key masking.

use super::linalg::gemm;
use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Restricts attention to blocks: queries in `queries[g]` see only keys in
/// `keys[g]`. Queries in no group output zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnGroups {
    pub queries: Vec<Vec<usize>>,
    pub keys: Vec<Vec<usize>>,
}

/// Softmax weights of one (group, head) block, kept for the reverse pass.
struct Block {
    q_idx: Vec<usize>,
    k_idx: Vec<usize>,
    head: usize,
    probs: Vec<f64>,
}

fn gather_cols(src: &[f64], width: usize, rows: &[usize], lo: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        out.extend_from_slice(&src[r * width + lo..r * width + lo + n]);
    }
    out
}

fn scatter_cols(dst: &mut [f64], width: usize, rows: &[usize], lo: usize, n: usize, vals: &[f64]) {
    for (i, &r) in rows.iter().enumerate() {
        for (d, v) in dst[r * width + lo..r * width + lo + n].iter_mut().zip(&vals[i * n..(i + 1) * n]) {
            *d += v;
        }
    }
}

impl Graph {
    /// `q: [Nq, D]`, `k: [Nk, D]`, `v: [Nk, Dv]` with `D` and `Dv`
    /// divisible by `heads`. Scores are scaled by `1/√(D/heads)`. Keys with
    /// `key_mask[j] == false` are ignored; a query with no visible key
    /// outputs zeros. Returns `[Nq, Dv]` (heads concatenated).
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: Option<&AttnGroups>,
        key_mask: Option<&[bool]>,
    ) -> AdResult<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
            return Err(AdError::shape("attention", format!("q {sq:?}, k {sk:?}, v {sv:?}")));
        }
        let (nq, nk, d, dv) = (sq[0], sk[0], sq[1], sv[1]);
        if heads == 0 || d % heads != 0 || dv % heads != 0 {
            return Err(AdError::invalid("attention", format!("{heads} heads for widths {d}/{dv}")));
        }
        if key_mask.is_some_and(|m| m.len() != nk) {
            return Err(AdError::shape("attention", format!("key mask for {nk} keys")));
        }
        let all_groups;
        let groups = match groups {
            Some(g) => {
                if g.queries.len() != g.keys.len()
                    || g.queries.iter().flatten().any(|&i| i >= nq)
                    || g.keys.iter().flatten().any(|&j| j >= nk)
                {
                    return Err(AdError::invalid("attention", "group indices out of range"));
                }
                g
            }
            None => {
                all_groups = AttnGroups { queries: vec![(0..nq).collect()], keys: vec![(0..nk).collect()] };
                &all_groups
            }
        };
        let (dh, dvh) = (d / heads, dv / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.rc(q), self.rc(k), self.rc(v));
        let mut out = vec![0.0; nq * dv];
        let mut blocks = Vec::new();
        for (qi, ki) in groups.queries.iter().zip(&groups.keys) {
            let k_idx: Vec<usize> = ki.iter().copied().filter(|&j| key_mask.map_or(true, |m| m[j])).collect();
            if qi.is_empty() || k_idx.is_empty() {
                continue;
            }
            let (m, n) = (qi.len(), k_idx.len());
            for head in 0..heads {
                let qh = gather_cols(&qv.data, d, qi, head * dh, dh);
                let kh = gather_cols(&kv.data, d, &k_idx, head * dh, dh);
                let vh = gather_cols(&vv.data, dv, &k_idx, head * dvh, dvh);
                let mut probs = vec![0.0; m * n];
                gemm(m, dh, n, &qh, false, &kh, true, &mut probs, 0.0);
                for row in probs.chunks_exact_mut(n) {
                    let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
                    let mut s = 0.0;
                    for p in row.iter_mut() {
                        *p = (*p * scale - mx).exp();
                        s += *p;
                    }
                    row.iter_mut().for_each(|p| *p /= s);
                }
                let mut oh = vec![0.0; m * dvh];
                gemm(m, n, dvh, &probs, false, &vh, false, &mut oh, 0.0);
                scatter_cols(&mut out, dv, qi, head * dvh, dvh, &oh);
                blocks.push(Block { q_idx: qi.clone(), k_idx: k_idx.clone(), head, probs });
            }
        }
        Ok(self.push_op(Tensor { shape: vec![nq, dv], data: out }, &[q, k, v], move |g, needs| {
            let mut dq = vec![0.0; nq * d];
            let mut dk = vec![0.0; nk * d];
            let mut dvv = vec![0.0; nk * dv];
            for b in &blocks {
                let (m, n, h) = (b.q_idx.len(), b.k_idx.len(), b.head);
                let go = gather_cols(&g.data, dv, &b.q_idx, h * dvh, dvh);
                let vh = gather_cols(&vv.data, dv, &b.k_idx, h * dvh, dvh);
                if needs[2] {
                    let mut gv = vec![0.0; n * dvh];
                    gemm(n, m, dvh, &b.probs, true, &go, false, &mut gv, 0.0);
                    scatter_cols(&mut dvv, dv, &b.k_idx, h * dvh, dvh, &gv);
                }
                if !(needs[0] || needs[1]) {
                    continue;
                }
                let mut ds = vec![0.0; m * n];
                gemm(m, dvh, n, &go, false, &vh, true, &mut ds, 0.0);
                for (dr, pr) in ds.chunks_exact_mut(n).zip(b.probs.chunks_exact(n)) {
                    let dot: f64 = dr.iter().zip(pr).map(|(a, p)| a * p).sum();
                    for (x, p) in dr.iter_mut().zip(pr) {
                        *x = p * (*x - dot) * scale;
                    }
                }
                if needs[0] {
                    let kh = gather_cols(&kv.data, d, &b.k_idx, h * dh, dh);
                    let mut gq = vec![0.0; m * dh];
                    gemm(m, n, dh, &ds, false, &kh, false, &mut gq, 0.0);
                    scatter_cols(&mut dq, d, &b.q_idx, h * dh, dh, &gq);
                }
                if needs[1] {
                    let qh = gather_cols(&qv.data, d, &b.q_idx, h * dh, dh);
                    let mut gk = vec![0.0; n * dh];
                    gemm(n, m, dh, &ds, true, &qh, false, &mut gk, 0.0);
                    scatter_cols(&mut dk, d, &b.k_idx, h * dh, dh, &gk);
                }
            }
            vec![
                needs[0].then(|| Tensor { shape: vec![nq, d], data: dq }),
                needs[1].then(|| Tensor { shape: vec![nk, d], data: dk }),
                needs[2].then(|| Tensor { shape: vec![nk, dv], data: dvv }),
            ]
        }))
    }
}
