use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Pooling over the leading (view) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Max,
}

/// `(outer, len, inner)` factorization of `shape` around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.data.iter().sum();
        let shape = xv.shape.clone();
        self.push_op(Tensor::scalar(s), &[x], move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over one axis, which is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> AdResult<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(AdError::invalid("mean_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xv.data[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v / len as f64;
                }
            }
        }
        let mut oshape = shape.clone();
        oshape.remove(axis);
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &[x], move |g, _| {
            let mut d = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        d[(o * len + l) * inner + i] = g.data[o * inner + i] / len as f64;
                    }
                }
            }
            vec![Some(Tensor { shape: shape.clone(), data: d })]
        }))
    }

    /// Max over one axis, which is removed. Ties send the gradient to the
    /// first maximal entry.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> AdResult<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(AdError::invalid("max_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let v = xv.data[(o * len + l) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = l;
                    }
                }
            }
        }
        let mut oshape = shape.clone();
        oshape.remove(axis);
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &[x], move |g, _| {
            let mut d = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for i in 0..inner {
                    d[(o * len + arg[o * inner + i]) * inner + i] = g.data[o * inner + i];
                }
            }
            vec![Some(Tensor { shape: shape.clone(), data: d })]
        }))
    }

    /// Mean or max over axis 0 of `x` (`[n, ...]`) counting only entries
    /// whose mask is set. `mask` has one flag per `(view, position)` where a
    /// position indexes `shape[1..rank-1]`; the last axis is channels. A
    /// position no view sees pools to zero.
    pub fn masked_pool(&mut self, x: Var, mask: &[bool], kind: PoolKind) -> AdResult<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(AdError::shape("masked_pool", format!("rank {} input", shape.len())));
        }
        let n = shape[0];
        let c = shape[shape.len() - 1];
        let p: usize = shape[1..shape.len() - 1].iter().product();
        if mask.len() != n * p {
            return Err(AdError::shape("masked_pool", format!("{} mask flags for {n}x{p}", mask.len())));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; p * c];
        // per output element: the contributing view (max) or the count (mean)
        let mut arg = vec![usize::MAX; p * c];
        let mut count = vec![0usize; p];
        for pos in 0..p {
            for v in 0..n {
                if !mask[v * p + pos] {
                    continue;
                }
                count[pos] += 1;
                let src = &xv.data[(v * p + pos) * c..(v * p + pos + 1) * c];
                for ch in 0..c {
                    let o = pos * c + ch;
                    match kind {
                        PoolKind::Mean => out[o] += src[ch],
                        PoolKind::Max => {
                            if arg[o] == usize::MAX || src[ch] > out[o] {
                                out[o] = src[ch];
                                arg[o] = v;
                            }
                        }
                    }
                }
            }
            if kind == PoolKind::Mean && count[pos] > 0 {
                for ch in 0..c {
                    out[pos * c + ch] /= count[pos] as f64;
                }
            }
        }
        let oshape = shape[1..].to_vec();
        let mask = mask.to_vec();
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &[x], move |g, _| {
            let mut d = vec![0.0; n * p * c];
            for pos in 0..p {
                match kind {
                    PoolKind::Mean => {
                        if count[pos] == 0 {
                            continue;
                        }
                        let w = 1.0 / count[pos] as f64;
                        for v in (0..n).filter(|&v| mask[v * p + pos]) {
                            for ch in 0..c {
                                d[(v * p + pos) * c + ch] = g.data[pos * c + ch] * w;
                            }
                        }
                    }
                    PoolKind::Max => {
                        for ch in 0..c {
                            let v = arg[pos * c + ch];
                            if v != usize::MAX {
                                d[(v * p + pos) * c + ch] = g.data[pos * c + ch];
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor { shape: shape.clone(), data: d })]
        }))
    }
}
