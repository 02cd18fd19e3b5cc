use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::tensor::{numel, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copy `src` (`[outer, len_src, inner]`) into `dst` (`[outer, len_dst, inner]`)
/// at offset `at` along the middle axis, or the reverse when `gather`.
fn block_copy(src: &mut [f64], dst: &mut [f64], outer: usize, len_small: usize, len_big: usize, inner: usize, at: usize, into_big: bool) {
    for o in 0..outer {
        let small = &mut src[o * len_small * inner..(o + 1) * len_small * inner];
        let big = &mut dst[(o * len_big + at) * inner..(o * len_big + at + len_small) * inner];
        if into_big {
            big.copy_from_slice(small);
        } else {
            small.copy_from_slice(big);
        }
    }
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> AdResult<Var> {
        let old = self.shape(x).to_vec();
        if numel(shape) != numel(&old) {
            return Err(AdError::shape("reshape", format!("{old:?} -> {shape:?}")));
        }
        let t = Tensor { shape: shape.to_vec(), data: self.value(x).data.clone() };
        Ok(self.push_op(t, &[x], move |g, _| vec![Some(Tensor { shape: old.clone(), data: g.data.clone() })]))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> AdResult<Var> {
        let Some(&first) = xs.first() else {
            return Err(AdError::invalid("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(AdError::invalid("concat", format!("axis {axis} of rank {}", base.len())));
        }
        let mut lens = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(AdError::shape("concat", format!("{base:?} with {s:?} on axis {axis}")));
            }
            lens.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = lens.iter().sum();
        let mut out = vec![0.0; outer * total * inner];
        let mut at = 0;
        for (&x, &l) in xs.iter().zip(&lens) {
            let mut src = self.value(x).data.clone();
            block_copy(&mut src, &mut out, outer, l, total, inner, at, true);
            at += l;
        }
        let mut oshape = base.clone();
        oshape[axis] = total;
        let shapes: Vec<Vec<usize>> = xs.iter().map(|&x| self.shape(x).to_vec()).collect();
        Ok(self.push_op(Tensor { shape: oshape, data: out }, xs, move |g, needs| {
            let mut g = g.data.clone();
            let mut at = 0;
            let mut res = Vec::with_capacity(lens.len());
            for (i, &l) in lens.iter().enumerate() {
                res.push(needs[i].then(|| {
                    let mut d = vec![0.0; outer * l * inner];
                    block_copy(&mut d, &mut g, outer, l, total, inner, at, false);
                    Tensor { shape: shapes[i].clone(), data: d }
                }));
                at += l;
            }
            res
        }))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> AdResult<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(AdError::invalid("slice", format!("{start}..{end} on axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let (len, l) = (shape[axis], end - start);
        let mut out = vec![0.0; outer * l * inner];
        let mut src = self.value(x).data.clone();
        block_copy(&mut out, &mut src, outer, l, len, inner, start, false);
        let mut oshape = shape.clone();
        oshape[axis] = l;
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &[x], move |g, _| {
            let mut d = vec![0.0; numel(&shape)];
            let mut gs = g.data.clone();
            block_copy(&mut gs, &mut d, outer, l, len, inner, start, true);
            vec![Some(Tensor { shape: shape.clone(), data: d })]
        }))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> AdResult<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(AdError::invalid("permute", format!("{perm:?} for rank {}", shape.len())));
        }
        let oshape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let istr = strides(&shape);
        // input offset of each output element
        let n = numel(&shape);
        let ostr = strides(&oshape);
        let mut map = vec![0usize; n];
        for (o, m) in map.iter_mut().enumerate() {
            let mut rem = o;
            let mut off = 0;
            for (a, &p) in perm.iter().enumerate() {
                let idx = rem / ostr[a];
                rem %= ostr[a];
                off += idx * istr[p];
            }
            *m = off;
        }
        let xv = self.value(x);
        let out: Vec<f64> = map.iter().map(|&i| xv.data[i]).collect();
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &[x], move |g, _| {
            let mut d = vec![0.0; n];
            for (o, &i) in map.iter().enumerate() {
                d[i] = g.data[o];
            }
            vec![Some(Tensor { shape: shape.clone(), data: d })]
        }))
    }

    /// Rows `idx` of `x` along axis 0; repeated indices accumulate gradients.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> AdResult<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || idx.iter().any(|&i| i >= shape[0]) {
            return Err(AdError::invalid("gather_rows", format!("indices out of range for {shape:?}")));
        }
        let row: usize = shape[1..].iter().product();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            out.extend_from_slice(&xv.data[i * row..(i + 1) * row]);
        }
        let mut oshape = shape.clone();
        oshape[0] = idx.len();
        let idx = idx.to_vec();
        Ok(self.push_op(Tensor { shape: oshape, data: out }, &[x], move |g, _| {
            let mut d = vec![0.0; numel(&shape)];
            for (k, &i) in idx.iter().enumerate() {
                for (a, v) in d[i * row..(i + 1) * row].iter_mut().zip(&g.data[k * row..(k + 1) * row]) {
                    *a += v;
                }
            }
            vec![Some(Tensor { shape: shape.clone(), data: d })]
        }))
    }
}
