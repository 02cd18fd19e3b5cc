use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

impl Graph {
    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> AdResult<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&c) = shape.last() else {
            return Err(AdError::shape("softmax", "scalar input"));
        };
        let xv = self.value(x);
        let mut out = vec![0.0; xv.numel()];
        for (row, o) in xv.data.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (oi, &v) in o.iter_mut().zip(row) {
                *oi = (v - m).exp();
                s += *oi;
            }
            for oi in o.iter_mut() {
                *oi /= s;
            }
        }
        let out = std::rc::Rc::new(Tensor { shape, data: out });
        let y = std::rc::Rc::clone(&out);
        Ok(self.push_op_rc(out, &[x], move |g, _| {
            let mut d = vec![0.0; g.numel()];
            for ((gr, yr), dr) in g.data.chunks_exact(c).zip(y.data.chunks_exact(c)).zip(d.chunks_exact_mut(c)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for i in 0..c {
                    dr[i] = yr[i] * (gr[i] - dot);
                }
            }
            vec![Some(Tensor { shape: g.shape.clone(), data: d })]
        }))
    }

    /// Layer norm over the last axis, with optional per-channel scale and shift.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>) -> AdResult<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&c) = shape.last() else {
            return Err(AdError::shape("layer_norm", "scalar input"));
        };
        if let Some((w, b)) = affine {
            if self.shape(w) != [c] || self.shape(b) != [c] {
                return Err(AdError::shape("layer_norm", format!("affine for {c} channels")));
            }
        }
        let xv = self.value(x);
        let rows = xv.numel() / c.max(1);
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.data[r * c..(r + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for i in 0..c {
                xhat[r * c + i] = (row[i] - mu) * is;
            }
        }
        let (out, parents, wv) = match affine {
            Some((w, b)) => {
                let (wd, bd) = (&self.value(w).data, &self.value(b).data);
                let out: Vec<f64> = xhat.iter().enumerate().map(|(i, v)| v * wd[i % c] + bd[i % c]).collect();
                (out, vec![x, w, b], Some(self.rc(w)))
            }
            None => (xhat.clone(), vec![x], None),
        };
        Ok(self.push_op(Tensor { shape: shape.clone(), data: out }, &parents, move |g, needs| {
            let dxhat: Vec<f64> = match &wv {
                Some(w) => g.data.iter().enumerate().map(|(i, v)| v * w.data[i % c]).collect(),
                None => g.data.clone(),
            };
            let gx = needs[0].then(|| {
                let mut d = vec![0.0; g.numel()];
                for r in 0..rows {
                    let dh = &dxhat[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let m1 = dh.iter().sum::<f64>() / c as f64;
                    let m2 = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for i in 0..c {
                        d[r * c + i] = inv_std[r] * (dh[i] - m1 - xh[i] * m2);
                    }
                }
                Tensor { shape: shape.clone(), data: d }
            });
            let mut res = vec![gx];
            if wv.is_some() {
                let mut gw = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for (i, v) in g.data.iter().enumerate() {
                    gw[i % c] += v * xhat[i];
                    gb[i % c] += v;
                }
                res.push(needs[1].then(|| Tensor { shape: vec![c], data: gw }));
                res.push(needs[2].then(|| Tensor { shape: vec![c], data: gb }));
            }
            res
        }))
    }
}
