//! Pointwise ops. Binary ops broadcast the right operand when its shape is a
//! suffix of the left one (a bias row over tokens, a scalar over anything).

use std::f64::consts::PI;

use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

/// Sum `g` (shape of the left operand) down to the trailing block of `len`.
fn reduce_to_suffix(g: &Tensor, shape: &[usize]) -> Tensor {
    let len = crate::tensor::numel(shape);
    let mut d = vec![0.0; len];
    for chunk in g.data.chunks_exact(len.max(1)) {
        for (a, v) in d.iter_mut().zip(chunk) {
            *a += v;
        }
    }
    Tensor { shape: shape.to_vec(), data: d }
}

const GELU_C: f64 = 0.044715;

pub(crate) fn gelu_fwd(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    let t = (k * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

pub(crate) fn softplus_fwd(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

pub(crate) fn sigmoid_fwd(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    fn binary(&mut self, op: Bin, a: Var, b: Var) -> AdResult<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            let name = match op {
                Bin::Add => "add",
                Bin::Sub => "sub",
                Bin::Mul => "mul",
                Bin::Div => "div",
            };
            return Err(AdError::shape(name, format!("{sa:?} with {sb:?}")));
        }
        let (av, bv) = (self.rc(a), self.rc(b));
        let nb = bv.numel();
        let data: Vec<f64> = av
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv.data[i % nb];
                match op {
                    Bin::Add => x + y,
                    Bin::Sub => x - y,
                    Bin::Mul => x * y,
                    Bin::Div => x / y,
                }
            })
            .collect();
        let out = Tensor { shape: sa, data };
        Ok(self.push_op(out, &[a, b], move |g, needs| {
            let ga = needs[0].then(|| match op {
                Bin::Add | Bin::Sub => g.clone(),
                Bin::Mul => Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().enumerate().map(|(i, v)| v * bv.data[i % nb]).collect(),
                },
                Bin::Div => Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().enumerate().map(|(i, v)| v / bv.data[i % nb]).collect(),
                },
            });
            let gb = needs[1].then(|| {
                let full = match op {
                    Bin::Add => g.clone(),
                    Bin::Sub => g.map(|v| -v),
                    Bin::Mul => Tensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().zip(&av.data).map(|(v, x)| v * x).collect(),
                    },
                    Bin::Div => Tensor {
                        shape: g.shape.clone(),
                        data: g
                            .data
                            .iter()
                            .zip(&av.data)
                            .enumerate()
                            .map(|(i, (v, x))| {
                                let y = bv.data[i % nb];
                                -v * x / (y * y)
                            })
                            .collect(),
                    },
                };
                reduce_to_suffix(&full, &bv.shape)
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.binary(Bin::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.binary(Bin::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.binary(Bin::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.binary(Bin::Div, a, b)
    }

    /// Pointwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let xv = self.rc(x);
        let out = std::rc::Rc::new(xv.map(f));
        let yv = std::rc::Rc::clone(&out);
        self.push_op_rc(out, &[x], move |g, _| {
            let data = g.data.iter().zip(&xv.data).zip(&yv.data).map(|((gv, &x), &y)| gv * df(x, y)).collect();
            vec![Some(Tensor { shape: g.shape.clone(), data })]
        })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, |_, _| 1.0)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid_fwd, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus_fwd, |x, _| sigmoid_fwd(x))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu_fwd, |x, _| gelu_grad(x))
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// `sqrt(x + eps)`.
    pub fn sqrt_eps(&mut self, x: Var, eps: f64) -> Var {
        self.unary(x, move |v| (v + eps).sqrt(), |_, y| 0.5 / y)
    }

    /// Gradient passes only strictly inside `(lo, hi)`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, move |v| v.clamp(lo, hi), move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 })
    }
}
