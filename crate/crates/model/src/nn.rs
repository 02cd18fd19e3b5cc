//! Parameterized layers on top of the autodiff session.

use ilv_autodiff::init::fan_in_uniform;
use ilv_autodiff::{AdResult, ParamId, ParamStore, Session, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelResult;

/// Registers parameters under a name prefix with a shared RNG.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng, prefix: String::new() }
    }

    /// Run `f` with `name.` appended to the prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Builder) -> ModelResult<T>) -> ModelResult<T> {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}{name}.");
        let r = f(self);
        self.prefix = saved;
        r
    }

    pub fn param(&mut self, name: &str, t: Tensor, init: &str, decay: bool) -> ModelResult<ParamId> {
        Ok(self.store.add(&format!("{}{name}", self.prefix), t, init, decay)?)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ModelResult<ParamId> {
        let t = fan_in_uniform(shape, fan_in, self.rng);
        self.param(name, t, "fan_in_uniform", true)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize], decay: bool) -> ModelResult<ParamId> {
        self.param(name, Tensor::zeros(shape), "zeros", decay)
    }
}

/// How a weight is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    FanIn,
    Zero,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, din: usize, dout: usize, bias: bool, init: Init) -> ModelResult<Linear> {
        b.scope(name, |b| {
            let w = match init {
                Init::FanIn => b.uniform("w", &[din, dout], din)?,
                Init::Zero => b.zeros("w", &[din, dout], true)?,
            };
            let bias = if bias { Some(b.zeros("b", &[dout], false)?) } else { None };
            Ok(Linear { w, b: bias })
        })
    }

    pub fn apply(&self, s: &mut Session, x: Var) -> AdResult<Var> {
        let w = s.param_id(self.w);
        let b = self.b.map(|b| s.param_id(b));
        s.graph.linear(x, w, b)
    }
}

/// Layer norm over channels with a learned affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub w: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> ModelResult<LayerNorm> {
        b.scope(name, |b| {
            let w = b.param("w", Tensor::full(&[c], 1.0), "ones", false)?;
            let bias = b.zeros("b", &[c], false)?;
            Ok(LayerNorm { w, b: bias })
        })
    }

    pub fn apply(&self, s: &mut Session, x: Var) -> AdResult<Var> {
        let (w, b) = (s.param_id(self.w), s.param_id(self.b));
        s.graph.layer_norm(x, Some((w, b)))
    }
}

/// `[k, k, k, C_in, C_out]` convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3d {
    pub fn new(b: &mut Builder, name: &str, k: usize, cin: usize, cout: usize, stride: usize, pad: usize, init: Init) -> ModelResult<Conv3d> {
        b.scope(name, |b| {
            let shape = [k, k, k, cin, cout];
            let w = match init {
                Init::FanIn => b.uniform("w", &shape, k * k * k * cin)?,
                Init::Zero => b.zeros("w", &shape, true)?,
            };
            let bias = b.zeros("b", &[cout], false)?;
            Ok(Conv3d { w, b: bias, stride, pad })
        })
    }

    pub fn apply(&self, s: &mut Session, x: Var) -> AdResult<Var> {
        let (w, b) = (s.param_id(self.w), s.param_id(self.b));
        s.graph.conv3d(x, w, Some(b), self.stride, self.pad)
    }
}

/// `[C_in, k, k, k, C_out]` transposed convolution with bias.
#[derive(Debug, Clone)]
pub struct ConvTranspose3d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose3d {
    pub fn new(b: &mut Builder, name: &str, k: usize, cin: usize, cout: usize, stride: usize, pad: usize) -> ModelResult<Self> {
        b.scope(name, |b| {
            // each output voxel receives about (k/s)³·C_in taps
            let fan_in = ((k / stride.max(1)).max(1)).pow(3) * cin;
            let w = b.uniform("w", &[cin, k, k, k, cout], fan_in)?;
            let bias = b.zeros("b", &[cout], false)?;
            Ok(ConvTranspose3d { w, b: bias, stride, pad })
        })
    }

    pub fn apply(&self, s: &mut Session, x: Var) -> AdResult<Var> {
        let (w, b) = (s.param_id(self.w), s.param_id(self.b));
        s.graph.conv_transpose3d(x, w, Some(b), self.stride, self.pad)
    }
}
