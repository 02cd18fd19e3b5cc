//! Latent upsampling and the per-voxel Gaussian head.

use ilv_autodiff::{Graph, Session, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};
use crate::gsplat::GaussianVars;
use crate::ilvnet::grid_centers;
use crate::nn::{Builder, ConvTranspose3d, Init, Linear};

/// Raw decoder outputs per primitive: offset 3, scale 3, quaternion 4,
/// density 1.
pub const RAW_FIELDS: usize = 11;

/// Activation ranges of the decoded primitives, in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeBounds {
    pub offset_radius: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl DecodeBounds {
    /// Offsets within `bbox_side/64`, scales in `[½ voxel, bbox_side/4]`.
    pub fn new(bbox_half: f64, vol_size: usize) -> Self {
        let side = 2.0 * bbox_half;
        DecodeBounds { offset_radius: side / 64.0, s_min: 0.5 * side / vol_size as f64, s_max: side / 4.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub up: ConvTranspose3d,
    fc1: Linear,
    fc2: Linear,
}

impl Decoder {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> ModelResult<Self> {
        let pad = (cfg.up_kernel - cfg.up_stride) / 2;
        b.scope("decoder", |b| {
            let up = ConvTranspose3d::new(b, "up", cfg.up_kernel, cfg.c_z, cfg.c_g, cfg.up_stride, pad)?;
            let fc1 = Linear::new(b, "fc1", cfg.c_g, cfg.dec_hidden, true, Init::FanIn)?;
            let fc2 = Linear::new(b, "fc2", cfg.dec_hidden, RAW_FIELDS, true, Init::FanIn)?;
            let bias = fc2.b.expect("fc2 has a bias");
            let t = &mut b.store.get_mut(bias).value;
            t.data[3..6].fill(cfg.scale_bias);
            t.data[10] = cfg.density_bias;
            Ok(Decoder { up, fc1, fc2 })
        })
    }
}

/// `[L_z³, C_z]` latent to the `[G, G, G, C_g]` Gaussian feature volume,
/// `G = L_z·s`.
pub fn upsample_latent(s: &mut Session, dec: &Decoder, latent: Var, l_z: usize) -> ModelResult<Var> {
    let c = s.graph.shape(latent)[1];
    let vol = s.graph.reshape(latent, &[l_z, l_z, l_z, c])?;
    Ok(dec.up.apply(s, vol)?)
}

/// Map raw `[N, 11]` outputs onto valid primitives centered on `base`.
pub fn activate_raw(g: &mut Graph, raw: Var, base: &[[f64; 3]], bounds: DecodeBounds) -> ModelResult<GaussianVars> {
    let n = base.len();
    if g.shape(raw) != [n, RAW_FIELDS] {
        return Err(ModelError::InvalidArgument(format!("raw decoder output {:?} for {n} primitives", g.shape(raw))));
    }
    let o = g.slice(raw, 1, 0, 3)?;
    let o = g.tanh(o);
    let o = g.scale(o, bounds.offset_radius);
    let base = g.constant(Tensor { shape: vec![n, 3], data: base.iter().flatten().copied().collect() });
    let centers = g.add(base, o)?;
    let sc = g.slice(raw, 1, 3, 6)?;
    let sc = g.softplus(sc);
    let sc = g.add_scalar(sc, bounds.s_min);
    let scales = g.clamp(sc, bounds.s_min, bounds.s_max);
    let q = g.slice(raw, 1, 6, 10)?;
    let unit_w = g.constant(Tensor { shape: vec![4], data: vec![1.0, 0.0, 0.0, 0.0] });
    let q = g.add(q, unit_w)?;
    let rotations = g.quat_normalize(q)?;
    let d = g.slice(raw, 1, 10, 11)?;
    let d = g.softplus(d);
    let densities = g.reshape(d, &[n])?;
    Ok(GaussianVars { centers, scales, rotations, densities })
}

/// One primitive per voxel of the feature volume, anchored at its center.
pub fn decode_gaussians(s: &mut Session, dec: &Decoder, features: Var, bbox_half: f64, bounds: DecodeBounds) -> ModelResult<GaussianVars> {
    let shape = s.graph.shape(features).to_vec();
    if shape.len() != 4 || shape[0] != shape[1] || shape[1] != shape[2] {
        return Err(ModelError::InvalidArgument(format!("gaussian feature volume {shape:?} is not cubic")));
    }
    let side = shape[0];
    let flat = s.graph.reshape(features, &[side * side * side, shape[3]])?;
    let h = dec.fc1.apply(s, flat)?;
    let h = s.graph.gelu(h);
    let raw = dec.fc2.apply(s, h)?;
    let base: Vec<[f64; 3]> = grid_centers(side, bbox_half).into_iter().map(|p| p.0).collect();
    activate_raw(&mut s.graph, raw, &base, bounds)
}
