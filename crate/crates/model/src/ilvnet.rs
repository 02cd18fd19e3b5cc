//! Multi-view encoding, feature back-projection and the latent-volume
//! update stack.
//!
//! Token grids are row-major: a detector token `(row, col)` is `row·W_p +
//! col` and a voxel `(x, y, z)` of a side-`L` grid is `(z·L + y)·L + x`, so a
//! `[L³, C]` token matrix reshapes directly to a `[L, L, L, C]` volume.

use ilv_autodiff::{AttnGroups, Graph, PoolKind, Session, Tensor, Var};
use ilv_tomo::geom::{plucker_embed, view_rays, ConeBeamGeometry, Vec3};

use crate::config::ModelConfig;
use crate::error::{ModelError, ModelResult};
use crate::nn::{Builder, Conv3d, Init, LayerNorm, Linear};

/// Input views of one scan, prepared for the network.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    /// `[N, H, W]`, already scaled.
    pub images: Tensor,
    /// Per-token conditioning `[N·T, 6]`: patch-mean Plücker coordinates with
    /// the moment part divided by `dso`.
    pub conditioning: Tensor,
    pub geometry: ConeBeamGeometry,
    pub views: Vec<usize>,
}

impl ViewBatch {
    /// `images` holds one row-major detector image per entry of `views`.
    pub fn new(images: &[&[f64]], geometry: &ConeBeamGeometry, views: &[usize], patch: usize, scale: f64) -> ModelResult<Self> {
        let (h, w) = (geometry.det_rows, geometry.det_cols);
        if images.len() != views.len() || images.is_empty() {
            return Err(ModelError::InvalidArgument(format!("{} images for {} views", images.len(), views.len())));
        }
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(ModelError::InvalidArgument(format!("{h}x{w} detector not divisible by patch {patch}")));
        }
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.len() != h * w {
                return Err(ModelError::InvalidArgument(format!("image of {} pixels for {h}x{w}", img.len())));
            }
            data.extend(img.iter().map(|v| v * scale));
        }
        let (hp, wp) = (h / patch, w / patch);
        let mut cond = Vec::with_capacity(views.len() * hp * wp * 6);
        for &view in views {
            let emb = plucker_embed(&view_rays(geometry, view)?, h, w)?;
            for tr in 0..hp {
                for tc in 0..wp {
                    let mut acc = [0.0; 6];
                    for r in tr * patch..(tr + 1) * patch {
                        for c in tc * patch..(tc + 1) * patch {
                            for (a, v) in acc.iter_mut().zip(emb.get(r, c)) {
                                *a += v;
                            }
                        }
                    }
                    let n = (patch * patch) as f64;
                    cond.extend((0..6).map(|i| acc[i] / n / if i >= 3 { geometry.dso } else { 1.0 }));
                }
            }
        }
        Ok(ViewBatch {
            images: Tensor::new(vec![views.len(), h, w], data)?,
            conditioning: Tensor::new(vec![views.len() * hp * wp, 6], cond)?,
            geometry: geometry.clone(),
            views: views.to_vec(),
        })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }
}

/// `[N·T, p²]` patch rows of `[N, H, W]` images.
fn patchify(images: &Tensor, patch: usize) -> Tensor {
    let (n, h, w) = (images.shape[0], images.shape[1], images.shape[2]);
    let (hp, wp) = (h / patch, w / patch);
    let mut out = Vec::with_capacity(images.numel());
    for v in 0..n {
        for tr in 0..hp {
            for tc in 0..wp {
                for r in 0..patch {
                    let row = (v * h + tr * patch + r) * w + tc * patch;
                    out.extend_from_slice(&images.data[row..row + patch]);
                }
            }
        }
    }
    Tensor { shape: vec![n * hp * wp, patch * patch], data: out }
}

/// Pre-LN transformer block with zero-initialized residual outputs.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    fn new(b: &mut Builder, name: &str, c: usize) -> ModelResult<Self> {
        b.scope(name, |b| {
            Ok(TransformerBlock {
                ln1: LayerNorm::new(b, "ln1", c)?,
                qkv: Linear::new(b, "qkv", c, 3 * c, true, Init::FanIn)?,
                proj: Linear::new(b, "proj", c, c, true, Init::Zero)?,
                ln2: LayerNorm::new(b, "ln2", c)?,
                fc1: Linear::new(b, "fc1", c, 4 * c, true, Init::FanIn)?,
                fc2: Linear::new(b, "fc2", 4 * c, c, true, Init::Zero)?,
            })
        })
    }

    fn apply(&self, s: &mut Session, x: Var, heads: usize, groups: &AttnGroups) -> ModelResult<Var> {
        let c = s.graph.shape(x)[1];
        let h = self.ln1.apply(s, x)?;
        let qkv = self.qkv.apply(s, h)?;
        let q = s.graph.slice(qkv, 1, 0, c)?;
        let k = s.graph.slice(qkv, 1, c, 2 * c)?;
        let v = s.graph.slice(qkv, 1, 2 * c, 3 * c)?;
        let a = s.graph.attention(q, k, v, heads, Some(groups), None)?;
        let a = self.proj.apply(s, a)?;
        let x = s.graph.add(x, a)?;
        let h = self.ln2.apply(s, x)?;
        let h = self.fc1.apply(s, h)?;
        let h = s.graph.gelu(h);
        let h = self.fc2.apply(s, h)?;
        Ok(s.graph.add(x, h)?)
    }
}

/// Hybrid encoder: patchify-linear low path, small transformer high path,
/// AdaLN conditioning on the ray geometry.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub low: Linear,
    pub embed: Linear,
    pub pos: ilv_autodiff::ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub high_ln: LayerNorm,
    pub ada_gamma: Linear,
    pub ada_beta: Linear,
}

impl Encoder {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> ModelResult<Self> {
        let p2 = cfg.patch * cfg.patch;
        let t = cfg.tokens_per_side().pow(2);
        b.scope("encoder", |b| {
            let pos = ilv_autodiff::init::uniform(&[t, cfg.c_high], 0.02, &mut *b.rng);
            let blocks = (0..cfg.enc_layers)
                .map(|i| TransformerBlock::new(b, &format!("block{i}"), cfg.c_high))
                .collect::<ModelResult<Vec<_>>>()?;
            Ok(Encoder {
                low: Linear::new(b, "low", p2, cfg.c_low, true, Init::FanIn)?,
                embed: Linear::new(b, "embed", p2, cfg.c_high, true, Init::FanIn)?,
                pos: b.param("pos", pos, "uniform", false)?,
                blocks,
                high_ln: LayerNorm::new(b, "high_ln", cfg.c_high)?,
                ada_gamma: Linear::new(b, "ada_gamma", 6, cfg.c_f(), true, Init::Zero)?,
                ada_beta: Linear::new(b, "ada_beta", 6, cfg.c_f(), true, Init::Zero)?,
            })
        })
    }
}

/// Hybrid feature maps `[N, H_p, W_p, C_f]`.
pub fn encode_views(s: &mut Session, enc: &Encoder, batch: &ViewBatch, cfg: &ModelConfig) -> ModelResult<Var> {
    let (n, h, w) = (batch.images.shape[0], batch.images.shape[1], batch.images.shape[2]);
    if h % cfg.patch != 0 || w % cfg.patch != 0 || h / cfg.patch * (w / cfg.patch) != cfg.tokens_per_side().pow(2) {
        return Err(ModelError::InvalidArgument(format!(
            "{h}x{w} images do not match the configured {0}x{0} with patch {1}",
            cfg.image_size, cfg.patch
        )));
    }
    let (hp, wp) = (h / cfg.patch, w / cfg.patch);
    let t = hp * wp;
    let patches = s.graph.constant(patchify(&batch.images, cfg.patch));
    let low = enc.low.apply(s, patches)?;
    let high = enc.embed.apply(s, patches)?;
    let high = s.graph.reshape(high, &[n, t, cfg.c_high])?;
    let pos = s.param_id(enc.pos);
    let high = s.graph.add(high, pos)?;
    let mut high = s.graph.reshape(high, &[n * t, cfg.c_high])?;
    let per_view: Vec<Vec<usize>> = (0..n).map(|v| (v * t..(v + 1) * t).collect()).collect();
    let groups = AttnGroups { queries: per_view.clone(), keys: per_view };
    for blk in &enc.blocks {
        high = blk.apply(s, high, cfg.enc_heads, &groups)?;
    }
    let high = enc.high_ln.apply(s, high)?;
    let hybrid = s.graph.concat(&[high, low], 1)?;
    // AdaLN: LN(x)·(1 + γ(c)) + β(c)
    let cond = s.graph.constant(batch.conditioning.clone());
    let gamma = enc.ada_gamma.apply(s, cond)?;
    let beta = enc.ada_beta.apply(s, cond)?;
    let normed = s.graph.layer_norm(hybrid, None)?;
    let one_plus = s.graph.add_scalar(gamma, 1.0);
    let modulated = s.graph.mul(normed, one_plus)?;
    let out = s.graph.add(modulated, beta)?;
    Ok(s.graph.reshape(out, &[n, hp, wp, cfg.c_f()])?)
}

/// Per-view features lifted onto an `L_f³` grid.
#[derive(Debug, Clone)]
pub struct XrayFeatureVolume {
    /// `[N, L_f³, C_f]`
    pub features: Var,
    /// `N·L_f³` visibility flags, view-major.
    pub mask: Vec<bool>,
    pub side: usize,
}

/// Centers of a side-`l` grid spanning `[−bbox_half, bbox_half]³`.
pub fn grid_centers(l: usize, bbox_half: f64) -> Vec<Vec3> {
    let h = 2.0 * bbox_half / l as f64;
    let c = |i: usize| (i as f64 + 0.5 - l as f64 * 0.5) * h;
    let mut out = Vec::with_capacity(l * l * l);
    for z in 0..l {
        for y in 0..l {
            for x in 0..l {
                out.push(Vec3::new(c(x), c(y), c(z)));
            }
        }
    }
    out
}

/// Project every voxel center into each view and sample the token grid.
/// Token `(row, col)` sits at detector pixel `((col + ½)·p, (row + ½)·p)`.
pub fn backproject_features(
    g: &mut Graph,
    features: Var,
    geom: &ConeBeamGeometry,
    views: &[usize],
    centers: &[Vec3],
    patch: usize,
) -> ModelResult<XrayFeatureVolume> {
    let s = g.shape(features).to_vec();
    if s.len() != 4 || s[0] != views.len() {
        return Err(ModelError::InvalidArgument(format!("feature maps {s:?} for {} views", views.len())));
    }
    let side = (centers.len() as f64).cbrt().round() as usize;
    let mut coords = Vec::with_capacity(views.len() * centers.len());
    let mut mask = Vec::with_capacity(coords.capacity());
    for &view in views {
        for &p in centers {
            let (u, v, valid) = geom.project_point(view, p)?;
            if valid {
                coords.push((u / patch as f64 - 0.5, v / patch as f64 - 0.5));
            } else {
                coords.push((0.0, 0.0));
            }
            mask.push(valid);
        }
    }
    let features = g.bilinear_sample2d(features, &coords, Some(&mask))?;
    Ok(XrayFeatureVolume { features, mask, side })
}

/// Per-axis group counts `(x, y, z)`: prime factors of `n_groups` are
/// handed out to the axis with the fewest groups so far, ties going to z,
/// then y, then x. Each count must divide both sides.
pub fn group_factors(n_groups: usize, l_z: usize, l_f: usize) -> ModelResult<[usize; 3]> {
    if n_groups == 0 {
        return Err(ModelError::Config("n_groups must be positive".into()));
    }
    let mut primes = Vec::new();
    let (mut rest, mut p) = (n_groups, 2);
    while rest > 1 {
        while rest % p == 0 {
            primes.push(p);
            rest /= p;
        }
        p += 1;
    }
    primes.reverse();
    let mut f = [1usize; 3];
    for q in primes {
        let axis = [2, 1, 0].into_iter().min_by_key(|&a| f[a]).unwrap();
        f[axis] *= q;
    }
    if f.iter().any(|&k| l_z % k != 0 || l_f % k != 0) {
        return Err(ModelError::Config(format!(
            "{n_groups} groups ({}x{}x{}) do not partition latent side {l_z} and feature side {l_f}",
            f[0], f[1], f[2]
        )));
    }
    Ok(f)
}

fn block_of(idx: usize, side: usize, f: [usize; 3]) -> usize {
    let (x, y, z) = (idx % side, idx / side % side, idx / (side * side));
    let (bx, by, bz) = (x / (side / f[0]), y / (side / f[1]), z / (side / f[2]));
    (bz * f[1] + by) * f[0] + bx
}

/// Query/key index lists of the group cross-attention: latent block `g`
/// attends to the matching feature block of every view.
pub fn cross_attention_groups(n_groups: usize, l_z: usize, l_f: usize, n_views: usize) -> ModelResult<AttnGroups> {
    let f = group_factors(n_groups, l_z, l_f)?;
    let mut queries = vec![Vec::new(); n_groups];
    let mut keys = vec![Vec::new(); n_groups];
    for i in 0..l_z.pow(3) {
        queries[block_of(i, l_z, f)].push(i);
    }
    for v in 0..n_views {
        for i in 0..l_f.pow(3) {
            keys[block_of(i, l_f, f)].push(v * l_f.pow(3) + i);
        }
    }
    Ok(AttnGroups { queries, keys })
}

#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub ln: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

/// `V̂ = V_z + GCA(LN(V_z), V_f)`. `groups = None` is dense cross-attention.
pub fn group_cross_attention(
    s: &mut Session,
    w: &CrossAttention,
    vz: Var,
    vf: &XrayFeatureVolume,
    groups: Option<&AttnGroups>,
    heads: usize,
) -> ModelResult<Var> {
    let fs = s.graph.shape(vf.features).to_vec();
    let flat = s.graph.reshape(vf.features, &[fs[0] * fs[1], fs[2]])?;
    let x = w.ln.apply(s, vz)?;
    let q = w.q.apply(s, x)?;
    let k = w.k.apply(s, flat)?;
    let v = w.v.apply(s, flat)?;
    let a = s.graph.attention(q, k, v, heads, groups, Some(&vf.mask))?;
    let o = w.out.apply(s, a)?;
    Ok(s.graph.add(vz, o)?)
}

#[derive(Debug, Clone)]
pub struct EfficientAttention {
    pub ln: LayerNorm,
    pub q: Linear,
    pub reduce: Option<Conv3d>,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

/// `Ṽ = V̂ + EffAttn(V̂)` with keys and values from a stride-`r` reduction
/// of the `L_z³` grid (`R = r³`); `r = 1` is plain self-attention.
pub fn efficient_self_attention(s: &mut Session, w: &EfficientAttention, x: Var, l_z: usize, heads: usize) -> ModelResult<Var> {
    let c = s.graph.shape(x)[1];
    let h = w.ln.apply(s, x)?;
    let q = w.q.apply(s, h)?;
    let kv = match &w.reduce {
        Some(conv) => {
            let vol = s.graph.reshape(h, &[l_z, l_z, l_z, c])?;
            let red = conv.apply(s, vol)?;
            let n = s.graph.value(red).numel() / c;
            s.graph.reshape(red, &[n, c])?
        }
        None => h,
    };
    let k = w.k.apply(s, kv)?;
    let v = w.v.apply(s, kv)?;
    let a = s.graph.attention(q, k, v, heads, None, None)?;
    let o = w.out.apply(s, a)?;
    Ok(s.graph.add(x, o)?)
}

#[derive(Debug, Clone)]
pub struct LatentMlp {
    pub ln: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// `V̄ = Ṽ + MLP(LN(Ṽ))`, pointwise per voxel.
pub fn latent_mlp(s: &mut Session, w: &LatentMlp, x: Var) -> ModelResult<Var> {
    let h = w.ln.apply(s, x)?;
    let h = w.fc1.apply(s, h)?;
    let h = s.graph.gelu(h);
    let h = w.fc2.apply(s, h)?;
    Ok(s.graph.add(x, h)?)
}

/// View-pooled X-ray features `[L_f³, C_f]`, shared by every layer.
#[derive(Debug, Clone, Copy)]
pub struct PooledFeatures {
    pub mean: Var,
    pub max: Var,
}

pub fn pool_views(g: &mut Graph, vf: &XrayFeatureVolume) -> ModelResult<PooledFeatures> {
    Ok(PooledFeatures {
        mean: g.masked_pool(vf.features, &vf.mask, PoolKind::Mean)?,
        max: g.masked_pool(vf.features, &vf.mask, PoolKind::Max)?,
    })
}

#[derive(Debug, Clone)]
pub struct Aggregation {
    pub mean: Linear,
    pub max: Linear,
    pub fuse: Linear,
}

/// `V_z ← Fuse([V̄, up(Conv(mean V_f)), up(Conv(max V_f))])`.
pub fn meanmax_aggregate(
    s: &mut Session,
    w: &Aggregation,
    vbar: Var,
    pooled: PooledFeatures,
    l_f: usize,
    l_z: usize,
) -> ModelResult<Var> {
    let c_z = s.graph.shape(vbar)[1];
    let mut paths = vec![vbar];
    for (lin, src) in [(&w.mean, pooled.mean), (&w.max, pooled.max)] {
        let h = lin.apply(s, src)?;
        let h = if l_f == l_z {
            h
        } else {
            let vol = s.graph.reshape(h, &[l_f, l_f, l_f, c_z])?;
            let vol = s.graph.trilinear_resample(vol, [l_z; 3])?;
            s.graph.reshape(vol, &[l_z * l_z * l_z, c_z])?
        };
        paths.push(h);
    }
    let cat = s.graph.concat(&paths, 1)?;
    Ok(w.fuse.apply(s, cat)?)
}

#[derive(Debug, Clone)]
pub struct UpdateLayer {
    pub cross: CrossAttention,
    pub selfattn: EfficientAttention,
    pub mlp: LatentMlp,
    pub agg: Aggregation,
}

impl UpdateLayer {
    pub fn new(b: &mut Builder, name: &str, cfg: &ModelConfig) -> ModelResult<Self> {
        let (cz, cf) = (cfg.c_z, cfg.c_f());
        let r = cfg.kv_side()?;
        b.scope(name, |b| {
            let cross = b.scope("cross", |b| {
                Ok(CrossAttention {
                    ln: LayerNorm::new(b, "ln", cz)?,
                    q: Linear::new(b, "q", cz, cz, true, Init::FanIn)?,
                    k: Linear::new(b, "k", cf, cz, true, Init::FanIn)?,
                    v: Linear::new(b, "v", cf, cz, true, Init::FanIn)?,
                    out: Linear::new(b, "out", cz, cz, true, Init::Zero)?,
                })
            })?;
            let selfattn = b.scope("self", |b| {
                Ok(EfficientAttention {
                    ln: LayerNorm::new(b, "ln", cz)?,
                    q: Linear::new(b, "q", cz, cz, true, Init::FanIn)?,
                    reduce: if r > 1 { Some(Conv3d::new(b, "reduce", r, cz, cz, r, 0, Init::FanIn)?) } else { None },
                    k: Linear::new(b, "k", cz, cz, true, Init::FanIn)?,
                    v: Linear::new(b, "v", cz, cz, true, Init::FanIn)?,
                    out: Linear::new(b, "out", cz, cz, true, Init::Zero)?,
                })
            })?;
            let mlp = b.scope("mlp", |b| {
                Ok(LatentMlp {
                    ln: LayerNorm::new(b, "ln", cz)?,
                    fc1: Linear::new(b, "fc1", cz, 4 * cz, true, Init::FanIn)?,
                    fc2: Linear::new(b, "fc2", 4 * cz, cz, true, Init::Zero)?,
                })
            })?;
            let agg = b.scope("agg", |b| {
                let mut eye = Tensor::zeros(&[3 * cz, cz]);
                for i in 0..cz {
                    eye.data[i * cz + i] = 1.0;
                }
                let fuse = b.scope("fuse", |b| {
                    Ok(Linear { w: b.param("w", eye, "identity_block", true)?, b: Some(b.zeros("b", &[cz], false)?) })
                })?;
                Ok(Aggregation {
                    mean: Linear::new(b, "mean", cf, cz, true, Init::FanIn)?,
                    max: Linear::new(b, "max", cf, cz, true, Init::FanIn)?,
                    fuse,
                })
            })?;
            Ok(UpdateLayer { cross, selfattn, mlp, agg })
        })
    }
}

/// Encoder, learnable initial latent and the update stack.
#[derive(Debug, Clone)]
pub struct IlvCore {
    pub encoder: Encoder,
    pub latent0: ilv_autodiff::ParamId,
    pub layers: Vec<UpdateLayer>,
}

impl IlvCore {
    pub fn new(b: &mut Builder, cfg: &ModelConfig) -> ModelResult<Self> {
        let encoder = Encoder::new(b, cfg)?;
        let n = cfg.l_z.pow(3);
        let init = ilv_autodiff::init::uniform(&[n, cfg.c_z], cfg.latent_init, &mut *b.rng);
        let latent0 = b.param("latent0", init, "uniform", false)?;
        let layers = (0..cfg.n_layers).map(|i| UpdateLayer::new(b, &format!("layer{i}"), cfg)).collect::<ModelResult<_>>()?;
        Ok(IlvCore { encoder, latent0, layers })
    }
}

/// Final latent `[L_z³, C_z]`: encode, back-project once, then run every
/// update layer from the learnable initial latent.
pub fn ilv_forward(s: &mut Session, core: &IlvCore, batch: &ViewBatch, cfg: &ModelConfig, bbox_half: f64) -> ModelResult<Var> {
    let feats = encode_views(s, &core.encoder, batch, cfg)?;
    let centers = grid_centers(cfg.l_f, bbox_half);
    let vf = backproject_features(&mut s.graph, feats, &batch.geometry, &batch.views, &centers, cfg.patch)?;
    let pooled = pool_views(&mut s.graph, &vf)?;
    let groups = cross_attention_groups(cfg.n_groups, cfg.l_z, cfg.l_f, batch.n_views())?;
    let mut vz = s.param_id(core.latent0);
    for layer in &core.layers {
        let vhat = group_cross_attention(s, &layer.cross, vz, &vf, Some(&groups), cfg.heads)?;
        let vt = efficient_self_attention(s, &layer.selfattn, vhat, cfg.l_z, cfg.heads)?;
        let vbar = latent_mlp(s, &layer.mlp, vt)?;
        vz = meanmax_aggregate(s, &layer.agg, vbar, pooled, cfg.l_f, cfg.l_z)?;
    }
    Ok(vz)
}
