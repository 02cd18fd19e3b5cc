//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! `cargo test -p ilv-acceptance --test acceptance -- 3 8` runs only the
//! listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use ilv_acceptance as oracle;
use ilv_autodiff::gradcheck::DEFAULT_H;
use ilv_autodiff::{grad_check, grad_check_params, AdError, AdResult, AttnGroups, Graph, ParamId, ParamStore, PoolKind, Session, Tensor, Var};
use ilv_model::decode::{activate_raw, DecodeBounds, RAW_FIELDS};
use ilv_model::gsplat::{gaussian_ray_integral, render_xray, voxelize, GaussianVars, VoxelGrid};
use ilv_model::ilvnet::{
    cross_attention_groups, efficient_self_attention, group_cross_attention, ilv_forward, UpdateLayer, XrayFeatureVolume,
};
use ilv_model::nn::Builder;
use ilv_model::train::{make_dataset, step_loss, train, view_batch, volume_tensor};
use ilv_model::unet::unet3d_refine;
use ilv_model::{IlvModel, ModelConfig, RunConfig};
use ilv_tomo::classical::tv::{tv_value, TV_EPS};
use ilv_tomo::classical::{asd_pocs, fdk, sart, AsdPocsParams, FdkParams, SartParams};
use ilv_tomo::geom::{ConeBeamGeometry, Ray, Vec3};
use ilv_tomo::metrics::{psnr_3d, ssim_3slab};
use ilv_tomo::phantom::{make_phantom, PhantomSpec};
use ilv_tomo::xproj::{adjoint_raw, forward_project, forward_raw, Grid};
use ilv_tomo::Volume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect() }
}

fn random_unit_quat(r: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| r.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 && n < 1.0 {
            return q.map(|v| v / n);
        }
    }
}

fn shepp_logan(n: usize) -> Volume {
    make_phantom(&PhantomSpec::shepp_logan(), [n; 3], 1.0).unwrap()
}

fn desk_scan(v: &Volume, n_views: usize) -> ilv_tomo::ProjectionSet {
    let geom = ConeBeamGeometry::fitted(1000.0, 1500.0, 96, n_views, v.dims[0] as f64 * 0.5).unwrap();
    forward_project(v, &geom, &(0..n_views).collect::<Vec<_>>()).unwrap()
}

fn c1_adjointness() -> Outcome {
    let grid = Grid::new([16; 3], 1.0);
    let geom = ConeBeamGeometry::fitted(1000.0, 1500.0, 24, 2, 8.0).unwrap();
    let views = [0, 1];
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..grid.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2 * 24 * 24).map(|_| r.gen_range(-1.0..1.0)).collect();
        let ax = forward_raw(&grid, &x, &geom, &views).unwrap();
        let aty = adjoint_raw(&grid, &y, &geom, &views).unwrap();
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        let norm = ax.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).abs() / norm);
    }
    outcome(worst <= 1e-5, format!("worst |<Ax,y>-<x,A'y>|/(|Ax||y|) = {worst:.2e} (limit 1e-5)"))
}

fn c2_ray_integral() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mu = [0; 3].map(|_| r.gen_range(-5.0..5.0));
        let s = [0; 3].map(|_| r.gen_range(0.3..3.0));
        let q = random_unit_quat(&mut r);
        let d = r.gen_range(0.1..2.0);
        let dir = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)).normalized();
        // the ray passes within √3 standard deviations of the center
        let rot = oracle::quat_to_matrix(q);
        let z = [0; 3].map(|_| r.gen_range(-1.0..1.0));
        let near = Vec3([0, 1, 2].map(|i| mu[i] + (0..3).map(|k| rot[i][k] * s[k] * z[k]).sum::<f64>()));
        let ray = Ray { origin: near - dir * 40.0, direction: dir };
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let reference = oracle::gaussian_line_integral_quadrature(mu, s, q, d, &ray, 40.0, 15.0 * smax, 64);
        let closed = gaussian_ray_integral(mu, s, q, d, &ray).unwrap();
        worst = worst.max((closed - reference).abs() / reference.abs());
    }
    outcome(worst <= 1e-6, format!("100 cases, worst relative error {worst:.2e} (limit 1e-6)"))
}

/// Finite-difference check of `f` reduced to a scalar by fixed random
/// weights.
fn op_error<F>(inputs: Vec<Tensor>, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> AdResult<Var>,
{
    grad_check(
        |g, v| {
            let y = f(g, v)?;
            let w = g.constant(rand_tensor(&g.shape(y).to_vec(), &mut rng(seed ^ 0x9e37)));
            let p = g.mul(y, w)?;
            Ok(g.sum_all(p))
        },
        &inputs,
        DEFAULT_H,
    )
    .unwrap()
}

fn off_zero(t: Tensor) -> Tensor {
    t.map(|v| v.signum() * (0.05 + v.abs()))
}

fn diffcore_errors() -> Vec<(&'static str, f64)> {
    let mut r = rng(30);
    let mut out = Vec::new();
    let a = rand_tensor(&[3, 4], &mut r);
    let b = off_zero(rand_tensor(&[3, 4], &mut r));
    let row = off_zero(rand_tensor(&[4], &mut r));
    out.push(("add", op_error(vec![a.clone(), b.clone()], 1, |g, v| g.add(v[0], v[1]))));
    out.push(("sub", op_error(vec![a.clone(), row.clone()], 2, |g, v| g.sub(v[0], v[1]))));
    out.push(("mul", op_error(vec![a.clone(), b.clone()], 3, |g, v| g.mul(v[0], v[1]))));
    out.push(("div", op_error(vec![a.clone(), b.clone()], 4, |g, v| g.div(v[0], v[1]))));
    out.push(("scale", op_error(vec![a.clone()], 5, |g, v| Ok(g.scale(v[0], -2.5)))));
    out.push(("tanh", op_error(vec![a.clone()], 6, |g, v| Ok(g.tanh(v[0])))));
    out.push(("exp", op_error(vec![a.clone()], 7, |g, v| Ok(g.exp(v[0])))));
    out.push(("sigmoid", op_error(vec![a.clone()], 8, |g, v| Ok(g.sigmoid(v[0])))));
    out.push(("softplus", op_error(vec![a.map(|x| 4.0 * x)], 9, |g, v| Ok(g.softplus(v[0])))));
    out.push(("gelu", op_error(vec![a.map(|x| 3.0 * x)], 10, |g, v| Ok(g.gelu(v[0])))));
    out.push(("abs", op_error(vec![b.clone()], 11, |g, v| Ok(g.abs(v[0])))));
    out.push(("square", op_error(vec![a.clone()], 12, |g, v| Ok(g.square(v[0])))));
    out.push((
        "sqrt_eps",
        op_error(vec![b.clone()], 13, |g, v| {
            let s = g.square(v[0]);
            Ok(g.sqrt_eps(s, 1e-3))
        }),
    ));
    out.push(("clamp", op_error(vec![b.clone()], 14, |g, v| Ok(g.clamp(v[0], -0.5, 0.5)))));

    let m = rand_tensor(&[3, 5], &mut r);
    let w = rand_tensor(&[5, 4], &mut r);
    let bias = rand_tensor(&[4], &mut r);
    let x3 = rand_tensor(&[2, 3, 5], &mut r);
    out.push(("matmul", op_error(vec![m.clone(), w.clone()], 15, |g, v| g.matmul(v[0], v[1]))));
    out.push(("linear", op_error(vec![x3.clone(), w.clone(), bias.clone()], 16, |g, v| g.linear(v[0], v[1], Some(v[2])))));
    out.push(("softmax", op_error(vec![x3.map(|x| 3.0 * x)], 17, |g, v| g.softmax(v[0]))));
    let gam = rand_tensor(&[5], &mut r);
    let bet = rand_tensor(&[5], &mut r);
    out.push((
        "layer_norm",
        op_error(vec![m.map(|x| 2.0 * x), gam, bet], 18, |g, v| g.layer_norm(v[0], Some((v[1], v[2])))),
    ));

    let t = rand_tensor(&[2, 3, 4], &mut r);
    let t2 = rand_tensor(&[2, 2, 4], &mut r);
    out.push(("concat", op_error(vec![t.clone(), t2], 19, |g, v| g.concat(&[v[0], v[1]], 1))));
    out.push(("slice", op_error(vec![t.clone()], 20, |g, v| g.slice(v[0], 1, 1, 3))));
    out.push(("reshape", op_error(vec![t.clone()], 21, |g, v| g.reshape(v[0], &[6, 4]))));
    out.push(("permute", op_error(vec![t.clone()], 22, |g, v| g.permute(v[0], &[2, 0, 1]))));
    out.push(("gather_rows", op_error(vec![t.clone()], 23, |g, v| g.gather_rows(v[0], &[0, 1, 0]))));
    out.push(("mean_axis", op_error(vec![t.clone()], 24, |g, v| g.mean_axis(v[0], 1))));
    out.push(("max_axis", op_error(vec![t.clone()], 25, |g, v| g.max_axis(v[0], 2))));
    out.push(("mean_all", op_error(vec![t.clone()], 26, |g, v| Ok(g.mean_all(v[0])))));
    out.push(("sum_all", op_error(vec![t.clone()], 27, |g, v| Ok(g.sum_all(v[0])))));
    let mask = vec![true, false, true, true, true, false];
    for (name, kind) in [("masked_pool_mean", PoolKind::Mean), ("masked_pool_max", PoolKind::Max)] {
        let mk = mask.clone();
        out.push((name, op_error(vec![t.clone()], 28, move |g, v| g.masked_pool(v[0], &mk, kind))));
    }

    let vol = rand_tensor(&[4, 3, 5, 2], &mut r);
    let k3 = rand_tensor(&[3, 3, 3, 2, 3], &mut r);
    let kb = rand_tensor(&[3], &mut r);
    out.push(("conv3d", op_error(vec![vol.clone(), k3, kb.clone()], 29, |g, v| g.conv3d(v[0], v[1], Some(v[2]), 1, 1))));
    let k2 = rand_tensor(&[2, 2, 2, 2, 3], &mut r);
    out.push(("conv3d_s2", op_error(vec![vol.clone(), k2, kb.clone()], 30, |g, v| g.conv3d(v[0], v[1], Some(v[2]), 2, 0))));
    let kt = rand_tensor(&[2, 2, 2, 2, 3], &mut r);
    out.push((
        "conv_transpose3d",
        op_error(vec![vol.clone(), kt, kb], 31, |g, v| g.conv_transpose3d(v[0], v[1], Some(v[2]), 2, 0)),
    ));
    out.push(("trilinear_resample", op_error(vec![vol.clone()], 32, |g, v| g.trilinear_resample(v[0], [6, 2, 4]))));
    let maps = rand_tensor(&[2, 5, 6, 2], &mut r);
    let coords: Vec<(f64, f64)> = (0..10).map(|_| (r.gen_range(-0.5..5.5), r.gen_range(-0.5..4.5))).collect();
    let valid: Vec<bool> = (0..10).map(|i| i % 4 != 0).collect();
    out.push((
        "bilinear_sample2d",
        op_error(vec![maps], 33, move |g, v| g.bilinear_sample2d(v[0], &coords, Some(&valid))),
    ));
    let img = rand_tensor(&[2, 7, 8], &mut r);
    out.push(("blur2d_valid", op_error(vec![img], 34, |g, v| g.blur2d_valid(v[0], &[0.2, 0.5, 0.3]))));
    let q = off_zero(rand_tensor(&[3, 4], &mut r));
    out.push(("quat_normalize", op_error(vec![q], 35, |g, v| g.quat_normalize(v[0]))));

    let qs = rand_tensor(&[5, 4], &mut r);
    let ks = rand_tensor(&[6, 4], &mut r);
    let vs = rand_tensor(&[6, 4], &mut r);
    let att = vec![qs, ks, vs];
    out.push(("attention", op_error(att.clone(), 36, |g, v| g.attention(v[0], v[1], v[2], 2, None, None))));
    let groups = AttnGroups { queries: vec![vec![0, 1], vec![2, 3, 4]], keys: vec![vec![0, 2, 4], (0..6).collect()] };
    let amask: Vec<bool> = (0..6).map(|j| j != 0).collect();
    out.push((
        "attention_grouped_masked",
        op_error(att, 37, move |g, v| g.attention(v[0], v[1], v[2], 2, Some(&groups), Some(&amask))),
    ));
    out
}

fn random_gaussian_inputs(r: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Tensor> {
    let centers = Tensor { shape: vec![n, 3], data: (0..3 * n).map(|_| r.gen_range(-spread..spread)).collect() };
    let scales = Tensor { shape: vec![n, 3], data: (0..3 * n).map(|_| r.gen_range(0.8..2.0)).collect() };
    let rotations = Tensor { shape: vec![n, 4], data: (0..n).flat_map(|_| random_unit_quat(r)).collect() };
    let densities = Tensor { shape: vec![n], data: (0..n).map(|_| r.gen_range(0.2..1.0)).collect() };
    vec![centers, scales, rotations, densities]
}

fn splat_errors() -> Vec<(&'static str, f64)> {
    let mut r = rng(31);
    let inputs = random_gaussian_inputs(&mut r, 3, 3.0);
    let geom = ConeBeamGeometry::fitted(200.0, 300.0, 12, 3, 8.0).unwrap();
    let mut worst_render = 0.0f64;
    for view in 0..3 {
        let err = op_error(inputs.clone(), 40 + view as u64, |g, xs| {
            let v = GaussianVars { centers: xs[0], scales: xs[1], rotations: xs[2], densities: xs[3] };
            render_xray(g, &v, &geom, view, false).map_err(|e| AdError::invalid("render", e.to_string()))
        });
        worst_render = worst_render.max(err);
    }
    let inputs = random_gaussian_inputs(&mut r, 3, 2.0);
    let grid = VoxelGrid::new([10, 10, 10], 5.0).unwrap();
    let vox = op_error(inputs, 43, |g, xs| {
        let v = GaussianVars { centers: xs[0], scales: xs[1], rotations: xs[2], densities: xs[3] };
        voxelize(g, &v, grid, false).map_err(|e| AdError::invalid("voxelize", e.to_string()))
    });
    vec![("render_xray", worst_render), ("voxelize", vox)]
}

/// Loss of the small end-to-end model at one sampled coordinate of every
/// parameter tensor. Culling is off so the loss is smooth.
fn end_to_end_error() -> f64 {
    let mut cfg = RunConfig::tiny();
    cfg.model.up_kernel = 2;
    cfg.model.up_stride = 2;
    let data = make_dataset(&cfg).unwrap();
    let mut model = IlvModel::new(&cfg.model, cfg.data.bbox_half, 15).unwrap();
    model.truncate = false;
    let mut r = rng(16);
    // move the zero-initialized branches off zero so every path carries gradient
    for p in model.store.iter_mut() {
        p.value.data.iter_mut().for_each(|v| *v += r.gen_range(-0.05..0.05));
    }
    let batch = view_batch(&cfg, &data[0], &[0, 4]).unwrap();
    let vgt = volume_tensor(&data[0].phantom);
    let views = [0, 4, 6];
    let coords: Vec<(ParamId, usize)> =
        (0..model.store.len()).map(ParamId).map(|id| (id, r.gen_range(0..model.store.get(id).value.numel()))).collect();
    grad_check_params(
        &model.store,
        |s| {
            let (l, _) = step_loss(&model, s, &cfg, &batch, &data[0], &vgt, &views, 10)
                .map_err(|e| AdError::invalid("ilv", e.to_string()))?;
            Ok(s.graph.scale(l, 1000.0))
        },
        &coords,
        1e-5,
    )
    .unwrap()
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut all = diffcore_errors();
    let n_ops = all.len();
    all.extend(splat_errors());
    all.push(("ilv_end_to_end", end_to_end_error()));
    let secs = start.elapsed().as_secs_f64();
    let (name, worst) = all.iter().cloned().fold(("", 0.0), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let e2e = all.last().unwrap().1;
    outcome(
        worst <= 1e-4 && secs < 120.0,
        format!(
            "{n_ops} ops + render/voxelize + end-to-end: worst {worst:.2e} ({name}), end-to-end {e2e:.2e} (limit 1e-4), {secs:.0} s (limit 120 s)"
        ),
    )
}

fn c4_identity() -> Outcome {
    let cfg = RunConfig::toy();
    let data = make_dataset(&cfg).unwrap();
    let model = IlvModel::new(&cfg.model, cfg.data.bbox_half, 4).unwrap();
    let batch = view_batch(&cfg, &data[0], &[0, 6, 12, 18]).unwrap();
    let mut s = Session::inference(&model.store);
    let latent = ilv_forward(&mut s, &model.core, &batch, &cfg.model, cfg.data.bbox_half).unwrap();
    let latent_same = s.graph.value(latent).data == model.store.get(model.core.latent0).value.data;
    let vol = rand_tensor(&[32, 32, 32], &mut rng(5));
    let x = s.graph.constant(vol.clone());
    let y = unet3d_refine(&mut s, &model.unet, x).unwrap();
    let unet_same = s.graph.value(y).data == vol.data;
    outcome(latent_same && unet_same, format!("latent == initial latent: {latent_same}, U-Net(V) == V: {unet_same} (bitwise)"))
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = *t.shape.last().unwrap();
    t.data.chunks(c).map(|r| r.to_vec()).collect()
}

fn max_dev(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    a.data.iter().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn plus(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(r, d)| r.iter().zip(d).map(|(x, y)| x + y).collect()).collect()
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        p.value.data.iter_mut().for_each(|v| *v = r.gen_range(-0.5..0.5));
    }
}

fn c5_degenerate() -> Outcome {
    let val = |store: &ParamStore, id: ParamId| store.get(id).value.data.clone();

    let cfg = ModelConfig { kv_reduction: 8, ..RunConfig::tiny().model };
    let mut store = ParamStore::new();
    let mut r = rng(50);
    let layer = UpdateLayer::new(&mut Builder::new(&mut store, &mut r), "l", &cfg).unwrap();
    randomize(&mut store, 51);
    let (n_views, lf, lz) = (3, cfg.l_f, cfg.l_z);
    let feats = rand_tensor(&[n_views, lf * lf * lf, cfg.c_f()], &mut r);
    let mask: Vec<bool> = (0..n_views * lf * lf * lf).map(|_| r.gen_bool(0.7)).collect();
    let vz = rand_tensor(&[lz * lz * lz, cfg.c_z], &mut r);
    let mut s = Session::inference(&store);
    let f = s.graph.constant(feats.clone());
    let x = s.graph.constant(vz.clone());
    let vf = XrayFeatureVolume { features: f, mask: mask.clone(), side: lf };
    let one = cross_attention_groups(1, lz, lf, n_views).unwrap();
    let grouped = group_cross_attention(&mut s, &layer.cross, x, &vf, Some(&one), cfg.heads).unwrap();
    let c = &layer.cross;
    let h = oracle::layer_norm(&rows(&vz), &val(&store, c.ln.w), &val(&store, c.ln.b), 1e-5);
    let q = oracle::linear(&h, &val(&store, c.q.w), &val(&store, c.q.b.unwrap()));
    let fr = rows(&feats);
    let k = oracle::linear(&fr, &val(&store, c.k.w), &val(&store, c.k.b.unwrap()));
    let v = oracle::linear(&fr, &val(&store, c.v.w), &val(&store, c.v.b.unwrap()));
    let a = oracle::attention(&q, &k, &v, cfg.heads, Some(&mask));
    let o = oracle::linear(&a, &val(&store, c.out.w), &val(&store, c.out.b.unwrap()));
    let cross_err = max_dev(s.graph.value(grouped), &plus(&rows(&vz), &o));

    let cfg = ModelConfig { kv_reduction: 1, ..RunConfig::tiny().model };
    let mut store = ParamStore::new();
    let layer = UpdateLayer::new(&mut Builder::new(&mut store, &mut r), "l", &cfg).unwrap();
    randomize(&mut store, 52);
    let vz = rand_tensor(&[lz * lz * lz, cfg.c_z], &mut r);
    let mut s = Session::inference(&store);
    let x = s.graph.constant(vz.clone());
    let out = efficient_self_attention(&mut s, &layer.selfattn, x, lz, cfg.heads).unwrap();
    let e = &layer.selfattn;
    let h = oracle::layer_norm(&rows(&vz), &val(&store, e.ln.w), &val(&store, e.ln.b), 1e-5);
    let q = oracle::linear(&h, &val(&store, e.q.w), &val(&store, e.q.b.unwrap()));
    let k = oracle::linear(&h, &val(&store, e.k.w), &val(&store, e.k.b.unwrap()));
    let v = oracle::linear(&h, &val(&store, e.v.w), &val(&store, e.v.b.unwrap()));
    let a = oracle::attention(&q, &k, &v, cfg.heads, None);
    let o = oracle::linear(&a, &val(&store, e.out.w), &val(&store, e.out.b.unwrap()));
    let self_err = max_dev(s.graph.value(out), &plus(&rows(&vz), &o));
    outcome(
        cross_err <= 1e-6 && self_err <= 1e-6,
        format!("groups=1 vs dense {cross_err:.2e}, R=1 vs full {self_err:.2e} (limit 1e-6)"),
    )
}

fn c6_classical_ordering() -> Outcome {
    let start = Instant::now();
    let v = shepp_logan(64);
    let grid = Grid::of(&v);
    let p10 = desk_scan(&v, 10);
    let fdk10 = psnr_3d(&fdk(&p10, &grid, FdkParams::default()).unwrap().volume, &v).unwrap();
    let sart10 = psnr_3d(&sart(&p10, &grid, SartParams::default()).unwrap().clamped(0.0, 1.0), &v).unwrap();
    let fdk180 = psnr_3d(&fdk(&desk_scan(&v, 180), &grid, FdkParams::default()).unwrap().volume, &v).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        sart10 >= fdk10 + 3.0 && fdk180 >= fdk10 + 5.0 && secs < 180.0,
        format!(
            "SART {sart10:.2} dB vs FDK {fdk10:.2} dB at 10 views (margin {:.2}, need 3), FDK 180 views {fdk180:.2} dB (margin {:.2}, need 5), {secs:.0} s",
            sart10 - fdk10,
            fdk180 - fdk10
        ),
    )
}

fn c7_tv() -> Outcome {
    let v = shepp_logan(64);
    let grid = Grid::of(&v);
    let p = desk_scan(&v, 10);
    let params = AsdPocsParams::default();
    let a = asd_pocs(&p, &grid, params).unwrap();
    let s = sart(&p, &grid, params.sart).unwrap();
    let tv_a = tv_value(&a.to_f64(), a.dims, TV_EPS);
    let tv_s = tv_value(&s.to_f64(), s.dims, TV_EPS);
    outcome(tv_a <= tv_s, format!("TV(ASD-POCS) {tv_a:.1} vs TV(SART) {tv_s:.1}, {} outer iterations each", params.sart.iters))
}

/// Loss smoothing for the overfit criterion.
const EMA_WINDOW: f64 = 100.0;

fn c8_overfit() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::toy();
    let data = make_dataset(&cfg).unwrap();
    let mut model = IlvModel::new(&cfg.model, cfg.data.bbox_half, cfg.train.seed).unwrap();
    let rows = match train(&mut model, &data, &cfg, |_| {}) {
        Ok(rows) => rows,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let alpha = 2.0 / (EMA_WINDOW + 1.0);
    let mut ema = rows[0].loss.total;
    let mut at_100 = f64::NAN;
    for row in &rows {
        ema += alpha * (row.loss.total - ema);
        if row.step == 100 {
            at_100 = ema;
        }
    }
    let last = rows.last().unwrap();
    let psnr = last.val_psnr.unwrap_or(f64::NAN);
    let ratio = ema / at_100;
    outcome(
        ratio < 0.1 && psnr >= 25.0 && secs <= 1800.0,
        format!(
            "{} steps, loss EMA {ema:.4e} = {:.1}% of step-100 value (need < 10%), coarse PSNR {psnr:.2} dB (need 25), {:.1} min (limit 30)",
            last.step,
            100.0 * ratio,
            secs / 60.0
        ),
    )
}

fn c9_decoded_constraints() -> Outcome {
    let mut r = rng(90);
    let n = 10_000;
    let bbox_half = 16.0;
    let b = DecodeBounds::new(bbox_half, 32);
    let magnitudes = [1.0, 10.0, 1e3];
    let raw: Vec<f64> =
        (0..n * RAW_FIELDS).map(|i| r.gen_range(-1.0..1.0) * magnitudes[(i / RAW_FIELDS) % magnitudes.len()]).collect();
    let base: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| r.gen_range(-bbox_half..bbox_half))).collect();
    let mut g = Graph::new();
    let rv = g.constant(Tensor { shape: vec![n, RAW_FIELDS], data: raw });
    let v = activate_raw(&mut g, rv, &base, b).unwrap();
    let radius = 2.0 * bbox_half / 64.0;
    let worst_offset = g
        .value(v.centers)
        .data
        .chunks(3)
        .zip(&base)
        .flat_map(|(c, p)| (0..3).map(move |k| (c[k] - p[k]).abs()))
        .fold(0.0, f64::max);
    let scales_ok = g.value(v.scales).data.iter().all(|&s| s >= b.s_min && s <= b.s_max);
    let worst_norm = g
        .value(v.rotations)
        .data
        .chunks(4)
        .map(|q| (q.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let dens_ok = g.value(v.densities).data.iter().all(|&d| d >= 0.0);
    // the offset bound is checked on center - base, which carries one rounding
    let pass = worst_offset <= radius * (1.0 + 1e-12) && scales_ok && worst_norm < 1e-12 && dens_ok;
    outcome(
        pass,
        format!(
            "{n} samples: max |o| {worst_offset:.4} (limit {radius}), scales in [{}, {}]: {scales_ok}, max ||q|-1| {worst_norm:.1e}, densities >= 0: {dens_ok}",
            b.s_min, b.s_max
        ),
    )
}

fn c10_metrics() -> Outcome {
    let mut r = rng(100);
    let mut psnr_err = 0.0f64;
    let mut ssim_err = 0.0f64;
    let mut self_err = 0.0f64;
    for _ in 0..3 {
        let a: Vec<f32> = (0..4096).map(|_| r.gen()).collect();
        let b: Vec<f32> = a.iter().map(|&x| (x + r.gen_range(-0.3f32..0.3)).clamp(0.0, 1.0)).collect();
        let va = Volume::from_data([16; 3], 1.0, a).unwrap();
        let vb = Volume::from_data([16; 3], 1.0, b).unwrap();
        psnr_err = psnr_err.max((psnr_3d(&va, &vb).unwrap() - oracle::psnr_direct(&va.to_f64(), &vb.to_f64())).abs());
        ssim_err = ssim_err.max((ssim_3slab(&va, &vb).unwrap() - oracle::ssim_3slab_direct(&va, &vb)).abs());
        self_err = self_err.max((ssim_3slab(&va, &va).unwrap() - 1.0).abs());
    }
    outcome(
        psnr_err <= 1e-6 && ssim_err <= 1e-6 && self_err <= 1e-6,
        format!("PSNR vs direct {psnr_err:.1e} dB, SSIM vs per-window {ssim_err:.1e}, |ssim(x,x)-1| {self_err:.1e} (limit 1e-6)"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("projector adjointness", c1_adjointness),
        ("closed-form ray integral vs quadrature", c2_ray_integral),
        ("gradient suite", c3_gradients),
        ("initialization identity", c4_identity),
        ("degenerate attention equivalence", c5_degenerate),
        ("classical baseline ordering", c6_classical_ordering),
        ("ASD-POCS lowers TV", c7_tv),
        ("overfit sanity", c8_overfit),
        ("decoded parameter constraints", c9_decoded_constraints),
        ("metric fidelity", c10_metrics),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {:?}", e.downcast_ref::<String>())));
        let tag = if result.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!result.pass);
        println!("[{tag}] {id:>2} {name}: {} [{:.1} s]", result.detail, start.elapsed().as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    }
}
