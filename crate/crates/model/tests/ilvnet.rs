use ilv_autodiff::{grad_check_params, AdError, ParamId, ParamStore, Session, Tensor};
use ilv_model::ilvnet::*;
use ilv_model::nn::Builder;
use ilv_model::train::{make_dataset, step_loss, view_batch, volume_tensor};
use ilv_model::unet::{unet3d_refine, UNet3d};
use ilv_model::{IlvModel, ModelConfig, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randomize(store: &mut ParamStore, seed: u64, bound: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        p.value.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

fn val(store: &ParamStore, id: ParamId) -> &Tensor {
    &store.get(id).value
}

fn naive_linear(x: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    x.iter().map(|r| (0..dout).map(|j| b.data[j] + (0..din).map(|i| r[i] * w.data[i * dout + j]).sum::<f64>()).collect()).collect()
}

fn naive_ln(x: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let m = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            r.iter().enumerate().map(|(i, v)| (v - m) / (var + 1e-5).sqrt() * w.data[i] + b.data[i]).collect()
        })
        .collect()
}

/// Multi-head softmax attention over all keys, skipping masked ones.
fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], heads: usize, mask: Option<&[bool]>) -> Vec<Vec<f64>> {
    let d = q[0].len();
    let dh = d / heads;
    q.iter()
        .map(|qr| {
            let mut out = vec![0.0; d];
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let scores: Vec<Option<f64>> = k
                    .iter()
                    .enumerate()
                    .map(|(j, kr)| {
                        mask.map_or(true, |m| m[j]).then(|| r.clone().map(|c| qr[c] * kr[c]).sum::<f64>() / (dh as f64).sqrt())
                    })
                    .collect();
                let mx = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().flatten().map(|s| (s - mx).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    if let Some(s) = s {
                        let p = (s - mx).exp() / z;
                        for c in r.clone() {
                            out[c] += p * v[j][c];
                        }
                    }
                }
            }
            out
        })
        .collect()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = *t.shape.last().unwrap();
    t.data.chunks(c).map(|r| r.to_vec()).collect()
}

fn close(a: &Tensor, b: &[Vec<f64>], tol: f64) -> f64 {
    let flat: Vec<f64> = b.iter().flatten().copied().collect();
    assert_eq!(a.data.len(), flat.len());
    let err = a.data.iter().zip(&flat).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= tol, "max abs deviation {err:e}");
    err
}

fn layer_cfg(kv_reduction: usize) -> ModelConfig {
    ModelConfig { kv_reduction, ..RunConfig::tiny().model }
}

#[test]
fn single_group_cross_attention_is_dense_attention() {
    let cfg = layer_cfg(8);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = UpdateLayer::new(&mut Builder::new(&mut store, &mut rng), "l", &cfg).unwrap();
    randomize(&mut store, 2, 0.5);
    let (n_views, lf, lz) = (3, cfg.l_f, cfg.l_z);
    let feats = rand_tensor(&[n_views, lf * lf * lf, cfg.c_f()], &mut rng);
    let mask: Vec<bool> = (0..n_views * lf * lf * lf).map(|_| rng.gen_bool(0.7)).collect();
    let vz = rand_tensor(&[lz * lz * lz, cfg.c_z], &mut rng);

    let mut s = Session::inference(&store);
    let f = s.graph.constant(feats.clone());
    let x = s.graph.constant(vz.clone());
    let vf = XrayFeatureVolume { features: f, mask: mask.clone(), side: lf };
    let one = cross_attention_groups(1, lz, lf, n_views).unwrap();
    let grouped = group_cross_attention(&mut s, &layer.cross, x, &vf, Some(&one), cfg.heads).unwrap();
    let dense = group_cross_attention(&mut s, &layer.cross, x, &vf, None, cfg.heads).unwrap();

    let c = &layer.cross;
    let h = naive_ln(&rows(&vz), val(&store, c.ln.w), val(&store, c.ln.b));
    let q = naive_linear(&h, val(&store, c.q.w), val(&store, c.q.b.unwrap()));
    let fr = rows(&feats);
    let k = naive_linear(&fr, val(&store, c.k.w), val(&store, c.k.b.unwrap()));
    let v = naive_linear(&fr, val(&store, c.v.w), val(&store, c.v.b.unwrap()));
    let a = naive_attention(&q, &k, &v, cfg.heads, Some(&mask));
    let o = naive_linear(&a, val(&store, c.out.w), val(&store, c.out.b.unwrap()));
    let expected: Vec<Vec<f64>> = rows(&vz).iter().zip(&o).map(|(r, d)| r.iter().zip(d).map(|(x, y)| x + y).collect()).collect();
    close(s.graph.value(grouped), &expected, 1e-6);
    close(s.graph.value(dense), &expected, 1e-6);
}

#[test]
fn unreduced_efficient_attention_is_full_attention() {
    let cfg = layer_cfg(1);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = UpdateLayer::new(&mut Builder::new(&mut store, &mut rng), "l", &cfg).unwrap();
    assert!(layer.selfattn.reduce.is_none());
    randomize(&mut store, 4, 0.5);
    let lz = cfg.l_z;
    let vz = rand_tensor(&[lz * lz * lz, cfg.c_z], &mut rng);
    let mut s = Session::inference(&store);
    let x = s.graph.constant(vz.clone());
    let out = efficient_self_attention(&mut s, &layer.selfattn, x, lz, cfg.heads).unwrap();

    let e = &layer.selfattn;
    let h = naive_ln(&rows(&vz), val(&store, e.ln.w), val(&store, e.ln.b));
    let q = naive_linear(&h, val(&store, e.q.w), val(&store, e.q.b.unwrap()));
    let k = naive_linear(&h, val(&store, e.k.w), val(&store, e.k.b.unwrap()));
    let v = naive_linear(&h, val(&store, e.v.w), val(&store, e.v.b.unwrap()));
    let a = naive_attention(&q, &k, &v, cfg.heads, None);
    let o = naive_linear(&a, val(&store, e.out.w), val(&store, e.out.b.unwrap()));
    let expected: Vec<Vec<f64>> = rows(&vz).iter().zip(&o).map(|(r, d)| r.iter().zip(d).map(|(x, y)| x + y).collect()).collect();
    close(s.graph.value(out), &expected, 1e-6);
}

#[test]
fn reduced_attention_sees_fewer_keys() {
    // with r = 2 the keys are the 2³-pooled grid: 8 keys for a 4³ latent
    let cfg = layer_cfg(8);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layer = UpdateLayer::new(&mut Builder::new(&mut store, &mut rng), "l", &cfg).unwrap();
    randomize(&mut store, 6, 0.5);
    let mut s = Session::train(&store);
    let x = s.graph.constant(rand_tensor(&[64, cfg.c_z], &mut rng));
    let before = s.graph.len();
    let out = efficient_self_attention(&mut s, &layer.selfattn, x, cfg.l_z, cfg.heads).unwrap();
    assert_eq!(s.graph.shape(out), &[64, cfg.c_z]);
    assert!(s.graph.len() > before);
}

fn tiny_setup() -> (RunConfig, Vec<ilv_model::train::Sample>) {
    let cfg = RunConfig::tiny();
    let data = make_dataset(&cfg).unwrap();
    (cfg, data)
}

#[test]
fn zero_initialized_residuals_give_identity() {
    let (cfg, data) = tiny_setup();
    let model = IlvModel::new(&cfg.model, cfg.data.bbox_half, 7).unwrap();
    let batch = view_batch(&cfg, &data[0], &[0, 4]).unwrap();
    let mut s = Session::inference(&model.store);
    let latent = ilv_forward(&mut s, &model.core, &batch, &cfg.model, cfg.data.bbox_half).unwrap();
    let v0 = &model.store.get(model.core.latent0).value;
    assert_eq!(s.graph.value(latent).data, v0.data, "latent must equal the initial latent bit for bit");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vol = rand_tensor(&[16, 16, 16], &mut rng);
    let x = s.graph.constant(vol.clone());
    let y = unet3d_refine(&mut s, &model.unet, x).unwrap();
    assert_eq!(s.graph.value(y).data, vol.data);
}

#[test]
fn unet_preserves_shape_and_rejects_odd_sizes() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = UNet3d::new(&mut Builder::new(&mut store, &mut rng), [2, 3, 4]).unwrap();
    randomize(&mut store, 10, 0.3);
    let mut s = Session::inference(&store);
    for dims in [[8, 8, 8], [16, 8, 24]] {
        let x = s.graph.constant(Tensor::zeros(&dims));
        let y = unet3d_refine(&mut s, &net, x).unwrap();
        assert_eq!(s.graph.shape(y), &dims);
    }
    let x = s.graph.constant(Tensor::zeros(&[12, 12, 12]));
    assert!(unet3d_refine(&mut s, &net, x).is_err());
}

#[test]
fn unet_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = UNet3d::new(&mut Builder::new(&mut store, &mut rng), [2, 3, 4]).unwrap();
    randomize(&mut store, 12, 0.4);
    let vol = rand_tensor(&[16, 16, 16], &mut rng);
    let w = rand_tensor(&[16, 16, 16], &mut rng);
    let coords: Vec<(ParamId, usize)> =
        (0..store.len()).map(ParamId).flat_map(|id| (0..2).map(move |k| (id, k))).filter(|&(id, k)| k < store.get(id).value.numel()).collect();
    let err = grad_check_params(
        &store,
        |s| {
            let x = s.graph.constant(vol.clone());
            let y = unet3d_refine(s, &net, x).map_err(|e| AdError::invalid("unet", e.to_string()))?;
            let wv = s.graph.constant(w.clone());
            let p = s.graph.mul(y, wv)?;
            Ok(s.graph.sum_all(p))
        },
        &coords,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn latent_is_invariant_to_view_order() {
    let (cfg, data) = tiny_setup();
    let mut model = IlvModel::new(&cfg.model, cfg.data.bbox_half, 13).unwrap();
    randomize(&mut model.store, 14, 0.3);
    let run = |views: &[usize]| {
        let batch = view_batch(&cfg, &data[0], views).unwrap();
        let mut s = Session::inference(&model.store);
        let latent = ilv_forward(&mut s, &model.core, &batch, &cfg.model, cfg.data.bbox_half).unwrap();
        s.graph.value(latent).clone()
    };
    let a = run(&[0, 3, 5]);
    let b = run(&[5, 0, 3]);
    let err = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err:e}");
}

#[test]
fn end_to_end_loss_gradients_match_finite_differences() {
    let (mut cfg, data) = tiny_setup();
    cfg.model.up_kernel = 2;
    cfg.model.up_stride = 2;
    let mut model = IlvModel::new(&cfg.model, cfg.data.bbox_half, 15).unwrap();
    model.truncate = false;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    // move every zero-initialized branch off zero so all paths carry gradient
    for p in model.store.iter_mut() {
        p.value.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
    let inputs = [0, 4];
    let batch = view_batch(&cfg, &data[0], &inputs).unwrap();
    let vgt = volume_tensor(&data[0].phantom);
    let views = [0, 4, 6];
    let coords: Vec<(ParamId, usize)> = (0..model.store.len())
        .map(ParamId)
        .map(|id| (id, rng.gen_range(0..model.store.get(id).value.numel())))
        .collect();
    let err = grad_check_params(
        &model.store,
        |s| {
            let (l, _) = step_loss(&model, s, &cfg, &batch, &data[0], &vgt, &views, 10)
                .map_err(|e| AdError::invalid("ilv", e.to_string()))?;
            // scaled so most coordinates are judged by relative error
            Ok(s.graph.scale(l, 1000.0))
        },
        &coords,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err:e}");
}
