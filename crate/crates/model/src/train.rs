//! Synthetic data generation and the end-to-end training loop.

use std::fmt::Write as _;
use std::path::Path;

use ilv_autodiff::{clip_grad_norm, cosine_warmup_lr, AdamW, Session, Tensor, Var};
use ilv_tomo::geom::ConeBeamGeometry;
use ilv_tomo::metrics::psnr;
use ilv_tomo::phantom::{make_phantom, PhantomSpec};
use ilv_tomo::xproj::{add_gaussian_noise, forward_project};
use ilv_tomo::{ProjectionSet, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{ModelError, ModelResult};
use crate::gsplat::render_xray;
use crate::ilvnet::ViewBatch;
use crate::loss::{total_loss, LossBreakdown};
use crate::model::IlvModel;

/// One training scan: the phantom and its projections at every view.
#[derive(Debug, Clone)]
pub struct Sample {
    pub phantom: Volume,
    pub projections: ProjectionSet,
}

/// Acquisition geometry of a run: `total_views` equispaced angles and a
/// detector of `image_size²` pixels fitted to the box.
pub fn run_geometry(cfg: &RunConfig) -> ModelResult<ConeBeamGeometry> {
    let d = &cfg.data;
    Ok(ConeBeamGeometry::fitted(d.dso, d.dsd, cfg.model.image_size, d.total_views, d.bbox_half)?)
}

/// `n` of `total` view indices, equally spaced from view 0.
pub fn input_view_indices(total: usize, n: usize) -> ModelResult<Vec<usize>> {
    if n == 0 || n > total {
        return Err(ModelError::InvalidArgument(format!("{n} input views out of {total}")));
    }
    Ok((0..n).map(|i| i * total / n).collect())
}

pub fn phantom_spec(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> PhantomSpec {
    match cfg.data.phantom_ellipsoids {
        0 => PhantomSpec::shepp_logan(),
        k => PhantomSpec::random(rng, k),
    }
}

/// Seeded phantoms with noisy-or-clean projections at every view.
pub fn make_dataset(cfg: &RunConfig) -> ModelResult<Vec<Sample>> {
    cfg.validate()?;
    let geom = run_geometry(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let n = cfg.model.vol_size;
    let voxel = 2.0 * cfg.data.bbox_half / n as f64;
    let all: Vec<usize> = (0..cfg.data.total_views).collect();
    (0..cfg.data.samples)
        .map(|_| {
            let spec = phantom_spec(cfg, &mut rng);
            let phantom = make_phantom(&spec, [n; 3], voxel)?;
            let mut projections = forward_project(&phantom, &geom, &all)?;
            if cfg.data.noise_sigma > 0.0 {
                add_gaussian_noise(&mut projections, cfg.data.noise_sigma, &mut rng)?;
            }
            Ok(Sample { phantom, projections })
        })
        .collect()
}

/// Scale applied to detector images before they meet the network or the
/// image loss: one over the box side, so path lengths become O(1).
pub fn image_scale(cfg: &RunConfig) -> f64 {
    1.0 / (2.0 * cfg.data.bbox_half)
}

/// Network input of `sample` at `views`.
pub fn view_batch(cfg: &RunConfig, sample: &Sample, views: &[usize]) -> ModelResult<ViewBatch> {
    let sel = sample.projections.select(views)?;
    let images: Vec<Vec<f64>> = (0..sel.n_images()).map(|i| sel.image(i).iter().map(|&v| v as f64).collect()).collect();
    let refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
    ViewBatch::new(&refs, &sample.projections.geometry, views, cfg.model.patch, image_scale(cfg))
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub val_psnr: Option<f64>,
}

pub const TRACE_HEADER: &str = "step,lr,L_img,L_vol,L_refined,total,val_psnr";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in rows {
        let val = r.val_psnr.map(|p| format!("{p:.6}")).unwrap_or_default();
        let l = r.loss;
        writeln!(out, "{},{:e},{:e},{:e},{:e},{:e},{val}", r.step, r.lr, l.img, l.vol, l.refined, l.total).unwrap();
    }
    out
}

pub fn write_trace(rows: &[TraceRow], path: impl AsRef<Path>) -> ModelResult<()> {
    std::fs::write(path, trace_csv(rows))?;
    Ok(())
}

/// Coarse-volume PSNR of the model on `sample`.
pub fn validate(model: &IlvModel, cfg: &RunConfig, sample: &Sample, views: &[usize]) -> ModelResult<f64> {
    let batch = view_batch(cfg, sample, views)?;
    let mut s = Session::inference(&model.store);
    let f = model.forward(&mut s, &batch, false)?;
    Ok(psnr(&s.graph.value(f.coarse).data, &sample.phantom.to_f64())?)
}

/// `[nz, ny, nx]` ground-truth tensor of a phantom.
pub fn volume_tensor(v: &Volume) -> Tensor {
    let [nx, ny, nz] = v.dims;
    Tensor { shape: vec![nz, ny, nx], data: v.to_f64() }
}

/// Forward pass and objective of one training step: render every view in
/// `views`, voxelize, refine once the refinement loss is active.
#[allow(clippy::too_many_arguments)]
pub fn step_loss(
    model: &IlvModel,
    s: &mut Session,
    cfg: &RunConfig,
    batch: &ViewBatch,
    sample: &Sample,
    volume_gt: &Tensor,
    views: &[usize],
    step: u64,
) -> ModelResult<(Var, LossBreakdown)> {
    let refine = step >= cfg.loss.refine_activation;
    let scale = image_scale(cfg);
    let geom = &sample.projections.geometry;
    let f = model.forward(s, batch, refine)?;
    let mut imgs = Vec::with_capacity(views.len());
    let mut gt = Vec::with_capacity(views.len() * geom.det_rows * geom.det_cols);
    for &v in views {
        let img = render_xray(&mut s.graph, &f.gaussians, geom, v, model.truncate)?;
        imgs.push(s.graph.reshape(img, &[1, geom.det_rows, geom.det_cols])?);
        let pos = sample
            .projections
            .view_indices
            .iter()
            .position(|&x| x == v)
            .ok_or_else(|| ModelError::InvalidArgument(format!("view {v} was not projected")))?;
        gt.extend(sample.projections.image(pos).iter().map(|&p| p as f64 * scale));
    }
    let stacked = s.graph.concat(&imgs, 0)?;
    let pred = s.graph.scale(stacked, scale);
    let gt = Tensor { shape: vec![views.len(), geom.det_rows, geom.det_cols], data: gt };
    total_loss(&mut s.graph, pred, &gt, f.coarse, f.refined, volume_gt, &cfg.loss, step)
}

/// Train for `cfg.train.steps` steps, cycling through `data` in a seeded
/// random order. `on_row` sees each trace row as it is produced.
pub fn train(model: &mut IlvModel, data: &[Sample], cfg: &RunConfig, mut on_row: impl FnMut(&TraceRow)) -> ModelResult<Vec<TraceRow>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::InvalidArgument("training needs at least one sample".into()));
    }
    let tc = &cfg.train;
    let inputs = input_view_indices(cfg.data.total_views, cfg.data.input_views)?;
    let others: Vec<usize> = (0..cfg.data.total_views).filter(|v| !inputs.contains(v)).collect();
    let batches = data.iter().map(|s| view_batch(cfg, s, &inputs)).collect::<ModelResult<Vec<_>>>()?;
    let volumes: Vec<Tensor> = data.iter().map(|s| volume_tensor(&s.phantom)).collect();
    let opt = AdamW { weight_decay: tc.weight_decay, ..AdamW::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed);
    let mut rows = Vec::with_capacity(tc.steps as usize);
    for step in 1..=tc.steps {
        let k = if data.len() == 1 { 0 } else { rng.gen_range(0..data.len()) };
        let mut views = inputs.clone();
        if tc.holdout_view && !others.is_empty() {
            views.push(others[rng.gen_range(0..others.len())]);
        }
        let lr = cosine_warmup_lr(step, tc.warmup, tc.steps, tc.base_lr)?;

        let mut s = Session::train(&model.store);
        let (loss, breakdown) = match step_loss(model, &mut s, cfg, &batches[k], &data[k], &volumes[k], &views, step) {
            Ok(r) => r,
            Err(e) => {
                // diverged weights surface as invalid primitives before any loss exists
                if let Some(p) = model.store.iter().find(|p| p.value.data.iter().any(|v| !v.is_finite())) {
                    return Err(ModelError::NonFiniteLoss { step, detail: format!("parameter {} is not finite ({e})", p.name) });
                }
                return Err(e);
            }
        };
        if !breakdown.total.is_finite() {
            return Err(ModelError::NonFiniteLoss { step, detail: format!("{breakdown:?} at lr {lr:e}") });
        }
        let mut grads = s.graph.backward(loss)?;
        let mut pg = s.param_grads(&mut grads);
        drop(s);
        if tc.grad_clip > 0.0 {
            clip_grad_norm(&mut pg, tc.grad_clip);
        }
        opt.step(&mut model.store, &pg, lr, step)?;

        let val_psnr = if step % tc.val_every.max(1) == 0 || step == tc.steps {
            Some(validate(model, cfg, &data[0], &inputs)?)
        } else {
            None
        };
        let row = TraceRow { step, lr, loss: breakdown, val_psnr };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}
