//! Training objective: image L1 + SSIM, coarse-volume MSE and the delayed
//! refined-volume MSE.

use ilv_autodiff::{Graph, Tensor, Var};
use ilv_tomo::metrics::{gaussian_window, SSIM_K1, SSIM_K2, SSIM_WINDOW};

use crate::config::LossConfig;
use crate::error::{ModelError, ModelResult};

/// Scalar values of one evaluation of [`total_loss`]. `img` already
/// includes its λ weights; `vol` and `refined` are the unweighted MSEs,
/// with `refined` exactly 0 before activation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub img: f64,
    pub vol: f64,
    pub refined: f64,
    pub total: f64,
}

fn check_same(g: &Graph, a: Var, b: Var, what: &str) -> ModelResult<()> {
    if g.shape(a) != g.shape(b) {
        return Err(ModelError::InvalidArgument(format!("{what}: {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

pub fn mse(g: &mut Graph, a: Var, b: Var) -> ModelResult<Var> {
    check_same(g, a, b, "mse")?;
    let d = g.sub(a, b)?;
    let d2 = g.square(d);
    Ok(g.mean_all(d2))
}

pub fn l1(g: &mut Graph, a: Var, b: Var) -> ModelResult<Var> {
    check_same(g, a, b, "l1")?;
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean_all(d))
}

/// Mean SSIM over every valid window of a `[B, H, W]` batch, with the same
/// window and constants as the evaluation metric.
pub fn ssim_loss_term(g: &mut Graph, a: Var, b: Var) -> ModelResult<Var> {
    check_same(g, a, b, "ssim")?;
    let s = g.shape(a).to_vec();
    if s.len() != 3 || s[1] < SSIM_WINDOW || s[2] < SSIM_WINDOW {
        return Err(ModelError::InvalidArgument(format!("ssim needs [B, H>=11, W>=11] images, got {s:?}")));
    }
    let w = gaussian_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let mu_a = g.blur2d_valid(a, &w)?;
    let mu_b = g.blur2d_valid(b, &w)?;
    let e_aa = g.blur2d_valid(aa, &w)?;
    let e_bb = g.blur2d_valid(bb, &w)?;
    let e_ab = g.blur2d_valid(ab, &w)?;
    let ma2 = g.square(mu_a);
    let mb2 = g.square(mu_b);
    let mab = g.mul(mu_a, mu_b)?;
    let va = g.sub(e_aa, ma2)?;
    let vb = g.sub(e_bb, mb2)?;
    let cov = g.sub(e_ab, mab)?;
    let n1 = g.scale(mab, 2.0);
    let n1 = g.add_scalar(n1, c1);
    let n2 = g.scale(cov, 2.0);
    let n2 = g.add_scalar(n2, c2);
    let d1 = g.add(ma2, mb2)?;
    let d1 = g.add_scalar(d1, c1);
    let d2 = g.add(va, vb)?;
    let d2 = g.add_scalar(d2, c2);
    let num = g.mul(n1, n2)?;
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    Ok(g.mean_all(map))
}

/// `L_img + λ_vol·L_vol + λ_refined·L_refined`, where `L_img = λ_L1·L1 +
/// λ_SSIM·(1 − SSIM)`. The refined term is left out of the graph entirely
/// while `step < refine_activation` or when no refined volume is given.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    images: Var,
    images_gt: &Tensor,
    coarse: Var,
    refined: Option<Var>,
    volume_gt: &Tensor,
    lw: &LossConfig,
    step: u64,
) -> ModelResult<(Var, LossBreakdown)> {
    let igt = g.constant(images_gt.clone());
    let vgt = g.constant(volume_gt.clone());
    let l1v = l1(g, images, igt)?;
    let ssim = ssim_loss_term(g, images, igt)?;
    let one_minus = g.scale(ssim, -1.0);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let a = g.scale(l1v, lw.l1);
    let b = g.scale(one_minus, lw.ssim);
    let img = g.add(a, b)?;
    let vol = mse(g, coarse, vgt)?;
    let wvol = g.scale(vol, lw.vol);
    let mut total = g.add(img, wvol)?;
    let mut refined_value = 0.0;
    if let (Some(r), true) = (refined, step >= lw.refine_activation) {
        let rl = mse(g, r, vgt)?;
        refined_value = g.value(rl).item();
        let wr = g.scale(rl, lw.refined);
        total = g.add(total, wr)?;
    }
    let breakdown = LossBreakdown {
        img: g.value(img).item(),
        vol: g.value(vol).item(),
        refined: refined_value,
        total: g.value(total).item(),
    };
    Ok((total, breakdown))
}
