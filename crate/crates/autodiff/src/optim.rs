use crate::error::{AdError, AdResult};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.05 }
    }
}

impl AdamW {
    /// One update at step `t ≥ 1`. Parameters without a gradient still decay.
    pub fn step(&self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64, t: u64) -> AdResult<()> {
        if t == 0 {
            return Err(AdError::invalid("adamw", "step counter starts at 1"));
        }
        if grads.len() != store.len() {
            return Err(AdError::shape("adamw", format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for (p, g) in store.iter_mut().zip(grads) {
            if let Some(g) = g {
                if g.shape != p.value.shape {
                    return Err(AdError::shape("adamw", format!("gradient {:?} for {} {:?}", g.shape, p.name, p.value.shape)));
                }
            }
            let decay = if p.decay { 1.0 - lr * self.weight_decay } else { 1.0 };
            for i in 0..p.value.data.len() {
                let gi = g.as_ref().map_or(0.0, |g| g.data[i]);
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * gi;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                p.value.data[i] = p.value.data[i] * decay - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm(grads: &[Option<Tensor>]) -> f64 {
    grads.iter().flatten().flat_map(|g| g.data.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Scale all gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let n = grad_norm(grads);
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        for g in grads.iter_mut().flatten() {
            g.data.iter_mut().for_each(|v| *v *= s);
        }
    }
    n
}

/// Linear warm-up from 0 to `base_lr` over `warmup` steps, then cosine
/// decay to 0 at `total`.
pub fn cosine_warmup_lr(step: u64, warmup: u64, total: u64, base_lr: f64) -> AdResult<f64> {
    if total <= warmup {
        return Err(AdError::invalid("cosine_warmup_lr", format!("total {total} must exceed warmup {warmup}")));
    }
    if step > total {
        return Err(AdError::invalid("cosine_warmup_lr", format!("step {step} past total {total}")));
    }
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(v: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![1], vec![v]).unwrap(), "test", decay).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store_with(0.37, true);
        let opt = AdamW { weight_decay: 0.0, ..AdamW::default() };
        for t in 1..=5 {
            opt.step(&mut s, &[Some(Tensor::zeros(&[1]))], 1e-2, t).unwrap();
        }
        assert_eq!(s.get(crate::params::ParamId(0)).value.data[0], 0.37);
    }

    #[test]
    fn first_step_hand_oracle() {
        let (p0, g, lr, eps) = (0.5, -0.3, 1e-3, 1e-8);
        let mut s = store_with(p0, true);
        let opt = AdamW { weight_decay: 0.0, eps, ..AdamW::default() };
        opt.step(&mut s, &[Some(Tensor::new(vec![1], vec![g]).unwrap())], lr, 1).unwrap();
        // m̂ = g, v̂ = g² after bias correction
        let expect = p0 - lr * g / ((g * g).sqrt() + eps);
        assert!((s.get(crate::params::ParamId(0)).value.data[0] - expect).abs() < 1e-15);

        // second step by hand
        let g2 = 0.7;
        let m = 0.9 * (0.1 * g) + 0.1 * g2;
        let v = 0.95 * (0.05 * g * g) + 0.05 * g2 * g2;
        let expect2 = expect - lr * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.9025)).sqrt() + eps);
        opt.step(&mut s, &[Some(Tensor::new(vec![1], vec![g2]).unwrap())], lr, 2).unwrap();
        assert!((s.get(crate::params::ParamId(0)).value.data[0] - expect2).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let mut s = store_with(2.0, true);
        let opt = AdamW { weight_decay: 0.1, ..AdamW::default() };
        opt.step(&mut s, &[Some(Tensor::zeros(&[1]))], 0.01, 1).unwrap();
        assert!((s.get(crate::params::ParamId(0)).value.data[0] - 2.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
        let mut nd = store_with(2.0, false);
        opt.step(&mut nd, &[None], 0.01, 1).unwrap();
        assert_eq!(nd.get(crate::params::ParamId(0)).value.data[0], 2.0);
    }

    #[test]
    fn step_zero_rejected() {
        let mut s = store_with(1.0, true);
        assert!(AdamW::default().step(&mut s, &[None], 0.1, 0).is_err());
    }

    #[test]
    fn schedule_values() {
        let base = 1e-4;
        assert_eq!(cosine_warmup_lr(0, 1000, 5000, base).unwrap(), 0.0);
        assert!((cosine_warmup_lr(500, 1000, 5000, base).unwrap() - base / 2.0).abs() < 1e-18);
        assert!((cosine_warmup_lr(1000, 1000, 5000, base).unwrap() - base).abs() < 1e-18);
        assert!((cosine_warmup_lr(3000, 1000, 5000, base).unwrap() - base / 2.0).abs() < 1e-12);
        assert!(cosine_warmup_lr(5000, 1000, 5000, base).unwrap().abs() < 1e-18);
        assert!(cosine_warmup_lr(0, 1000, 1000, base).is_err());
        assert!(cosine_warmup_lr(6000, 1000, 5000, base).is_err());
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Some(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()), None];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((grad_norm(&g) - 1.0).abs() < 1e-15);
    }
}
