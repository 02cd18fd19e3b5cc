//! Central finite-difference checks of analytic gradients.
//!
//! The reported error for a coordinate is
//! `|g_an − g_fd| / max(1, |g_an|, |g_fd|)`, maximized over the checked
//! coordinates.

use crate::error::{AdError, AdResult};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::Tensor;

pub const DEFAULT_H: f64 = 1e-4;

fn rel_err(ga: f64, gfd: f64) -> f64 {
    (ga - gfd).abs() / 1f64.max(ga.abs()).max(gfd.abs())
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> AdResult<f64>
where
    F: Fn(&mut Graph, &[Var]) -> AdResult<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(AdError::NonScalar(v.shape.clone()));
    }
    Ok(v.item())
}

/// Check every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> AdResult<f64>
where
    F: Fn(&mut Graph, &[Var]) -> AdResult<Var>,
{
    let coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect();
    grad_check_coords(f, inputs, h, &coords)
}

/// Check the listed `(input, flat index)` coordinates only.
pub fn grad_check_coords<F>(f: F, inputs: &[Tensor], h: f64, coords: &[(usize, usize)]) -> AdResult<f64>
where
    F: Fn(&mut Graph, &[Var]) -> AdResult<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    let analytic: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for &(i, j) in coords {
        let x0 = work[i].data[j];
        work[i].data[j] = x0 + h;
        let fp = eval(&f, &work)?;
        work[i].data[j] = x0 - h;
        let fm = eval(&f, &work)?;
        work[i].data[j] = x0;
        let gfd = (fp - fm) / (2.0 * h);
        let ga = analytic[i].as_ref().map_or(0.0, |t| t.data[j]);
        worst = worst.max(rel_err(ga, gfd));
    }
    Ok(worst)
}

/// Check the gradient of a parameterized scalar with respect to the listed
/// `(parameter, flat index)` coordinates.
pub fn grad_check_params<F>(store: &ParamStore, f: F, coords: &[(ParamId, usize)], h: f64) -> AdResult<f64>
where
    F: Fn(&mut Session) -> AdResult<Var>,
{
    let scalar = |s: &mut Session, out: Var| -> AdResult<f64> {
        let v = s.graph.value(out);
        if v.numel() != 1 {
            return Err(AdError::NonScalar(v.shape.clone()));
        }
        Ok(v.item())
    };
    let mut sess = Session::train(store);
    let out = f(&mut sess)?;
    let mut grads = sess.graph.backward(out)?;
    let analytic = sess.param_grads(&mut grads);
    drop(sess);
    let mut work = store.clone();
    let mut worst = 0.0f64;
    for &(id, j) in coords {
        let x0 = store.get(id).value.data[j];
        let mut at = |x: f64| -> AdResult<f64> {
            work.get_mut(id).value.data[j] = x;
            let mut s = Session::inference(&work);
            let out = f(&mut s)?;
            scalar(&mut s, out)
        };
        let fp = at(x0 + h)?;
        let fm = at(x0 - h)?;
        work.get_mut(id).value.data[j] = x0;
        let gfd = (fp - fm) / (2.0 * h);
        let ga = analytic[id.0].as_ref().map_or(0.0, |t| t.data[j]);
        worst = worst.max(rel_err(ga, gfd));
    }
    Ok(worst)
}
