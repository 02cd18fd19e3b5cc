//! Reference computations written independently of the library code paths
//! they check: direct quadrature, explicit attention, window-by-window SSIM.

use ilv_tomo::geom::Ray;
use ilv_tomo::Volume;

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Inverse of a 3×3 matrix by cofactors.
pub fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            out[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    out
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), eps, 40)
}

/// Line integral of `d·exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))` along `ray`, integrating
/// the density numerically over `[t0 - half, t0 + half]` in `pieces`
/// adaptive-Simpson panels.
pub fn gaussian_line_integral_quadrature(
    mu: [f64; 3],
    scale: [f64; 3],
    q: [f64; 4],
    d: f64,
    ray: &Ray,
    t0: f64,
    half: f64,
    pieces: usize,
) -> f64 {
    let r = quat_to_matrix(q);
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = (0..3).map(|k| r[i][k] * scale[k] * scale[k] * r[j][k]).sum();
        }
    }
    let lam = inv3(sigma);
    let density = |t: f64| {
        let p = ray.at(t);
        let x = [p.0[0] - mu[0], p.0[1] - mu[1], p.0[2] - mu[2]];
        let m: f64 = (0..3).map(|i| (0..3).map(|j| x[i] * lam[i][j] * x[j]).sum::<f64>()).sum();
        d * (-0.5 * m).exp()
    };
    let h = 2.0 * half / pieces as f64;
    (0..pieces).map(|i| simpson(&density, t0 - half + i as f64 * h, t0 - half + (i + 1) as f64 * h, 1e-15)).sum()
}

/// `x·W + b` with `W` stored row-major as `[din, dout]`.
pub fn linear(x: &[Vec<f64>], w: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let dout = b.len();
    let din = w.len() / dout;
    x.iter().map(|r| (0..dout).map(|j| b[j] + (0..din).map(|i| r[i] * w[i * dout + j]).sum::<f64>()).collect()).collect()
}

pub fn layer_norm(x: &[Vec<f64>], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let m = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            r.iter().enumerate().map(|(i, v)| (v - m) / (var + eps).sqrt() * gamma[i] + beta[i]).collect()
        })
        .collect()
}

/// Multi-head scaled dot-product attention of every query over every
/// unmasked key.
pub fn attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], heads: usize, mask: Option<&[bool]>) -> Vec<Vec<f64>> {
    let d = q[0].len();
    let dh = d / heads;
    q.iter()
        .map(|qr| {
            let mut out = vec![0.0; d];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let scores: Vec<Option<f64>> = k
                    .iter()
                    .enumerate()
                    .map(|(j, kr)| {
                        mask.map_or(true, |m| m[j])
                            .then(|| cols.clone().map(|c| qr[c] * kr[c]).sum::<f64>() / (dh as f64).sqrt())
                    })
                    .collect();
                let mx = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().flatten().map(|s| (s - mx).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    if let Some(s) = s {
                        let p = (s - mx).exp() / z;
                        for c in cols.clone() {
                            out[c] += p * v[j][c];
                        }
                    }
                }
            }
            out
        })
        .collect()
}

pub fn psnr_direct(a: &[f64], b: &[f64]) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a[i] - b[i]).powi(2);
    }
    10.0 * (a.len() as f64 / se).log10()
}

/// SSIM with an explicit 11×11 Gaussian window evaluated at every valid
/// window position.
pub fn ssim_direct(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
    const W: usize = 11;
    let sigma = 1.5f64;
    let mut win = [[0.0; W]; W];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *w = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *w;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for r0 in 0..=rows - W {
        for c0 in 0..=cols - W {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..W {
                for j in 0..W {
                    let w = win[i][j] / total;
                    let (x, y) = (a[(r0 + i) * cols + c0 + j], b[(r0 + i) * cols + c0 + j]);
                    ma += w * x;
                    mb += w * y;
                    aa += w * x * x;
                    bb += w * y * y;
                    ab += w * x * y;
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Every slice along every axis through [`ssim_direct`], averaged per axis
/// and then over the axes.
pub fn ssim_3slab_direct(v: &Volume, w: &Volume) -> f64 {
    let [nx, ny, nz] = v.dims;
    let mut axes = 0.0;
    for axis in 0..3 {
        let (n, rows, cols) = match axis {
            0 => (nx, nz, ny),
            1 => (ny, nz, nx),
            _ => (nz, ny, nx),
        };
        let mut acc = 0.0;
        for s in 0..n {
            let mut a = Vec::with_capacity(rows * cols);
            let mut b = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    let (i, j, k) = match axis {
                        0 => (s, c, r),
                        1 => (c, s, r),
                        _ => (c, r, s),
                    };
                    a.push(v.get(i, j, k) as f64);
                    b.push(w.get(i, j, k) as f64);
                }
            }
            acc += ssim_direct(&a, &b, rows, cols);
        }
        axes += acc / n as f64;
    }
    axes / 3.0
}
