//! Isotropic total variation `Σ √(Δx² + Δy² + Δz² + ε²)` with forward
//! differences (zero difference across the far boundary).

pub const TV_EPS: f64 = 1e-6;

#[inline]
fn diffs(x: &[f64], dims: [usize; 3], i: usize, j: usize, k: usize) -> [f64; 3] {
    let [nx, ny, nz] = dims;
    let idx = i + nx * (j + ny * k);
    let v = x[idx];
    [
        if i + 1 < nx { x[idx + 1] - v } else { 0.0 },
        if j + 1 < ny { x[idx + nx] - v } else { 0.0 },
        if k + 1 < nz { x[idx + nx * ny] - v } else { 0.0 },
    ]
}

pub fn tv_value(x: &[f64], dims: [usize; 3], eps: f64) -> f64 {
    let [nx, ny, nz] = dims;
    let mut sum = 0.0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let d = diffs(x, dims, i, j, k);
                sum += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + eps * eps).sqrt();
            }
        }
    }
    sum
}

pub fn tv_gradient(x: &[f64], dims: [usize; 3], eps: f64) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut g = vec![0.0; x.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * k);
                let d = diffs(x, dims, i, j, k);
                let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + eps * eps).sqrt();
                let (a, b, c) = (d[0] / n, d[1] / n, d[2] / n);
                g[idx] -= a + b + c;
                if i + 1 < nx {
                    g[idx + 1] += a;
                }
                if j + 1 < ny {
                    g[idx + nx] += b;
                }
                if k + 1 < nz {
                    g[idx + nx * ny] += c;
                }
            }
        }
    }
    g
}
