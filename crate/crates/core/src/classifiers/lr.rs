//! L2-regularized logistic regression by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::gbt::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrParams {
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm drops below this.
    pub tol: f64,
}

impl Default for LrParams {
    fn default() -> Self {
        Self { lambda: 1e-2, max_iter: 500, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean log-loss plus `lambda/2 |w|^2` (bias unpenalized), with its gradient `(dw, db)`.
pub fn lr_loss_grad(x: &[Vec<f64>], y: &[usize], w: &[f64], b: f64, lambda: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = dot(row, w) + b;
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        loss += softplus - t as f64 * z;
        let r = sigmoid(z) - t as f64;
        gw.iter_mut().zip(row).for_each(|(g, v)| *g += r * v);
        gb += r;
    }
    let reg = 0.5 * lambda * dot(w, w);
    gw.iter_mut().zip(w).for_each(|(g, wi)| *g = *g / n + lambda * wi);
    (loss / n + reg, gw, gb / n)
}

/// Largest eigenvalue of `[X 1]^T [X 1] / n` by power iteration.
fn gram_norm(x: &[Vec<f64>]) -> f64 {
    let d = x[0].len() + 1;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lam = 0.0;
    for _ in 0..100 {
        let mut out = vec![0.0; d];
        for row in x {
            let s = dot(row, &v[..d - 1]) + v[d - 1];
            out.iter_mut().zip(row.iter().chain(std::iter::once(&1.0))).for_each(|(o, r)| *o += s * r);
        }
        out.iter_mut().for_each(|o| *o /= x.len() as f64);
        let norm = dot(&out, &out).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lam = norm;
        v = out.into_iter().map(|o| o / norm).collect();
    }
    lam
}

pub fn fit_lr(x: &[Vec<f64>], y: &[usize], p: &LrParams) -> LrModel {
    let d = x[0].len();
    // the logistic loss is (1/4)-smooth in the margin
    let step = 1.0 / (0.25 * gram_norm(x) * 1.01 + p.lambda);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut iterations = 0;
    for it in 0..p.max_iter {
        let (_, gw, gb) = lr_loss_grad(x, y, &w, b, p.lambda);
        if (dot(&gw, &gw) + gb * gb).sqrt() < p.tol {
            break;
        }
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= step * g);
        b -= step * gb;
        iterations = it + 1;
    }
    LrModel { w, b, iterations }
}

impl LrModel {
    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(dot(x, &self.w) + self.b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_half() {
        let m = LrModel { w: vec![0.0; 3], b: 0.0, iterations: 0 };
        assert_eq!(m.prob(&[1.0, -2.0, 5.0]), 0.5);
    }

    #[test]
    fn gram_norm_of_identity_rows() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let g = gram_norm(&x);
        let m = [[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.5, 0.5, 1.0]];
        // largest root of det(M - l I), bracketed in [1, 3]
        let det = |l: f64| {
            let a = [[m[0][0] - l, m[0][1], m[0][2]], [m[1][0], m[1][1] - l, m[1][2]], [m[2][0], m[2][1], m[2][2] - l]];
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        };
        let (mut lo, mut hi) = (1.0, 3.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if det(lo).signum() == det(mid).signum() {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((g - lo).abs() < 1e-9, "{g} vs {lo}");
    }
}
