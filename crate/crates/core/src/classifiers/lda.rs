//! Two-class linear discriminant with a ridge-regularized pooled covariance.

use serde::{Deserialize, Serialize};

use super::gbt::sigmoid;
use crate::error::{FpcgError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaParams {
    pub ridge: f64,
}

impl Default for LdaParams {
    fn default() -> Self {
        Self { ridge: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub means: [Vec<f64>; 2],
    pub priors: [f64; 2],
    /// `Sigma^-1 (mu1 - mu0)`.
    pub w: Vec<f64>,
    pub b: f64,
}

/// In-place Cholesky factor (lower); fails on a non-positive pivot.
fn cholesky(a: &mut [Vec<f64>]) -> Result<()> {
    let n = a.len();
    for j in 0..n {
        let s: f64 = (0..j).map(|k| a[j][k] * a[j][k]).sum();
        let d = a[j][j] - s;
        if d <= 0.0 || !d.is_finite() {
            return Err(FpcgError::DegenerateFeatures("covariance is not positive definite".into()));
        }
        a[j][j] = d.sqrt();
        for i in j + 1..n {
            let s: f64 = (0..j).map(|k| a[i][k] * a[j][k]).sum();
            a[i][j] = (a[i][j] - s) / a[j][j];
        }
    }
    Ok(())
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

pub fn fit_lda(x: &[Vec<f64>], y: &[usize], p: &LdaParams) -> Result<LdaModel> {
    let d = x[0].len();
    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (row, &t) in x.iter().zip(y) {
        counts[t] += 1;
        means[t].iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    for c in 0..2 {
        means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }
    let mut cov = vec![vec![0.0; d]; d];
    for (row, &t) in x.iter().zip(y) {
        let r: Vec<f64> = row.iter().zip(&means[t]).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in 0..=i {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    let dof = (x.len().saturating_sub(2)).max(1) as f64;
    for i in 0..d {
        for j in 0..=i {
            cov[i][j] /= dof;
            cov[j][i] = cov[i][j];
        }
        cov[i][i] += p.ridge;
    }
    cholesky(&mut cov)?;
    let diff: Vec<f64> = means[1].iter().zip(&means[0]).map(|(a, b)| a - b).collect();
    let w = chol_solve(&cov, &diff);
    let mid: Vec<f64> = means[1].iter().zip(&means[0]).map(|(a, b)| 0.5 * (a + b)).collect();
    let n = x.len() as f64;
    let priors = [counts[0] as f64 / n, counts[1] as f64 / n];
    let b = -w.iter().zip(&mid).map(|(a, m)| a * m).sum::<f64>() + (priors[1] / priors[0]).ln();
    Ok(LdaModel { means, priors, w, b })
}

impl LdaModel {
    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = vec![vec![4.0, 2.0, 0.4], vec![2.0, 3.0, 0.5], vec![0.4, 0.5, 2.0]];
        let mut l = a.clone();
        cholesky(&mut l).unwrap();
        let x = chol_solve(&l, &[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(cholesky(&mut a).is_err());
    }
}
