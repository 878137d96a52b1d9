//! Soft-margin SVM trained with Pegasos, Platt-scaled into probabilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gbt::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    /// Passes over the training rows.
    pub epochs: usize,
    /// Share of rows held out to fit the Platt sigmoid.
    pub calibration_fraction: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, kernel: Kernel::Linear, epochs: 50, calibration_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SvmWeights {
    /// Last entry is the bias.
    Linear(Vec<f64>),
    Kernel {
        gamma: f64,
        support: Vec<Vec<f64>>,
        coef: Vec<f64>,
        bias: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: SvmWeights,
    /// Platt parameters: `P(class 1) = 1 / (1 + exp(a f + b))`.
    pub platt_a: f64,
    pub platt_b: f64,
    /// Whether the sigmoid was fit on held-out rows or fell back to training margins.
    pub held_out_calibration: bool,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
}

impl SvmWeights {
    pub fn margin(&self, x: &[f64]) -> f64 {
        match self {
            SvmWeights::Linear(w) => {
                let d = w.len() - 1;
                x.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>() + w[d]
            }
            SvmWeights::Kernel { gamma, support, coef, bias } => {
                support.iter().zip(coef).map(|(s, c)| c * rbf(s, x, *gamma)).sum::<f64>() + bias
            }
        }
    }
}

/// Pegasos on `lambda/2 |w|^2 + mean hinge`, `lambda = 1/(C n)`; the bias is an appended constant feature.
fn pegasos(x: &[Vec<f64>], y: &[usize], p: &SvmParams, rng: &mut ChaCha8Rng) -> SvmWeights {
    let n = x.len();
    let lambda = 1.0 / (p.c * n as f64);
    let sign = |t: usize| if t == 1 { 1.0 } else { -1.0 };
    let steps = p.epochs.max(1) * n;
    match p.kernel {
        Kernel::Linear => {
            let d = x[0].len() + 1;
            let mut w = vec![0.0; d];
            let mut avg = vec![0.0; d];
            let mut averaged = 0.0;
            for t in 1..=steps {
                let i = rng.random_range(0..n);
                let eta = 1.0 / (lambda * t as f64);
                let yi = sign(y[i]);
                let f = x[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[d - 1];
                w.iter_mut().for_each(|v| *v *= 1.0 - eta * lambda);
                if yi * f < 1.0 {
                    w.iter_mut().zip(x[i].iter().chain(std::iter::once(&1.0))).for_each(|(v, a)| *v += eta * yi * a);
                }
                // project onto the ball that contains the optimum
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cap = 1.0 / lambda.sqrt();
                if norm > cap {
                    w.iter_mut().for_each(|v| *v *= cap / norm);
                }
                // average over the second half of the run
                if 2 * t > steps {
                    avg.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
                    averaged += 1.0;
                }
            }
            SvmWeights::Linear(avg.into_iter().map(|a| a / averaged).collect())
        }
        Kernel::Rbf { gamma } => {
            let mut alpha = vec![0u32; n];
            // kernel Pegasos keeps hit counts; f_t(x) = (1/(lambda t)) sum_j alpha_j y_j K(x_j, x)
            let gram: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| rbf(a, b, gamma) + 1.0).collect()).collect();
            let mut last = 0usize;
            for t in 1..=steps {
                let i = rng.random_range(0..n);
                let f: f64 =
                    (0..n).filter(|&j| alpha[j] > 0).map(|j| alpha[j] as f64 * sign(y[j]) * gram[j][i]).sum::<f64>() / (lambda * t as f64);
                if sign(y[i]) * f < 1.0 {
                    alpha[i] += 1;
                }
                last = t;
            }
            let scale = 1.0 / (lambda * last as f64);
            let (mut support, mut coef) = (Vec::new(), Vec::new());
            let mut bias = 0.0;
            for j in (0..n).filter(|&j| alpha[j] > 0) {
                let c = alpha[j] as f64 * sign(y[j]) * scale;
                support.push(x[j].clone());
                coef.push(c);
                // the +1 in the Gram matrix is the implicit bias feature
                bias += c;
            }
            SvmWeights::Kernel { gamma, support, coef, bias }
        }
    }
}

/// Platt's sigmoid fit with smoothed targets, by Newton's method with backtracking.
pub fn platt(f: &[f64], y: &[usize]) -> (f64, f64) {
    let np = y.iter().filter(|&&t| t == 1).count() as f64;
    let nn = y.len() as f64 - np;
    let hi = (np + 1.0) / (np + 2.0);
    let lo = 1.0 / (nn + 2.0);
    let t: Vec<f64> = y.iter().map(|&c| if c == 1 { hi } else { lo }).collect();
    let obj = |a: f64, b: f64| -> f64 {
        f.iter()
            .zip(&t)
            .map(|(&fi, &ti)| {
                let z = a * fi + b;
                // -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
                let lse = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                lse - (1.0 - ti) * z
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((nn + 1.0) / (np + 1.0)).ln());
    let mut cur = obj(a, b);
    for _ in 0..100 {
        let (mut g1, mut g2, mut h11, mut h22, mut h21) = (0.0, 0.0, 1e-12, 1e-12, 0.0);
        for (&fi, &ti) in f.iter().zip(&t) {
            let p = sigmoid(-(a * fi + b));
            let d1 = ti - p;
            let d2 = p * (1.0 - p);
            g1 += fi * d1;
            g2 += d1;
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
        }
        if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let next = obj(na, nb);
            if next < cur + 1e-4 * step * (g1 * da + g2 * db) {
                a = na;
                b = nb;
                cur = next;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                return (a, b);
            }
        }
    }
    (a, b)
}

/// Stratified calibration split from a seeded per-class shuffle.
fn calibration_split(y: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut cal = Vec::new();
    for c in 0..2 {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let k = (fraction * idx.len() as f64).round() as usize;
        // both sides need at least two rows of the class
        if k < 2 || idx.len() - k < 2 {
            return None;
        }
        cal.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    cal.sort_unstable();
    Some((train, cal))
}

pub fn fit_svm(x: &[Vec<f64>], y: &[usize], p: &SvmParams, seed: u64) -> SvmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = if p.calibration_fraction > 0.0 { calibration_split(y, p.calibration_fraction, &mut rng) } else { None };
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
    };
    match split {
        Some((tr, cal)) => {
            let (xt, yt) = pick(&tr);
            let weights = pegasos(&xt, &yt, p, &mut rng);
            let (xc, yc) = pick(&cal);
            let f: Vec<f64> = xc.iter().map(|r| weights.margin(r)).collect();
            let (platt_a, platt_b) = platt(&f, &yc);
            SvmModel { weights, platt_a, platt_b, held_out_calibration: true }
        }
        None => {
            let weights = pegasos(x, y, p, &mut rng);
            let f: Vec<f64> = x.iter().map(|r| weights.margin(r)).collect();
            let (platt_a, platt_b) = platt(&f, y);
            SvmModel { weights, platt_a, platt_b, held_out_calibration: false }
        }
    }
}

impl SvmModel {
    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(-(self.platt_a * self.weights.margin(x) + self.platt_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn platt_is_increasing_in_margin_for_separable_scores() {
        let f: Vec<f64> = (0..40).map(|i| (i as f64 - 19.5) / 5.0).collect();
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let (a, _) = platt(&f, &y);
        assert!(a < 0.0);
    }

    #[test]
    fn rbf_separates_a_ring() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let th = i as f64 * 0.37;
            let r = if i % 2 == 0 { 0.5 } else { 2.0 };
            x.push(vec![r * th.cos(), r * th.sin()]);
            y.push(i % 2);
        }
        let p = SvmParams { kernel: Kernel::Rbf { gamma: 1.0 }, c: 10.0, ..SvmParams::default() };
        let m = fit_svm(&x, &y, &p, 2);
        let acc = x.iter().zip(&y).filter(|(r, &t)| usize::from(m.prob(r) > 0.5) == t).count() as f64 / 60.0;
        assert!(acc >= 0.95, "{acc}");
    }
}
