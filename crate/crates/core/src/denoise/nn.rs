//! Minimal dense network: tanh hidden layers, linear output, Adam.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(fan_in, fan_out)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept for the backward pass; `acts[0]` is the input.
pub struct Trace {
    acts: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("trace holds the input")
    }
}

impl Mlp {
    /// Glorot-normal weights, zero biases.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        let layers = sizes
            .windows(2)
            .map(|p| {
                let std = (2.0 / (p[0] + p[1]) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Dense { w: Array2::from_shape_fn((p[0], p[1]), |_| normal.sample(rng)), b: Array1::zeros(p[1]) }
            })
            .collect();
        Mlp { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn forward(&self, x: &Array2<f64>) -> Trace {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.w) + &l.b;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Trace { acts }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).acts.pop().expect("non-empty")
    }

    /// Gradients of a loss given `d_out = dL/d(output)`.
    pub fn backward(&self, trace: &Trace, d_out: Array2<f64>) -> Vec<Dense> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out;
        for i in (0..self.layers.len()).rev() {
            let input = &trace.acts[i];
            grads.push(Dense { w: input.t().dot(&delta).as_standard_layout().into_owned(), b: delta.sum_axis(Axis(0)) });
            if i > 0 {
                let mut up = delta.dot(&self.layers[i].w.t());
                // tanh' = 1 - a^2 on the previous layer's activation
                up.zip_mut_with(input, |d, &a| *d *= 1.0 - a * a);
                delta = up;
            }
        }
        grads.reverse();
        grads
    }

    /// Mean squared error over all entries and its gradients.
    pub fn mse_and_grad(&self, x: &Array2<f64>, target: &Array2<f64>) -> (f64, Vec<Dense>) {
        let trace = self.forward(x);
        let diff = trace.output() - target;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let grads = self.backward(&trace, diff * (2.0 / n));
        (loss, grads)
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

/// Adam over a flat list of parameter arrays.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update; `params[i]` and `grads[i]` are flat views of equal length.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut [f64]>, grads: impl Iterator<Item = &'a [f64]>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Adam bound to an [`Mlp`].
pub fn mlp_adam(net: &Mlp, lr: f64) -> Adam {
    let sizes: Vec<usize> = net.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect();
    Adam::new(lr, &sizes)
}

pub fn mlp_step(net: &mut Mlp, opt: &mut Adam, grads: &[Dense]) {
    let params =
        net.layers.iter_mut().flat_map(|l| [l.w.as_slice_mut().expect("standard layout"), l.b.as_slice_mut().expect("standard layout")]);
    let g = grads.iter().flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")]);
    opt.step(params, g);
}

/// Fisher-Yates shuffled `0..n`.
pub fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    idx
}
