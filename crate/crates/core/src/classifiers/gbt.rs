//! Gradient-boosted regression trees on the logistic loss with Newton leaves.

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Row fraction drawn (without replacement) for each tree.
    pub subsample: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    /// Minimum gain to split.
    pub gamma: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { rounds: 200, max_depth: 3, learning_rate: 0.1, subsample: 0.8, lambda: 1.0, min_child_weight: 1e-3, gamma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(w) => return w,
                Node::Split { feature, threshold, left, right } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Mean logistic loss on the training rows after each round.
    pub loss_trace: Vec<f64>,
}

impl GbtModel {
    pub fn raw(&self, x: ArrayView1<f64>) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Probability of class 1.
    pub fn prob(&self, x: ArrayView1<f64>) -> f64 {
        sigmoid(self.raw(x))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss of raw scores against 0/1 labels.
pub fn log_loss(raw: &[f64], y: &[usize]) -> f64 {
    raw.iter()
        .zip(y)
        .map(|(&f, &t)| {
            // log(1 + e^f) - t f, computed stably
            let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
            softplus - t as f64 * f
        })
        .sum::<f64>()
        / raw.len() as f64
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Per-feature `(row, value)` lists, each in ascending value order within every node's range.
struct Lists {
    by_feature: Vec<Vec<(usize, f64)>>,
    scratch: Vec<(usize, f64)>,
    goes_left: Vec<bool>,
}

/// Best split of the node spanning `range` in every list.
fn best_split(lists: &Lists, range: std::ops::Range<usize>, g: &[f64], h: &[f64], p: &GbtParams) -> Option<Best> {
    let (g_tot, h_tot) = lists.by_feature[0][range.clone()].iter().fold((0.0, 0.0), |(a, b), &(i, _)| (a + g[i], b + h[i]));
    let parent = g_tot * g_tot / (h_tot + p.lambda);
    let scan = |f: usize| {
        let mut best: Option<Best> = None;
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in lists.by_feature[f][range.clone()].windows(2) {
            let ((i, a), (_, b)) = (w[0], w[1]);
            gl += g[i];
            hl += h[i];
            if a == b {
                continue;
            }
            let (gr, hr) = (g_tot - gl, h_tot - hl);
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = 0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - parent) - p.gamma;
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Best { gain, feature: f, threshold: 0.5 * (a + b) });
            }
        }
        best
    };
    let n_features = lists.by_feature.len();
    // small nodes are cheaper to scan serially
    let found: Vec<Option<Best>> = if range.len() * n_features < 50_000 {
        (0..n_features).map(scan).collect()
    } else {
        (0..n_features).into_par_iter().map(scan).collect()
    };
    // ties go to the lowest feature index, whatever the thread schedule
    found.into_iter().flatten().fold(None, |acc: Option<Best>, b| match acc {
        Some(a) if a.gain > b.gain || (a.gain == b.gain && a.feature < b.feature) => Some(a),
        _ => Some(b),
    })
}

fn grow(
    lists: &mut Lists,
    range: std::ops::Range<usize>,
    g: &[f64],
    h: &[f64],
    p: &GbtParams,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let (gs, hs) = lists.by_feature[0][range.clone()].iter().fold((0.0, 0.0), |(a, b), &(i, _)| (a + g[i], b + h[i]));
    nodes.push(Node::Leaf(-gs / (hs + p.lambda)));
    if depth >= p.max_depth || range.len() < 2 {
        return id;
    }
    let Some(best) = best_split(lists, range.clone(), g, h, p) else {
        return id;
    };
    for &(i, v) in &lists.by_feature[best.feature][range.clone()] {
        lists.goes_left[i] = v <= best.threshold;
    }
    // stable partition of every list's range around the same row set; leaf
    // children only need the first list
    let mut mid = range.start;
    let n_lists = if depth + 1 >= p.max_depth { 1 } else { lists.by_feature.len() };
    for f in 0..n_lists {
        let list = &mut lists.by_feature[f][range.clone()];
        lists.scratch.clear();
        let mut w = 0;
        for k in 0..list.len() {
            let e = list[k];
            if lists.goes_left[e.0] {
                list[w] = e;
                w += 1;
            } else {
                lists.scratch.push(e);
            }
        }
        list[w..].copy_from_slice(&lists.scratch);
        mid = range.start + w;
    }
    let left = grow(lists, range.start..mid, g, h, p, depth + 1, nodes);
    let right = grow(lists, mid..range.end, g, h, p, depth + 1, nodes);
    nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
    id
}

/// Fits a boosted ensemble; `y` holds 0/1 labels.
pub fn fit_gbt(x: &Array2<f64>, y: &[usize], p: &GbtParams, seed: u64) -> GbtModel {
    let n = x.nrows();
    let pos = y.iter().filter(|&&t| t == 1).count() as f64;
    let rate = (pos / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (rate / (1.0 - rate)).ln();
    let order: Vec<Vec<(usize, f64)>> = x
        .columns()
        .into_iter()
        .map(|col| {
            let mut idx: Vec<(usize, f64)> = col.iter().copied().enumerate().collect();
            idx.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            idx
        })
        .collect();
    let mut in_round = vec![false; n];
    let mut lists = Lists { by_feature: order.clone(), scratch: Vec::with_capacity(n), goes_left: vec![false; n] };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = vec![base_score; n];
    let mut trees = Vec::with_capacity(p.rounds);
    let mut loss_trace = Vec::with_capacity(p.rounds);
    let take = ((p.subsample.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(1, n);
    for _ in 0..p.rounds {
        let (g, h): (Vec<f64>, Vec<f64>) = raw
            .iter()
            .zip(y)
            .map(|(&f, &t)| {
                let q = sigmoid(f);
                (q - t as f64, (q * (1.0 - q)).max(1e-12))
            })
            .unzip();
        if take < n {
            in_round.fill(false);
            sample(&mut rng, n, take).into_iter().for_each(|i| in_round[i] = true);
        } else {
            in_round.fill(true);
        }
        for (list, o) in lists.by_feature.iter_mut().zip(&order) {
            list.clear();
            list.extend(o.iter().filter(|e| in_round[e.0]));
        }
        let mut nodes = Vec::new();
        grow(&mut lists, 0..take, &g, &h, p, 0, &mut nodes);
        let mut tree = Tree { nodes };
        let prev = loss_trace.last().copied().unwrap_or_else(|| log_loss(&raw, y));
        let delta: Vec<f64> = (0..n).map(|i| p.learning_rate * tree.predict(x.row(i))).collect();
        // a subsampled Newton step can overshoot on the full set; shrink the tree until it does not
        let mut shrink = 1.0;
        let mut next: Vec<f64>;
        loop {
            next = raw.iter().zip(&delta).map(|(f, d)| f + shrink * d).collect();
            if log_loss(&next, y) <= prev || shrink < 1e-6 {
                break;
            }
            shrink *= 0.5;
        }
        if log_loss(&next, y) > prev {
            shrink = 0.0;
            next = raw.clone();
        }
        if shrink != 1.0 {
            for node in &mut tree.nodes {
                if let Node::Leaf(w) = node {
                    *w *= shrink;
                }
            }
        }
        raw = next;
        loss_trace.push(log_loss(&raw, y));
        trees.push(tree);
    }
    GbtModel { base_score, learning_rate: p.learning_rate, trees, loss_trace }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_stump_finds_threshold() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
        let x = Array2::from_shape_vec((40, 1), xs.clone()).unwrap();
        let y: Vec<usize> = xs.iter().map(|&v| usize::from(v > 6.1)).collect();
        let p = GbtParams { rounds: 1, max_depth: 1, subsample: 1.0, ..GbtParams::default() };
        let m = fit_gbt(&x, &y, &p, 0);
        match m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert!((threshold - 6.125).abs() < 1e-12, "{threshold}"),
            _ => panic!("no split"),
        }
        assert_eq!(m.trees[0].depth(), 1);
    }

    #[test]
    fn loss_decreases() {
        let x = Array2::from_shape_fn((60, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let y: Vec<usize> = (0..60).map(|i| usize::from(x[[i, 0]] + x[[i, 1]] > 10.0)).collect();
        let m = fit_gbt(&x, &y, &GbtParams { rounds: 50, ..GbtParams::default() }, 1);
        assert!(m.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(m.loss_trace.last().unwrap() < &0.2);
    }

    #[test]
    fn stable_sigmoid_and_loss() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((log_loss(&[0.0], &[1]) - 2f64.ln()).abs() < 1e-15);
        assert!(log_loss(&[800.0], &[1]) < 1e-300 + 1e-12);
    }
}
