//! k-nearest neighbours on normalized features.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KnnModel {
    pub fn fit(points: Vec<Vec<f64>>, labels: Vec<usize>, p: &KnnParams) -> KnnModel {
        KnnModel { k: p.k.clamp(1, points.len()), points, labels }
    }

    /// Indices of the k nearest points; equal distances resolve to the lower index.
    pub fn neighbours(&self, x: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self.points.iter().enumerate().map(|(i, p)| (sq_dist(p, x), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(self.k).map(|(_, i)| i).collect()
    }

    /// Vote fraction for class 1.
    pub fn prob(&self, x: &[f64]) -> f64 {
        let nb = self.neighbours(x);
        nb.iter().filter(|&&i| self.labels[i] == 1).count() as f64 / nb.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_fractions() {
        let m = KnnModel::fit(vec![vec![0.0], vec![1.0], vec![2.0], vec![10.0]], vec![0, 0, 1, 1], &KnnParams { k: 3 });
        assert!((m.prob(&[0.5]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_distances_prefer_lower_index() {
        let m = KnnModel::fit(vec![vec![-1.0], vec![1.0]], vec![0, 1], &KnnParams { k: 1 });
        assert_eq!(m.neighbours(&[0.0]), vec![0]);
    }
}
