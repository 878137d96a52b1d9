use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CqtConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub bins_per_octave: usize,
    pub hop: usize,
}

impl Default for CqtConfig {
    fn default() -> Self {
        Self { f_min: 32.7, f_max: 2000.0, bins_per_octave: 12, hop: 256 }
    }
}

impl CqtConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if self.bins_per_octave == 0 || self.hop == 0 {
            return Err(FpcgError::InvalidConfig("bins_per_octave and hop must be >= 1".into()));
        }
        if !(self.f_min > 0.0 && self.f_min <= self.f_max && self.f_max <= nyquist) {
            return Err(FpcgError::InvalidConfig(format!("CQT range [{}, {}] invalid for Nyquist {nyquist}", self.f_min, self.f_max)));
        }
        Ok(())
    }

    /// Quality factor `f_k / bandwidth_k`, shared by every bin.
    pub fn q_factor(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn n_bins(&self) -> usize {
        (self.bins_per_octave as f64 * (self.f_max / self.f_min).log2() + 1e-9).floor() as usize + 1
    }

    /// Geometric centre frequencies `f_min * 2^(k / bins_per_octave)`.
    pub fn center_frequencies(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|k| self.f_min * 2f64.powf(k as f64 / self.bins_per_octave as f64)).collect()
    }
}

struct Kernel {
    re: Vec<f64>,
    im: Vec<f64>,
    half: isize,
}

fn kernels(cfg: &CqtConfig, sr: f64) -> Vec<Kernel> {
    let q = cfg.q_factor();
    cfg.center_frequencies()
        .into_iter()
        .map(|f| {
            let len = ((q * sr / f).ceil() as usize).max(1);
            let window: Vec<f64> = (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / len as f64).cos()).collect();
            let norm: f64 = window.iter().sum();
            let half = (len / 2) as isize;
            let (re, im) = window
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let phase = -2.0 * PI * f * (i as isize - half) as f64 / sr;
                    (w * phase.cos() / norm, w * phase.sin() / norm)
                })
                .unzip();
            Kernel { re, im, half }
        })
        .collect()
}

/// Constant-Q magnitudes `(frames, n_bins)` by direct kernel summation.
/// Frame `t` is centred on sample `t * hop`.
pub fn cqt(w: &Waveform, cfg: &CqtConfig) -> Result<Array2<f64>> {
    cfg.validate(w.sample_rate_hz)?;
    w.require_non_empty()?;
    let kernels = kernels(cfg, w.sample_rate_hz as f64);
    let n = w.len() as isize;
    let n_frames = (w.len() - 1).div_ceil(cfg.hop) + 1;
    let x = &w.samples;
    let rows: Vec<Vec<f64>> = (0..n_frames)
        .into_par_iter()
        .map(|t| {
            let center = (t * cfg.hop) as isize;
            kernels
                .iter()
                .map(|k| {
                    let origin = center - k.half;
                    let lo = (-origin).max(0) as usize;
                    let hi = ((n - origin).max(0) as usize).min(k.re.len());
                    let (mut re, mut im) = (0.0, 0.0);
                    for i in lo..hi {
                        let v = x[(origin + i as isize) as usize];
                        re += v * k.re[i];
                        im += v * k.im[i];
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        })
        .collect();
    let n_bins = kernels.len();
    Ok(Array2::from_shape_fn((n_frames, n_bins), |(t, k)| rows[t][k]))
}
