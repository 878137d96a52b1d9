use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal_io::Waveform;
use crate::transforms::{istft, stft, StftConfig};

/// Stationary spectral gate settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub stft: StftConfig,
    /// Share of lowest-energy frames that define the noise floor.
    pub noise_fraction: f64,
    /// Bins below `floor * threshold_factor` are gated.
    pub threshold_factor: f64,
    /// Gain applied to gated bins.
    pub attenuation: f64,
    /// Half-width (in bins) of the median filter applied to the floor across
    /// frequency, so a steady narrow-band component does not raise its own floor.
    pub floor_smoothing_bins: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig { window_len: 512, hop: 128 },
            noise_fraction: 0.1,
            threshold_factor: 2.0,
            attenuation: 0.05,
            floor_smoothing_bins: 8,
        }
    }
}

fn running_median(x: &[f64], half: usize) -> Vec<f64> {
    if half == 0 {
        return x.to_vec();
    }
    let mut buf = Vec::with_capacity(2 * half + 1);
    (0..x.len())
        .map(|k| {
            buf.clear();
            buf.extend_from_slice(&x[k.saturating_sub(half)..(k + half + 1).min(x.len())]);
            let mid = buf.len() / 2;
            *buf.select_nth_unstable_by(mid, f64::total_cmp).1
        })
        .collect()
}

/// Per-bin noise floor: mean magnitude over the quietest frames, median
/// filtered across frequency.
pub fn noise_floor(mags: &ndarray::Array2<f64>, cfg: &GateConfig) -> Vec<f64> {
    let n_frames = mags.nrows();
    let mut order: Vec<(f64, usize)> = mags.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum()).zip(0..).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let take = ((cfg.noise_fraction * n_frames as f64).ceil() as usize).clamp(1, n_frames);
    let mut floor = vec![0.0; mags.ncols()];
    for &(_, t) in &order[..take] {
        for (f, v) in floor.iter_mut().zip(mags.row(t)) {
            *f += v / take as f64;
        }
    }
    running_median(&floor, cfg.floor_smoothing_bins)
}

/// Returns `(denoised, noise_estimate)` with `noise_estimate = input - denoised`.
pub fn spectral_gate(w: &Waveform, cfg: &GateConfig) -> Result<(Waveform, Waveform)> {
    w.require_non_empty()?;
    let grid = stft(w, cfg.stft.window_len, cfg.stft.hop)?;
    let mags = grid.magnitudes();
    let floor = noise_floor(&mags, cfg);
    let mut bins = grid.bins.clone();
    for ((t, f), c) in bins.indexed_iter_mut() {
        if mags[[t, f]] < floor[f] * cfg.threshold_factor {
            *c *= Complex64::new(cfg.attenuation, 0.0);
        }
    }
    let denoised = istft(&grid.with_bins(bins))?;
    let noise: Vec<f64> = w.samples.iter().zip(&denoised.samples).map(|(a, b)| a - b).collect();
    Ok((denoised, Waveform { samples: noise, sample_rate_hz: w.sample_rate_hz }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::snr_db;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn tone(n: usize, sr: u32, f: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn clean_tone_passes() {
        let w = Waveform::new(tone(16000, 8000, 200.0), 8000).unwrap();
        let (d, n) = spectral_gate(&w, &GateConfig::default()).unwrap();
        let err: f64 = w.samples.iter().zip(&d.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / w.energy().sqrt() < 0.05);
        for ((a, b), c) in w.samples.iter().zip(&d.samples).zip(&n.samples) {
            assert!((a - b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn hiss_is_reduced() {
        let sr = 8000;
        let clean = tone(32000, sr, 150.0);
        let p: f64 = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, p.sqrt()).unwrap();
        let noisy: Vec<f64> = clean.iter().map(|c| c + normal.sample(&mut rng)).collect();
        let before = snr_db(&clean, &noisy);
        assert!(before.abs() < 0.2);
        let (d, _) = spectral_gate(&Waveform::new(noisy, sr).unwrap(), &GateConfig::default()).unwrap();
        let after = snr_db(&clean, &d.samples);
        assert!(after - before >= 6.0, "{before} -> {after}");
    }

    #[test]
    fn silence_stays_silent() {
        let (d, n) = spectral_gate(&Waveform::zeros(4000, 8000), &GateConfig::default()).unwrap();
        assert!(d.samples.iter().chain(&n.samples).all(|&v| v == 0.0));
    }

    #[test]
    fn median_filter() {
        assert_eq!(running_median(&[0.0, 0.0, 9.0, 0.0, 0.0], 1), vec![0.0; 5]);
        assert_eq!(running_median(&[1.0, 2.0, 3.0], 0), vec![1.0, 2.0, 3.0]);
    }
}
