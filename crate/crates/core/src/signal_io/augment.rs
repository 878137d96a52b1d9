use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{resample_by_ratio, Waveform};
use crate::error::Result;
use crate::transforms::{istft, stft, TimeFrequencyGrid};

/// Training-set augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Augmentation {
    PitchShift { semitones: f64 },
    AddNoise { snr_db: f64 },
}

const PV_WINDOW: usize = 1024;
const PV_HOP: usize = 256;

/// Applies `kind` to `w`; the output has the input's length and rate.
pub fn augment(w: &Waveform, kind: Augmentation, seed: u64) -> Result<Waveform> {
    w.require_non_empty()?;
    match kind {
        Augmentation::AddNoise { snr_db } => Ok(add_noise(w, snr_db, seed)),
        Augmentation::PitchShift { semitones } => pitch_shift(w, semitones),
    }
}

fn add_noise(w: &Waveform, snr_db: f64, seed: u64) -> Waveform {
    let power = w.energy() / w.len() as f64;
    let noise_power = power / 10f64.powf(snr_db / 10.0);
    if noise_power <= 0.0 || !noise_power.is_finite() {
        return w.clone();
    }
    let normal = Normal::new(0.0, noise_power.sqrt()).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform { samples: w.samples.iter().map(|&s| s + normal.sample(&mut rng)).collect(), sample_rate_hz: w.sample_rate_hz }
}

/// Phase-vocoder stretch to `1/factor` speed followed by resampling back
/// to the original length.
fn pitch_shift(w: &Waveform, semitones: f64) -> Result<Waveform> {
    let factor = 2f64.powf(semitones / 12.0);
    if (factor - 1.0).abs() < 1e-12 {
        return Ok(w.clone());
    }
    let n = w.len();
    let window = PV_WINDOW.min(n.next_power_of_two()).max(4);
    let hop = (window / 4).min(PV_HOP).max(1);
    let grid = stft(w, window, hop)?;
    let stretched = time_stretch(&grid, 1.0 / factor, ((n as f64) * factor).round() as usize);
    let long = istft(&stretched)?;
    let samples = resample_by_ratio(&long.samples, 1.0 / factor, n);
    Waveform::new(samples, w.sample_rate_hz)
}

/// Phase vocoder: advances through the analysis frames at `rate` frames per
/// output frame, interpolating magnitudes and accumulating phase.
fn time_stretch(grid: &TimeFrequencyGrid, rate: f64, target_len: usize) -> TimeFrequencyGrid {
    let (frames, bins) = grid.bins.dim();
    let hop = grid.frame_hop as f64;
    let expected: Vec<f64> = (0..bins).map(|k| 2.0 * PI * k as f64 * hop / grid.window_len as f64).collect();

    let max_len = if frames > 0 { (frames - 1) as f64 / rate } else { 0.0 };
    let out_frames = ((target_len.saturating_sub(1)) / grid.frame_hop + 1).min(max_len.floor() as usize + 1);
    let mut out = Array2::<Complex64>::zeros((out_frames, bins));
    let mut phase: Vec<f64> = (0..bins).map(|k| grid.bins[[0, k]].arg()).collect();

    for t in 0..out_frames {
        let pos = t as f64 * rate;
        let i = (pos.floor() as usize).min(frames - 1);
        let j = (i + 1).min(frames - 1);
        let alpha = pos - i as f64;
        for k in 0..bins {
            let a = grid.bins[[i, k]];
            let b = grid.bins[[j, k]];
            let mag = (1.0 - alpha) * a.norm() + alpha * b.norm();
            out[[t, k]] = Complex64::from_polar(mag, phase[k]);
            let mut dphi = b.arg() - a.arg() - expected[k];
            dphi -= 2.0 * PI * (dphi / (2.0 * PI)).round();
            phase[k] += expected[k] + dphi;
        }
    }
    let signal_len = target_len.min((out_frames.saturating_sub(1)) * grid.frame_hop + 1);
    TimeFrequencyGrid { bins: out, frame_hop: grid.frame_hop, window_len: grid.window_len, sample_rate_hz: grid.sample_rate_hz, signal_len }
}
