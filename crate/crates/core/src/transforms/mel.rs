use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stft::{stft, StftConfig};
use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;

/// Floor applied before the MFCC logarithm.
const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub stft: StftConfig,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Apply `ln(1 + S)` to the mel power.
    pub log: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { stft: StftConfig::default(), n_mels: 64, f_min: 0.0, f_max: 2000.0, log: true }
    }
}

impl MelConfig {
    fn validate(&self, sample_rate: u32) -> Result<()> {
        self.stft.validate().map_err(|e| FpcgError::InvalidConfig(e.to_string()))?;
        let nyquist = sample_rate as f64 / 2.0;
        if self.n_mels == 0 {
            return Err(FpcgError::InvalidConfig("n_mels must be >= 1".into()));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(FpcgError::InvalidConfig(format!("mel range [{}, {}] outside [0, {nyquist}]", self.f_min, self.f_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub mel: MelConfig,
    pub n_coeffs: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self { mel: MelConfig::default(), n_coeffs: 13 }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Band centre frequencies in Hz.
pub fn mel_center_frequencies(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (1..=n_mels).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect()
}

/// Triangular filterbank, `(n_mels, n_bins)`, unit peak.
///
/// A band too narrow to touch any FFT bin gets weight 1 on the bin nearest
/// its centre, so every band sees some energy.
pub fn mel_filterbank(n_mels: usize, f_min: f64, f_max: f64, window_len: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = window_len / 2 + 1;
    let bin_hz = sample_rate as f64 / window_len as f64;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            if w > 0.0 {
                fb[[m, k]] = w;
                any = true;
            }
        }
        if !any {
            let k = ((center / bin_hz).round() as usize).min(n_bins - 1);
            fb[[m, k]] = 1.0;
        }
    }
    fb
}

/// Mel-band power per frame, `(frames, n_mels)`.
pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<Array2<f64>> {
    cfg.validate(w.sample_rate_hz)?;
    let grid = stft(w, cfg.stft.window_len, cfg.stft.hop)?;
    let fb = mel_filterbank(cfg.n_mels, cfg.f_min, cfg.f_max, cfg.stft.window_len, w.sample_rate_hz);
    let mel = grid.power().dot(&fb.t());
    Ok(if cfg.log { mel.mapv(f64::ln_1p) } else { mel })
}

/// Orthonormal DCT-II.
pub fn dct_ii_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let basis = dct_basis(n, n);
    (0..n).map(|k| (0..n).map(|i| basis[[k, i]] * x[i]).sum()).collect()
}

fn dct_basis(n_out: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_out, n), |(k, i)| {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
    })
}

/// MFCCs from mel power (`(frames, n_mels)`, linear scale).
pub fn mfcc_from_mel_power(mel_power: &Array2<f64>, n_coeffs: usize) -> Result<Array2<f64>> {
    let n_mels = mel_power.ncols();
    if n_coeffs == 0 || n_coeffs > n_mels {
        return Err(FpcgError::InvalidConfig(format!("n_coeffs {n_coeffs} must be in 1..={n_mels}")));
    }
    let log_mel = mel_power.mapv(|v| v.max(LOG_FLOOR).ln());
    Ok(log_mel.dot(&dct_basis(n_coeffs, n_mels).t()))
}

/// Cepstral coefficients `(frames, n_coeffs)`: DCT-II of natural-log mel energies.
/// The mel config's own `log` flag is ignored here.
pub fn mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<Array2<f64>> {
    if cfg.n_coeffs == 0 || cfg.n_coeffs > cfg.mel.n_mels {
        return Err(FpcgError::InvalidConfig(format!("n_coeffs {} must be in 1..={}", cfg.n_coeffs, cfg.mel.n_mels)));
    }
    let linear = MelConfig { log: false, ..cfg.mel.clone() };
    mfcc_from_mel_power(&mel_spectrogram(w, &linear)?, cfg.n_coeffs)
}
