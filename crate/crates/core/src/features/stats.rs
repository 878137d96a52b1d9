//! Scalar statistics over a real sequence.

use serde::{Deserialize, Serialize};

use crate::error::{FpcgError, Result};
use crate::transforms::fft;

pub fn mean(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(FpcgError::EmptyInput);
    }
    Ok(x.iter().sum::<f64>() / x.len() as f64)
}

/// Unbiased sample variance (N - 1 denominator).
pub fn variance(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(FpcgError::TooFewSamples { needed: 2, got: x.len() });
    }
    let m = mean(x)?;
    Ok(x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64)
}

/// Median; the lower-middle element for even lengths.
pub fn median(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(FpcgError::EmptyInput);
    }
    let mut v = x.to_vec();
    let mid = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(*m)
}

fn std_dev_nonzero(x: &[f64]) -> Result<(f64, f64)> {
    let var = variance(x)?;
    let m = mean(x)?;
    // relative test: a constant signal leaves only rounding noise
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if var <= (scale * 1e-12).powi(2) {
        return Err(FpcgError::ZeroVariance);
    }
    Ok((m, var.sqrt()))
}

/// Pearson's second skewness coefficient, `3 (mean - median) / std`.
pub fn skewness(x: &[f64]) -> Result<f64> {
    let (m, s) = std_dev_nonzero(x)?;
    Ok(3.0 * (m - median(x)?) / s)
}

/// `sum (x - mean)^4 / ((N - 1) s^4)` with `s` the sample standard deviation.
pub fn kurtosis(x: &[f64]) -> Result<f64> {
    let (m, s) = std_dev_nonzero(x)?;
    let m4: f64 = x.iter().map(|v| (v - m).powi(4)).sum();
    Ok(m4 / ((x.len() - 1) as f64 * s.powi(4)))
}

/// Shannon entropy (nats) of the normalised one-sided power spectrum.
pub fn spectral_entropy(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(FpcgError::EmptyInput);
    }
    let spec = fft::dft_exact(x);
    let n = spec.len();
    let power: Vec<f64> = spec[..n / 2 + 1].iter().map(|c| c.norm_sqr() / n as f64).collect();
    let total: f64 = power.iter().sum();
    if !(total > 0.0) {
        return Err(FpcgError::ZeroSpectrum);
    }
    let h = -power
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            q * q.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

pub fn energy(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(FpcgError::EmptyInput);
    }
    Ok(x.iter().map(|v| v * v).sum())
}

pub fn rms(x: &[f64]) -> Result<f64> {
    Ok((energy(x)? / x.len() as f64).sqrt())
}

/// Zero crossings per frame of `frame_len` sample pairs, with `sgn(0) = +1`.
/// Returns the per-frame counts and their mean; a trailing partial frame is dropped.
pub fn zcr(x: &[f64], frame_len: usize) -> Result<(Vec<f64>, f64)> {
    if frame_len < 2 {
        return Err(FpcgError::InvalidFrame(frame_len));
    }
    let n_frames = x.len().saturating_sub(1) / frame_len;
    if n_frames == 0 {
        return Err(FpcgError::InvalidFrame(frame_len));
    }
    let sgn = |v: f64| -> f64 {
        if v >= 0.0 {
            1.0
        } else {
            -1.0
        }
    };
    let frames: Vec<f64> = (0..n_frames)
        .map(|t| {
            let start = t * frame_len;
            0.5 * (start..start + frame_len).map(|k| (sgn(x[k]) - sgn(x[k + 1])).abs()).sum::<f64>()
        })
        .collect();
    let m = frames.iter().sum::<f64>() / n_frames as f64;
    Ok((frames, m))
}

/// The seven per-signal statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSet {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub spectral_entropy: f64,
    pub energy: f64,
    pub rms: f64,
    /// Set when a degenerate input forced a policy value (zero variance,
    /// zero spectrum or a single sample).
    pub degenerate: bool,
}

impl StatSet {
    pub const NAMES: [&'static str; 7] = ["mean", "variance", "skewness", "kurtosis", "spectral_entropy", "energy", "rms"];

    pub fn values(&self) -> [f64; 7] {
        [self.mean, self.variance, self.skewness, self.kurtosis, self.spectral_entropy, self.energy, self.rms]
    }
}

/// All seven statistics. Degenerate inputs map skewness, kurtosis and
/// entropy to 0 with `degenerate` set instead of failing; only an empty
/// input is an error.
pub fn stat_set(x: &[f64]) -> Result<StatSet> {
    let mean = mean(x)?;
    let mut degenerate = false;
    let mut policy = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(FpcgError::ZeroVariance | FpcgError::ZeroSpectrum | FpcgError::TooFewSamples { .. }) => {
            degenerate = true;
            Ok(0.0)
        }
        Err(e) => Err(e),
    };
    let variance = policy(variance(x))?;
    let skewness = policy(skewness(x))?;
    let kurtosis = policy(kurtosis(x))?;
    let spectral_entropy = policy(spectral_entropy(x))?;
    Ok(StatSet { mean, variance, skewness, kurtosis, spectral_entropy, energy: energy(x)?, rms: rms(x)?, degenerate })
}
