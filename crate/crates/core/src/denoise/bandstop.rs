use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;
use crate::transforms::fft::{dft_exact, ifft_in_place};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandstopConfig {
    /// Stop bins must reach this percentile of `|F(m)|` (0 disables the test).
    pub percentile: f64,
    /// ...and `|F(m)|` must be at least this fraction of `|F(s_s)|` in the same bin.
    pub dominance: f64,
    pub attenuation: f64,
}

impl Default for BandstopConfig {
    fn default() -> Self {
        Self { percentile: 95.0, dominance: 0.5, attenuation: 0.05 }
    }
}

/// Linear-interpolated percentile of unsorted values, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// One-sided bins `k` (with mirror `n - k`) where the noise profile `m` is
/// strong, as decided by `cfg`.
pub fn stop_bins(s_spec: &[Complex64], m_spec: &[Complex64], cfg: &BandstopConfig) -> Vec<usize> {
    let n = m_spec.len();
    let half = n / 2 + 1;
    let mags: Vec<f64> = m_spec[..half].iter().map(|c| c.norm()).collect();
    let thr = if cfg.percentile > 0.0 { percentile(&mags, cfg.percentile) } else { 0.0 };
    (0..half).filter(|&k| mags[k] > 0.0 && mags[k] >= thr && mags[k] >= cfg.dominance * s_spec[k].norm()).collect()
}

/// Attenuates the bins of `F(s_s)` where `F(m)` is strong; yields `s_d`.
pub fn bandstop_by_noise_profile(s_s: &Waveform, m: &Waveform, cfg: &BandstopConfig) -> Result<Waveform> {
    if s_s.len() != m.len() {
        return Err(FpcgError::LengthMismatch { left: s_s.len(), right: m.len() });
    }
    if m.samples.iter().all(|&v| v == 0.0) || s_s.is_empty() {
        return Ok(s_s.clone());
    }
    let mut spec = dft_exact(&s_s.samples);
    let m_spec = dft_exact(&m.samples);
    let stops = stop_bins(&spec, &m_spec, cfg);
    if stops.is_empty() {
        return Ok(s_s.clone());
    }
    let n = spec.len();
    for k in stops {
        spec[k] *= cfg.attenuation;
        // mirror bin keeps the spectrum conjugate symmetric
        if k != 0 && 2 * k != n {
            spec[n - k] *= cfg.attenuation;
        }
    }
    ifft_in_place(&mut spec);
    Ok(Waveform { samples: spec.into_iter().map(|c| c.re).collect(), sample_rate_hz: s_s.sample_rate_hz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(n: usize, f: f64, a: f64) -> Vec<f64> {
        (0..n).map(|i| a * (2.0 * PI * f * i as f64 / 8000.0).sin()).collect()
    }

    fn band_energy(x: &[f64], lo: f64, hi: f64) -> f64 {
        let s = dft_exact(x);
        let n = s.len();
        (0..n / 2 + 1)
            .filter(|&k| {
                let f = k as f64 * 8000.0 / n as f64;
                f >= lo && f < hi
            })
            .map(|k| s[k].norm_sqr())
            .sum()
    }

    #[test]
    fn zero_profile_is_identity() {
        let s = Waveform::new(tone(1000, 100.0, 0.5), 8000).unwrap();
        let out = bandstop_by_noise_profile(&s, &Waveform::zeros(1000, 8000), &BandstopConfig::default()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn planted_interferer_removed() {
        let n = 8000;
        let low = tone(n, 100.0, 0.5);
        let high = tone(n, 3000.0, 0.5);
        let s: Vec<f64> = low.iter().zip(&high).map(|(a, b)| a + b).collect();
        let s = Waveform::new(s, 8000).unwrap();
        let m = Waveform::new(high, 8000).unwrap();
        let out = bandstop_by_noise_profile(&s, &m, &BandstopConfig::default()).unwrap();
        let before_hi = band_energy(&s.samples, 2900.0, 3100.0);
        let after_hi = band_energy(&out.samples, 2900.0, 3100.0);
        assert!(10.0 * (before_hi / after_hi).log10() >= 20.0);
        let before_lo = band_energy(&s.samples, 50.0, 150.0);
        let after_lo = band_energy(&out.samples, 50.0, 150.0);
        assert!((10.0 * (before_lo / after_lo).log10()).abs() <= 1.0);
    }

    #[test]
    fn length_checked() {
        let r = bandstop_by_noise_profile(&Waveform::zeros(10, 8000), &Waveform::zeros(11, 8000), &BandstopConfig::default());
        assert!(matches!(r, Err(FpcgError::LengthMismatch { .. })));
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 50.0), 2.0);
        assert_eq!(percentile(&[0.0, 10.0], 95.0), 9.5);
    }
}
