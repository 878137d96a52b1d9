use std::f64::consts::PI;

use super::Waveform;
use crate::error::{FpcgError, Result};

/// Zero crossings of the sinc kernel on each side of the output instant.
const KERNEL_ZERO_CROSSINGS: f64 = 32.0;

/// Band-limited resampling to `target_hz` using a Hann-windowed sinc.
pub fn resample(w: &Waveform, target_hz: i64) -> Result<Waveform> {
    if target_hz <= 0 || target_hz > u32::MAX as i64 {
        return Err(FpcgError::InvalidRate(target_hz));
    }
    let target = target_hz as u32;
    if target == w.sample_rate_hz {
        return Ok(w.clone());
    }
    let ratio = target as f64 / w.sample_rate_hz as f64;
    let out_len = ((w.len() as f64) * ratio).round().max(1.0) as usize;
    Ok(Waveform { samples: resample_by_ratio(&w.samples, ratio, out_len), sample_rate_hz: target })
}

/// Resamples `x` so that output index `j` corresponds to input time `j / ratio`.
///
/// Kernel weights are renormalised at every output instant, so DC is
/// preserved exactly (including near the edges).
pub fn resample_by_ratio(x: &[f64], ratio: f64, out_len: usize) -> Vec<f64> {
    let cutoff = ratio.min(1.0);
    let half_width = KERNEL_ZERO_CROSSINGS / cutoff;
    let n = x.len() as isize;
    (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for k in lo..=hi {
                let d = t - k as f64;
                let win = 0.5 + 0.5 * (PI * d / half_width).cos();
                let wgt = cutoff * sinc(cutoff * d) * win;
                acc += wgt * x[k as usize];
                norm += wgt;
            }
            if norm.abs() > 1e-12 {
                acc / norm
            } else {
                0.0
            }
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::fft;

    #[test]
    fn same_rate_is_identity() {
        let w = Waveform::new(vec![0.1, -0.2, 0.3], 16000).unwrap();
        assert_eq!(resample(&w, 16000).unwrap(), w);
    }

    #[test]
    fn invalid_rate() {
        let w = Waveform::zeros(10, 16000);
        assert!(matches!(resample(&w, 0), Err(FpcgError::InvalidRate(0))));
        assert!(matches!(resample(&w, -5), Err(FpcgError::InvalidRate(-5))));
    }

    #[test]
    fn constant_stays_constant() {
        let w = Waveform::new(vec![0.7; 4000], 16000).unwrap();
        let r = resample(&w, 11025).unwrap();
        assert_eq!(r.len(), (4000.0f64 * 11025.0 / 16000.0).round() as usize);
        for s in r.samples {
            assert!((s - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn tone_peak_survives_downsampling() {
        let sr = 16000.0;
        let x: Vec<f64> = (0..16000).map(|i| (2.0 * PI * 100.0 * i as f64 / sr).sin()).collect();
        let w = Waveform::new(x, 16000).unwrap();
        let r = resample(&w, 8000).unwrap();
        assert_eq!(r.len(), 8000);
        assert!((r.duration_s() - w.duration_s()).abs() <= 1.0 / 8000.0);
        let spec = fft::fft(&r.samples);
        let n = spec.len();
        let peak = (0..n / 2).max_by(|&a, &b| spec[a].norm().total_cmp(&spec[b].norm())).unwrap();
        let peak_hz = peak as f64 * 8000.0 / n as f64;
        assert!((peak_hz - 100.0).abs() <= 8000.0 / n as f64, "peak at {peak_hz}");
    }
}
