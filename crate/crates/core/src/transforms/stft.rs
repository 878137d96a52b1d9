use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{fft_in_place, ifft_in_place};
use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;

/// Window/hop pair for short-time analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_len: 1024, hop: 256 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || !self.window_len.is_power_of_two() {
            return Err(FpcgError::InvalidWindow(format!("window_len {} is not a power of two >= 2", self.window_len)));
        }
        if self.hop == 0 || self.hop > self.window_len {
            return Err(FpcgError::InvalidWindow(format!("hop {} outside 1..={}", self.hop, self.window_len)));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }
}

/// One-sided complex spectrogram, indexed `(frame, bin)`.
///
/// Frame `t` is centred on sample `t * frame_hop` of the original signal
/// (the signal is implicitly zero-padded by half a window on both sides).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyGrid {
    pub bins: Array2<Complex64>,
    pub frame_hop: usize,
    pub window_len: usize,
    pub sample_rate_hz: u32,
    /// Length of the signal the grid was computed from.
    pub signal_len: usize,
}

impl TimeFrequencyGrid {
    pub fn n_frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.ncols()
    }

    /// Centre frequency of bin `k` in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate_hz as f64 / self.window_len as f64
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm())
    }

    pub fn power(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm_sqr())
    }

    /// Same layout, new values.
    pub fn with_bins(&self, bins: Array2<Complex64>) -> TimeFrequencyGrid {
        TimeFrequencyGrid { bins, ..self.clone() }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Hann-windowed one-sided STFT.
pub fn stft(w: &Waveform, window_len: usize, hop: usize) -> Result<TimeFrequencyGrid> {
    let cfg = StftConfig { window_len, hop };
    cfg.validate()?;
    w.require_non_empty()?;
    let n = w.len();
    let half = window_len / 2;
    let n_frames = (n - 1).div_ceil(hop) + 1;
    let n_bins = cfg.n_bins();
    let window = hann(window_len);
    let mut bins = Array2::<Complex64>::zeros((n_frames, n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); window_len];
    for t in 0..n_frames {
        let origin = (t * hop) as isize - half as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = origin + i as isize;
            let v = if idx >= 0 && (idx as usize) < n { w.samples[idx as usize] } else { 0.0 };
            *b = Complex64::new(v * window[i], 0.0);
        }
        fft_in_place(&mut buf);
        for k in 0..n_bins {
            bins[[t, k]] = buf[k];
        }
    }
    Ok(TimeFrequencyGrid { bins, frame_hop: hop, window_len, sample_rate_hz: w.sample_rate_hz, signal_len: n })
}

/// Weighted overlap-add inverse with window-sum normalisation.
pub fn istft(g: &TimeFrequencyGrid) -> Result<Waveform> {
    StftConfig { window_len: g.window_len, hop: g.frame_hop }.validate().map_err(|e| FpcgError::NonInvertibleConfig(e.to_string()))?;
    let n_win = g.window_len;
    if g.n_bins() != n_win / 2 + 1 {
        return Err(FpcgError::NonInvertibleConfig(format!("{} bins for window {}", g.n_bins(), n_win)));
    }
    let n = g.signal_len;
    if n == 0 {
        return Err(FpcgError::NonInvertibleConfig("empty signal".into()));
    }
    let needed = (n - 1) / g.frame_hop + 1;
    if g.n_frames() < needed {
        return Err(FpcgError::NonInvertibleConfig(format!("{} frames cannot cover {} samples (need {})", g.n_frames(), n, needed)));
    }
    let half = n_win / 2;
    let window = hann(n_win);
    let mut out = vec![0.0; n];
    let mut norm = vec![0.0; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_win];
    for t in 0..g.n_frames() {
        let origin = (t * g.frame_hop) as isize - half as isize;
        if origin >= n as isize {
            break;
        }
        for k in 0..=half {
            buf[k] = g.bins[[t, k]];
        }
        for k in half + 1..n_win {
            buf[k] = g.bins[[t, n_win - k]].conj();
        }
        // DC and Nyquist bins must be real for a real frame
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        ifft_in_place(&mut buf);
        for i in 0..n_win {
            let idx = origin + i as isize;
            if idx >= 0 && (idx as usize) < n {
                out[idx as usize] += buf[i].re * window[i];
                norm[idx as usize] += window[i] * window[i];
            }
        }
    }
    for (o, &z) in out.iter_mut().zip(&norm) {
        if z < 1e-10 {
            return Err(FpcgError::NonInvertibleConfig("window overlap leaves uncovered samples".into()));
        }
        *o /= z;
    }
    Ok(Waveform { samples: out, sample_rate_hz: g.sample_rate_hz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn tone_peaks_at_expected_bin() {
        let sr = 16000.0;
        let x: Vec<f64> = (0..16000).map(|i| (2.0 * PI * 300.0 * i as f64 / sr).sin()).collect();
        let g = stft(&Waveform::new(x, 16000).unwrap(), 1024, 256).unwrap();
        assert_eq!(g.n_bins(), 513);
        let expected = (300.0f64 * 1024.0 / 16000.0).round() as usize;
        let mags = g.magnitudes();
        // skip the half-empty edge frames
        for t in 4..g.n_frames() - 4 {
            let row = mags.row(t);
            let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, expected);
        }
    }

    #[test]
    fn zero_signal_zero_grid() {
        let g = stft(&Waveform::zeros(3000, 8000), 256, 64).unwrap();
        assert!(g.bins.iter().all(|c| c.norm() == 0.0));
        let back = istft(&g).unwrap();
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn roundtrip_and_linearity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Waveform::new(x, 8000).unwrap();
        for (win, hop) in [(256, 64), (512, 256), (1024, 256), (64, 32)] {
            let g = stft(&w, win, hop).unwrap();
            let back = istft(&g).unwrap();
            assert_eq!(back.len(), w.len());
            let err = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "win {win} hop {hop}: {err}");
        }
        let g = stft(&w, 256, 64).unwrap();
        let scaled = istft(&g.with_bins(g.bins.mapv(|c| c * 3.0))).unwrap();
        for (a, b) in w.samples.iter().zip(&scaled.samples) {
            assert!((3.0 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_windows() {
        let w = Waveform::zeros(100, 8000);
        assert!(matches!(stft(&w, 100, 10), Err(FpcgError::InvalidWindow(_))));
        assert!(matches!(stft(&w, 64, 65), Err(FpcgError::InvalidWindow(_))));
        assert!(matches!(stft(&w, 64, 0), Err(FpcgError::InvalidWindow(_))));
        // hop == window leaves the Hann zeros uncovered
        let g = stft(&Waveform::new(vec![1.0; 300], 8000).unwrap(), 64, 64).unwrap();
        assert!(matches!(istft(&g), Err(FpcgError::NonInvertibleConfig(_))));
    }
}
