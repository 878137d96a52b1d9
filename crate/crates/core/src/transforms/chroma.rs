use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stft::{stft, StftConfig};
use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;

pub const PITCH_CLASSES: [&str; 12] = ["C", "Cs", "D", "Ds", "E", "F", "Fs", "G", "Gs", "A", "As", "B"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChromaConfig {
    pub stft: StftConfig,
    /// Bins below this frequency are ignored (DC has no pitch class).
    pub f_min: f64,
    pub reference_a4_hz: f64,
    /// L2-normalise each frame (all-zero frames are left at zero).
    pub normalize: bool,
}

impl Default for ChromaConfig {
    fn default() -> Self {
        Self { stft: StftConfig::default(), f_min: 20.0, reference_a4_hz: 440.0, normalize: true }
    }
}

/// Pitch class (C = 0 … B = 11) of a frequency, octave folded.
pub fn pitch_class(freq_hz: f64, reference_a4_hz: f64) -> usize {
    let semis = (12.0 * (freq_hz / reference_a4_hz).log2()).round() as i64 + 9;
    semis.rem_euclid(12) as usize
}

/// Pitch-class energy profile `(frames, 12)`.
pub fn chroma(w: &Waveform, cfg: &ChromaConfig) -> Result<Array2<f64>> {
    cfg.stft.validate().map_err(|e| FpcgError::InvalidConfig(e.to_string()))?;
    if !(cfg.f_min > 0.0) || !(cfg.reference_a4_hz > 0.0) {
        return Err(FpcgError::InvalidConfig("chroma f_min and reference must be positive".into()));
    }
    let grid = stft(w, cfg.stft.window_len, cfg.stft.hop)?;
    let power = grid.power();
    let classes: Vec<Option<usize>> = (0..grid.n_bins())
        .map(|k| {
            let f = grid.bin_hz(k);
            (f >= cfg.f_min).then(|| pitch_class(f, cfg.reference_a4_hz))
        })
        .collect();
    let mut out = Array2::zeros((grid.n_frames(), 12));
    for (t, row) in power.rows().into_iter().enumerate() {
        for (k, &p) in row.iter().enumerate() {
            if let Some(c) = classes[k] {
                out[[t, c]] += p;
            }
        }
        if cfg.normalize {
            let norm = out.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                out.row_mut(t).mapv_inplace(|v| v / norm);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64) -> Waveform {
        Waveform::new((0..16000).map(|i| (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(), 16000).unwrap()
    }

    // frames whose window lies inside the signal
    fn argmax_classes(m: &Array2<f64>) -> Vec<usize> {
        m.rows().into_iter().skip(2).take(m.nrows() - 6).map(|r| (0..12).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap()).collect()
    }

    #[test]
    fn a440_is_class_a() {
        let m = chroma(&tone(440.0), &ChromaConfig::default()).unwrap();
        assert_eq!(m.ncols(), 12);
        assert!(argmax_classes(&m).iter().all(|&c| c == 9));
        for r in m.rows() {
            assert!((r.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn octaves_fold() {
        let a = argmax_classes(&chroma(&tone(440.0), &ChromaConfig::default()).unwrap());
        let b = argmax_classes(&chroma(&tone(880.0), &ChromaConfig::default()).unwrap());
        assert_eq!(a, b);
        assert_eq!(pitch_class(261.63, 440.0), 0);
        assert_eq!(pitch_class(110.0, 440.0), 9);
    }

    #[test]
    fn silence_stays_zero() {
        let m = chroma(&Waveform::zeros(5000, 16000), &ChromaConfig::default()).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
    }
}
