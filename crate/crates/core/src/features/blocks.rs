use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stats::{stat_set, zcr, StatSet};
use crate::error::{FpcgError, Result};
use crate::signal_io::Waveform;
use crate::transforms::{self, chroma, cqt, mel_spectrogram, mfcc, ChromaConfig, CqtConfig, MelConfig, MfccConfig};

/// Named, fixed-layout feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: Vec<String>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, schema: Vec<String>) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(FpcgError::ShapeMismatch(format!("{} values for {} names", values.len(), schema.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FpcgError::InvalidConfig(format!("feature {} is not finite", schema[i])));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = schema.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(FpcgError::SchemaMismatch(format!("duplicate feature name {dup}")));
        }
        Ok(Self { values, schema })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Concatenates blocks in order.
    pub fn concat(blocks: &[FeatureVector]) -> Result<FeatureVector> {
        let values = blocks.iter().flat_map(|b| b.values.iter().copied()).collect();
        let schema = blocks.iter().flat_map(|b| b.schema.iter().cloned()).collect();
        FeatureVector::new(values, schema)
    }

    fn from_stats(prefix: &str, s: &StatSet) -> (Vec<f64>, Vec<String>) {
        (s.values().to_vec(), StatSet::NAMES.iter().map(|n| format!("{prefix}.{n}")).collect())
    }
}

/// Every knob of feature extraction, snapshotted into trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub chroma: ChromaConfig,
    pub mel: MelConfig,
    pub mfcc: MfccConfig,
    pub cqt: CqtConfig,
    pub wavelet: String,
    pub wavelet_levels: usize,
    /// Upper edges of the frequency bands, starting from 0 Hz.
    pub band_edges_hz: Vec<f64>,
    /// Append the zero-crossing rate to the time block.
    pub include_zcr: bool,
    pub zcr_frame_len: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            chroma: ChromaConfig::default(),
            mel: MelConfig::default(),
            mfcc: MfccConfig::default(),
            cqt: CqtConfig::default(),
            wavelet: "coif1".into(),
            wavelet_levels: 3,
            band_edges_hz: vec![300.0, 600.0, 900.0, 1200.0, 1500.0],
            include_zcr: false,
            zcr_frame_len: 512,
        }
    }
}

/// Chroma, mel, MFCC and CQT matrices of one signal, each `(frames, bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticMatrices {
    pub chroma: Array2<f64>,
    pub mel: Array2<f64>,
    pub mfcc: Array2<f64>,
    pub cqt: Array2<f64>,
}

pub fn acoustic_matrices(w: &Waveform, cfg: &FeatureConfig) -> Result<AcousticMatrices> {
    Ok(AcousticMatrices {
        chroma: chroma(w, &cfg.chroma)?,
        mel: mel_spectrogram(w, &cfg.mel)?,
        mfcc: mfcc(w, &cfg.mfcc)?,
        cqt: cqt(w, &cfg.cqt)?,
    })
}

fn grand_mean(m: &Array2<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.mean().unwrap_or(0.0)
    }
}

/// Seven statistics of the raw samples.
pub fn time_stats(s_d: &Waveform) -> Result<FeatureVector> {
    let (values, schema) = FeatureVector::from_stats("time", &stat_set(&s_d.samples)?);
    FeatureVector::new(values, schema)
}

/// Time block: the seven statistics plus the grand means of the four
/// acoustic matrices (and the mean ZCR when enabled).
pub fn time_features(s_d: &Waveform, acoustic: &AcousticMatrices, cfg: &FeatureConfig) -> Result<FeatureVector> {
    let (mut values, mut schema) = FeatureVector::from_stats("time", &stat_set(&s_d.samples)?);
    for (name, m) in
        [("chroma_mean", &acoustic.chroma), ("mel_mean", &acoustic.mel), ("mfcc_mean", &acoustic.mfcc), ("cqt_mean", &acoustic.cqt)]
    {
        values.push(grand_mean(m));
        schema.push(format!("time.{name}"));
    }
    if cfg.include_zcr {
        values.push(zcr(&s_d.samples, cfg.zcr_frame_len)?.1);
        schema.push("time.zcr".into());
    }
    FeatureVector::new(values, schema)
}

/// Frequency block: statistics of the magnitude spectrum inside each band.
pub fn freq_features(s_d: &Waveform, cfg: &FeatureConfig) -> Result<FeatureVector> {
    let sr = s_d.sample_rate_hz as f64;
    let top = cfg.band_edges_hz.last().copied().unwrap_or(0.0);
    if cfg.band_edges_hz.is_empty() || sr < 2.0 * top {
        return Err(FpcgError::InvalidConfig(format!("sample rate {sr} Hz cannot resolve bands up to {top} Hz")));
    }
    s_d.require_non_empty()?;
    let spec = transforms::fft::dft_exact(&s_d.samples);
    let n = spec.len();
    let mags: Vec<f64> = spec[..n / 2 + 1].iter().map(|c| c.norm()).collect();
    let hz = |k: usize| k as f64 * sr / n as f64;
    let mut values = Vec::with_capacity(7 * cfg.band_edges_hz.len());
    let mut schema = Vec::with_capacity(values.capacity());
    let mut lo = 0.0;
    for (b, &hi) in cfg.band_edges_hz.iter().enumerate() {
        let band: Vec<f64> = (0..mags.len()).filter(|&k| hz(k) >= lo && hz(k) < hi).map(|k| mags[k]).collect();
        if band.is_empty() {
            return Err(FpcgError::InvalidConfig(format!("band [{lo}, {hi}) Hz holds no spectral bins")));
        }
        let (v, s) = FeatureVector::from_stats(&format!("freq.band{}", b + 1), &stat_set(&band)?);
        values.extend(v);
        schema.extend(s);
        lo = hi;
    }
    FeatureVector::new(values, schema)
}

/// Time-frequency block: statistics of the approximation and each detail band.
pub fn tf_features(s_d: &Waveform, cfg: &FeatureConfig) -> Result<FeatureVector> {
    let dec = transforms::dwt(&s_d.samples, &cfg.wavelet, cfg.wavelet_levels)?;
    let levels = dec.levels;
    let mut values = Vec::new();
    let mut schema = Vec::new();
    let (v, s) = FeatureVector::from_stats(&format!("tf.approx{levels}"), &stat_set(&dec.approximation)?);
    values.extend(v);
    schema.extend(s);
    for (i, band) in dec.details.iter().enumerate() {
        let (v, s) = FeatureVector::from_stats(&format!("tf.detail{}", levels - i), &stat_set(band)?);
        values.extend(v);
        schema.extend(s);
    }
    FeatureVector::new(values, schema)
}

/// `[time stats (7), frequency block (35), time-frequency block (28)]`.
pub fn full_statistical_vector(s_d: &Waveform, cfg: &FeatureConfig) -> Result<FeatureVector> {
    FeatureVector::concat(&[time_stats(s_d)?, freq_features(s_d, cfg)?, tf_features(s_d, cfg)?])
}

/// Reduction of a `(frames, bins)` matrix to a classifier-ready vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Summary {
    PerBinMean,
}

/// Mean over frames for each bin; names are `{prefix}.{bin:02}`.
pub fn flatten_acoustic(matrix: &Array2<f64>, summary: Summary, prefix: &str) -> Result<FeatureVector> {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return Err(FpcgError::EmptyMatrix);
    }
    let values = match summary {
        Summary::PerBinMean => matrix.mean_axis(ndarray::Axis(0)).expect("non-empty").to_vec(),
    };
    let schema = (0..values.len()).map(|i| format!("{prefix}.{i:02}")).collect();
    FeatureVector::new(values, schema)
}
