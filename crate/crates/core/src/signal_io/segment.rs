use serde::{Deserialize, Serialize};

use super::{Segment, SubjectRecord, Waveform};
use crate::error::{FpcgError, Result};
use crate::transforms::fft;

/// Parameters of beat-aware chunking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub max_len_s: f64,
    /// Moving-RMS envelope window.
    pub envelope_window_s: f64,
    /// Minimum spacing between detected beat peaks.
    pub min_peak_distance_s: f64,
    /// How far before each nominal boundary to look for a silent cut point.
    pub search_back_s: f64,
    /// Envelope level, relative to its maximum, that counts as silence.
    pub silence_fraction: f64,
    pub min_recording_s: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            max_len_s: 7.0,
            envelope_window_s: 0.05,
            min_peak_distance_s: 0.25,
            search_back_s: 1.5,
            silence_fraction: 0.1,
            min_recording_s: 1.0,
        }
    }
}

/// Centered moving RMS with a window of `window` samples (truncated at the edges).
pub fn moving_rms(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let window = window.max(1);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in x {
        acc += v * v;
        prefix.push(acc);
    }
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(n);
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).max(0.0).sqrt()
        })
        .collect()
}

/// Local maxima at least `min_distance` samples apart, tallest first when
/// competing, returned in index order.
pub fn find_peaks(x: &[f64], min_distance: usize, min_height: Option<f64>) -> Vec<usize> {
    let n = x.len();
    let mut candidates = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                let mid = (i + j) / 2;
                if min_height.is_none_or(|h| x[mid] >= h) {
                    candidates.push(mid);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Dominant envelope periodicity in seconds, searched between the minimum
/// peak distance and 2 s. `None` when the envelope is flat.
fn beat_period_s(env: &[f64], sr: f64, cfg: &SegmentConfig) -> Option<f64> {
    let step = ((sr / 1000.0).floor() as usize).max(1);
    let dec: Vec<f64> = env.iter().step_by(step).copied().collect();
    let rate = sr / step as f64;
    let mean = dec.iter().sum::<f64>() / dec.len() as f64;
    let centered: Vec<f64> = dec.iter().map(|v| v - mean).collect();
    let ac = fft::autocorrelation(&centered);
    if ac.is_empty() || ac[0] <= 1e-18 {
        return None;
    }
    let min_lag = (cfg.min_peak_distance_s * rate).round() as usize;
    let max_lag = ((2.0 * rate).round() as usize).min(ac.len().saturating_sub(1));
    if min_lag >= max_lag {
        return None;
    }
    let peaks = find_peaks(&ac[..=max_lag], 1, Some(0.0));
    peaks.into_iter().filter(|&l| l >= min_lag).max_by(|&a, &b| ac[a].total_cmp(&ac[b]).then(b.cmp(&a))).map(|lag| lag as f64 / rate)
}

/// Splits a recording into chunks of at most `cfg.max_len_s`, cutting at
/// silent envelope minima so that no beat is split.
pub fn segment_recording(w: &Waveform, subject: &SubjectRecord, cfg: &SegmentConfig) -> Result<Vec<Segment>> {
    let sr = w.sample_rate_hz as f64;
    let duration = w.duration_s();
    if duration < cfg.min_recording_s {
        return Err(FpcgError::TooShort { duration_s: duration, min_s: cfg.min_recording_s });
    }
    if cfg.max_len_s <= cfg.search_back_s || cfg.max_len_s <= 0.0 {
        return Err(FpcgError::InvalidConfig("max_len_s must exceed search_back_s".into()));
    }
    let make = |start: usize, end: usize| Segment {
        waveform: w.slice(start, end),
        subject_id: subject.subject_id.clone(),
        gender: subject.gender,
        start_s: start as f64 / sr,
        end_s: end as f64 / sr,
    };
    let n = w.len();
    let max_len = (cfg.max_len_s * sr).floor() as usize;
    if n <= max_len {
        return Ok(vec![make(0, n)]);
    }

    let env = moving_rms(&w.samples, ((cfg.envelope_window_s * sr).round() as usize).max(1));
    let env_max = env.iter().copied().fold(0.0, f64::max);
    let silence = cfg.silence_fraction * env_max;
    let search = (cfg.search_back_s * sr).round() as usize;

    let mut segments = Vec::new();
    let mut start = 0;
    while n - start > max_len {
        let boundary = start + max_len;
        let lo = boundary - search;
        let mut best: Option<usize> = None;
        for i in lo..boundary {
            if env[i] < silence && best.is_none_or(|b| env[i] <= env[b]) {
                best = Some(i);
            }
        }
        let cut = best.unwrap_or(boundary);
        segments.push(make(start, cut));
        start = cut;
    }

    let remainder_s = (n - start) as f64 / sr;
    let beat = beat_period_s(&env, sr, cfg).unwrap_or(cfg.min_peak_distance_s);
    if remainder_s >= beat {
        segments.push(make(start, n));
    }
    Ok(segments)
}
