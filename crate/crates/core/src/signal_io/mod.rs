//! Recording ingestion: WAV I/O, resampling, beat-aware segmentation,
//! manifest loading and training-set augmentation.

mod augment;
mod manifest;
mod resample;
mod segment;
mod wav;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FpcgError, Result};

pub use augment::{augment, Augmentation};
pub use manifest::{balanced_sample, load_manifest, write_manifest, Manifest};
pub use resample::{resample, resample_by_ratio};
pub use segment::{find_peaks, moving_rms, segment_recording, SegmentConfig};
pub use wav::{load_wav, save_wav};

/// Mono sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    /// Builds a waveform, rejecting a zero rate and non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(FpcgError::InvalidRate(0));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(FpcgError::InvalidConfig("waveform contains non-finite samples".into()));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Slice by sample index range, keeping the rate.
    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        Waveform { samples: self.samples[start..end].to_vec(), sample_rate_hz: self.sample_rate_hz }
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            Err(FpcgError::EmptyInput)
        } else {
            Ok(())
        }
    }
}

/// Fetal gender label. Class index 0 is `Male`, 1 is `Female`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn index(self) -> usize {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }

    pub fn from_index(i: usize) -> Gender {
        if i == 0 {
            Gender::Male
        } else {
            Gender::Female
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Ok(Gender::Male),
            "F" | "FEMALE" => Ok(Gender::Female),
            other => Err(other.to_string()),
        }
    }
}

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub gender: Gender,
    pub file_path: String,
    pub duration_s: f64,
}

/// A chunk of a recording, at most `max_len_s` long.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub waveform: Waveform,
    pub subject_id: String,
    pub gender: Gender,
    pub start_s: f64,
    pub end_s: f64,
}

/// A labeled item tied to the subject it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<T> {
    pub item: T,
    pub gender: Gender,
    pub subject_id: String,
}

/// Collection of labeled items; `subject_id` drives grouped splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub samples: Vec<Labeled<T>>,
}

impl<T> Default for LabeledDataset<T> {
    fn default() -> Self {
        Self { samples: Vec::new() }
    }
}

impl<T> LabeledDataset<T> {
    pub fn new(samples: Vec<Labeled<T>>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.subject_id.clone()) {
                out.push(s.subject_id.clone());
            }
        }
        out
    }

    /// Gender of each subject (first occurrence wins).
    pub fn subject_genders(&self) -> std::collections::BTreeMap<String, Gender> {
        let mut map = std::collections::BTreeMap::new();
        for s in &self.samples {
            map.entry(s.subject_id.clone()).or_insert(s.gender);
        }
        map
    }

    pub fn labels(&self) -> Vec<Gender> {
        self.samples.iter().map(|s| s.gender).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset<T>
    where
        T: Clone,
    {
        LabeledDataset { samples: indices.iter().map(|&i| self.samples[i].clone()).collect() }
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> LabeledDataset<U> {
        LabeledDataset {
            samples: self
                .samples
                .iter()
                .map(|s| Labeled { item: f(&s.item), gender: s.gender, subject_id: s.subject_id.clone() })
                .collect(),
        }
    }
}

impl From<Vec<Segment>> for LabeledDataset<Waveform> {
    fn from(segments: Vec<Segment>) -> Self {
        LabeledDataset {
            samples: segments.into_iter().map(|s| Labeled { item: s.waveform, gender: s.gender, subject_id: s.subject_id }).collect(),
        }
    }
}
