//! Synthetic heartbeat and artifact generators, and labelled two-class corpora.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FpcgError, Result};
use crate::signal_io::{save_wav, write_manifest, Gender, Labeled, LabeledDataset, SubjectRecord, Waveform};
use crate::transforms::fft::{dft_exact, ifft_in_place};

/// One heartbeat train: S1 and S2 Gaussian-windowed tone bursts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeatSpec {
    pub fhr_bpm: f64,
    pub s1_freq_hz: f64,
    pub s2_freq_hz: f64,
    /// Delay from S1 to S2.
    pub s1_s2_gap_s: f64,
    pub amplitude: f64,
    /// Relative standard deviation of the inter-beat interval.
    pub jitter: f64,
    /// Gaussian envelope standard deviation of each burst.
    pub burst_sigma_s: f64,
    pub s2_rel_amplitude: f64,
}

impl Default for BeatSpec {
    fn default() -> Self {
        Self {
            fhr_bpm: 140.0,
            s1_freq_hz: 60.0,
            s2_freq_hz: 90.0,
            s1_s2_gap_s: 0.17,
            amplitude: 0.8,
            jitter: 0.02,
            burst_sigma_s: 0.012,
            s2_rel_amplitude: 0.6,
        }
    }
}

impl BeatSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq = sample_rate as f64 / 2.0;
        let bad = |m: String| Err(FpcgError::InvalidSpec(m));
        if !(60.0..=240.0).contains(&self.fhr_bpm) {
            return bad(format!("fhr_bpm {} outside [60, 240]", self.fhr_bpm));
        }
        if !(self.s1_freq_hz > 0.0 && self.s1_freq_hz < nyq && self.s2_freq_hz > 0.0 && self.s2_freq_hz < nyq) {
            return bad(format!("S1/S2 frequencies must lie in (0, {nyq}) Hz"));
        }
        if !(self.jitter >= 0.0 && self.burst_sigma_s > 0.0 && self.s1_s2_gap_s >= 0.0) {
            return bad("jitter, gap and burst width must be non-negative (width positive)".into());
        }
        if !(self.amplitude.abs() <= 1.0 && (0.0..=1.0).contains(&self.s2_rel_amplitude)) {
            return bad("amplitude must lie in [-1, 1] and s2_rel_amplitude in [0, 1]".into());
        }
        Ok(())
    }
}

fn n_samples(duration_s: f64, sample_rate: u32) -> Result<usize> {
    if sample_rate == 0 {
        return Err(FpcgError::InvalidSpec("sample rate must be positive".into()));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(FpcgError::InvalidSpec(format!("duration {duration_s} must be positive")));
    }
    Ok((duration_s * sample_rate as f64).round() as usize)
}

fn add_burst(x: &mut [f64], sr: f64, centre_s: f64, sigma_s: f64, freq: f64, amp: f64) {
    let lo = ((centre_s - 4.0 * sigma_s) * sr).floor().max(0.0) as usize;
    let hi = (((centre_s + 4.0 * sigma_s) * sr).ceil().max(0.0) as usize).min(x.len());
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let tau = i as f64 / sr - centre_s;
        *v += amp * (-0.5 * (tau / sigma_s).powi(2)).exp() * (2.0 * PI * freq * tau).cos();
    }
}

/// Beat onsets over `duration_s`, starting at a random phase.
pub fn beat_times(spec: &BeatSpec, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let period = 60.0 / spec.fhr_bpm;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut t = rng.random_range(0.0..period);
    let mut out = Vec::new();
    while t < duration_s {
        out.push(t);
        let step = period * (1.0 + spec.jitter * normal.sample(rng));
        t += step.max(0.5 * period);
    }
    out
}

pub fn gen_beats(spec: &BeatSpec, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    spec.validate(sample_rate)?;
    let n = n_samples(duration_s, sample_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let mut x = vec![0.0; n];
    for t in beat_times(spec, duration_s, &mut rng) {
        add_burst(&mut x, sr, t, spec.burst_sigma_s, spec.s1_freq_hz, spec.amplitude);
        add_burst(&mut x, sr, t + spec.s1_s2_gap_s, spec.burst_sigma_s, spec.s2_freq_hz, spec.amplitude * spec.s2_rel_amplitude);
    }
    x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Waveform::new(x, sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    /// White noise.
    Hiss,
    /// Noise band-limited below 40 Hz.
    Friction,
    /// Sparse high-amplitude transients.
    Thump,
    /// 50 Hz mains tone with harmonics.
    Hum,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [ArtifactKind::Hiss, ArtifactKind::Friction, ArtifactKind::Thump, ArtifactKind::Hum];
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArtifactKind::Hiss => "hiss",
            ArtifactKind::Friction => "friction",
            ArtifactKind::Thump => "thump",
            ArtifactKind::Hum => "hum",
        })
    }
}

impl FromStr for ArtifactKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown artifact {s:?} (expected hiss, friction, thump or hum)"))
    }
}

fn peak_normalize(mut x: Vec<f64>) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    x
}

/// Artifact of the given kind, peak-normalised to 1.
pub fn gen_artifact(kind: ArtifactKind, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let n = n_samples(duration_s, sample_rate)?;
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let x = match kind {
        ArtifactKind::Hiss => (0..n).map(|_| normal.sample(&mut rng)).collect(),
        ArtifactKind::Friction => {
            let white: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let mut spec = dft_exact(&white);
            let len = spec.len();
            for (k, c) in spec.iter_mut().enumerate() {
                let f = k.min(len - k) as f64 * sr / len as f64;
                if f >= 40.0 {
                    *c = num_complex::Complex64::new(0.0, 0.0);
                }
            }
            ifft_in_place(&mut spec);
            spec.into_iter().map(|c| c.re).collect()
        }
        ArtifactKind::Thump => {
            let mut x = vec![0.0; n];
            // about one transient per second
            let mut t = rng.random_range(0.0..1.0);
            while t < duration_s {
                let amp = rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let start = (t * sr) as usize;
                for (i, v) in x.iter_mut().enumerate().skip(start).take((0.1 * sr) as usize) {
                    let tau = (i - start) as f64 / sr;
                    *v += amp * (-tau / 0.02).exp() * (2.0 * PI * 25.0 * tau).sin();
                }
                t += rng.random_range(0.4..1.6);
            }
            x
        }
        ArtifactKind::Hum => {
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    [(50.0, 1.0), (100.0, 0.5), (150.0, 0.25)]
                        .iter()
                        .filter(|(f, _)| *f < sr / 2.0)
                        .map(|(f, a)| a * (2.0 * PI * f * t + phase).sin())
                        .sum()
                })
                .collect()
        }
    };
    Waveform::new(peak_normalize(x), sample_rate)
}

/// Per-class differences between the two synthetic genders. Male takes
/// the negative half of each delta, Female the positive half.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassDeltaSpec {
    pub fhr_bpm: f64,
    pub s1_freq_hz: f64,
}

impl ClassDeltaSpec {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Everything that shapes a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_subjects_per_class: usize,
    pub segs_per_subject: usize,
    pub class_delta: ClassDeltaSpec,
    pub base: BeatSpec,
    pub segment_s: f64,
    pub sample_rate_hz: u32,
    /// Standard deviation of each subject's baseline FHR offset.
    pub subject_fhr_std_bpm: f64,
    /// Standard deviation of each subject's S1/S2 frequency offset.
    pub subject_freq_std_hz: f64,
    /// Per-subject gain is log-uniform in this range.
    pub gain_range: (f64, f64),
    /// Standard deviation of the per-segment FHR drift.
    pub segment_fhr_std_bpm: f64,
    /// SNR range (dB) of the noise added to each segment; `None` keeps segments clean.
    pub noise_snr_db: Option<(f64, f64)>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_subjects_per_class: 10,
            segs_per_subject: 5,
            class_delta: ClassDeltaSpec::default(),
            base: BeatSpec::default(),
            segment_s: 4.0,
            sample_rate_hz: 8000,
            subject_fhr_std_bpm: 3.0,
            subject_freq_std_hz: 4.0,
            gain_range: (0.5, 2.0),
            segment_fhr_std_bpm: 1.5,
            noise_snr_db: Some((10.0, 20.0)),
        }
    }
}

/// A synthetic segment with its noise-free reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSegment {
    pub clean: Waveform,
    pub noisy: Waveform,
}

/// Recording noise: hiss plus half of one other artifact kind drawn at random.
pub fn gen_noise(duration_s: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let hiss = gen_artifact(ArtifactKind::Hiss, duration_s, sample_rate, rng.random())?;
    let other = ArtifactKind::ALL[rng.random_range(1..4)];
    let art = gen_artifact(other, duration_s, sample_rate, rng.random())?;
    Ok(hiss.samples.iter().zip(&art.samples).map(|(a, b)| a + 0.5 * b).collect())
}

/// Scales `noise` so that `signal` has the given SNR over it.
pub fn mix_at_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Vec<f64> {
    let ps: f64 = signal.iter().map(|v| v * v).sum();
    let pn: f64 = noise.iter().map(|v| v * v).sum();
    let g = if pn > 0.0 && ps > 0.0 { (ps / pn / 10f64.powf(snr_db / 10.0)).sqrt() } else { 0.0 };
    signal.iter().zip(noise).map(|(s, n)| s + g * n).collect()
}

/// Clean and noisy segments for `spec`, subjects alternating M/F.
pub fn gen_dataset_pairs(spec: &DatasetSpec, seed: u64) -> Result<LabeledDataset<SynthSegment>> {
    if spec.n_subjects_per_class == 0 || spec.segs_per_subject == 0 {
        return Err(FpcgError::InvalidSpec("subject and segment counts must be >= 1".into()));
    }
    let (g_lo, g_hi) = spec.gain_range;
    if !(g_lo > 0.0 && g_lo <= g_hi) {
        return Err(FpcgError::InvalidSpec(format!("gain range ({g_lo}, {g_hi}) invalid")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut samples = Vec::new();
    for s in 0..2 * spec.n_subjects_per_class {
        let gender = if s % 2 == 0 { Gender::Male } else { Gender::Female };
        let sign = if gender == Gender::Male { -0.5 } else { 0.5 };
        let subject_id = format!("S{s:03}");
        let gain = (g_lo.ln() + rng.random_range(0.0..=1.0) * (g_hi.ln() - g_lo.ln())).exp();
        let fhr = spec.base.fhr_bpm + sign * spec.class_delta.fhr_bpm + spec.subject_fhr_std_bpm * normal.sample(&mut rng);
        let df = sign * spec.class_delta.s1_freq_hz + spec.subject_freq_std_hz * normal.sample(&mut rng);
        for _ in 0..spec.segs_per_subject {
            let beat = BeatSpec {
                fhr_bpm: (fhr + spec.segment_fhr_std_bpm * normal.sample(&mut rng)).clamp(60.0, 240.0),
                s1_freq_hz: spec.base.s1_freq_hz + df,
                s2_freq_hz: spec.base.s2_freq_hz + df,
                amplitude: (spec.base.amplitude * gain).min(1.0),
                ..spec.base.clone()
            };
            let clean = gen_beats(&beat, spec.segment_s, spec.sample_rate_hz, rng.random())?;
            let noisy = match spec.noise_snr_db {
                None => clean.clone(),
                Some((lo, hi)) => {
                    let noise = gen_noise(spec.segment_s, spec.sample_rate_hz, &mut rng)?;
                    let snr = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    let mixed = mix_at_snr(&clean.samples, &noise, snr);
                    let peak = mixed.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
                    Waveform::new(mixed.iter().map(|v| v * scale).collect(), spec.sample_rate_hz)?
                }
            };
            samples.push(Labeled { item: SynthSegment { clean, noisy }, gender, subject_id: subject_id.clone() });
        }
    }
    Ok(LabeledDataset::new(samples))
}

/// Noisy labelled segments with the default nuisance settings.
pub fn gen_dataset(
    n_subjects_per_class: usize,
    segs_per_subject: usize,
    class_delta: ClassDeltaSpec,
    seed: u64,
) -> Result<LabeledDataset<Waveform>> {
    let spec = DatasetSpec { n_subjects_per_class, segs_per_subject, class_delta, ..DatasetSpec::default() };
    Ok(gen_dataset_pairs(&spec, seed)?.map(|s| s.noisy.clone()))
}

/// Writes one WAV per segment plus `manifest.csv`; returns the manifest path.
pub fn materialize(data: &LabeledDataset<Waveform>, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("audio"))?;
    let mut counts = std::collections::HashMap::new();
    let mut records = Vec::with_capacity(data.len());
    for s in &data.samples {
        let k = counts.entry(s.subject_id.clone()).or_insert(0usize);
        let rel = format!("audio/{}_{:03}.wav", s.subject_id, k);
        *k += 1;
        save_wav(&s.item, dir.join(&rel))?;
        records.push(SubjectRecord { subject_id: s.subject_id.clone(), gender: s.gender, file_path: rel, duration_s: s.item.duration_s() });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

/// Spectral flatness (geometric over arithmetic mean of the power spectrum).
pub fn spectral_flatness(x: &[f64]) -> f64 {
    let spec = dft_exact(x);
    let p: Vec<f64> = spec[1..spec.len() / 2].iter().map(|c| c.norm_sqr().max(1e-300)).collect();
    let geo = (p.iter().map(|v| v.ln()).sum::<f64>() / p.len() as f64).exp();
    geo / (p.iter().sum::<f64>() / p.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{find_peaks, moving_rms};

    #[test]
    fn beat_count_matches_rate() {
        let spec = BeatSpec { fhr_bpm: 120.0, ..BeatSpec::default() };
        let w = gen_beats(&spec, 10.0, 4000, 5).unwrap();
        let env = moving_rms(&w.samples, 80);
        let top = env.iter().fold(0.0f64, |a, &b| a.max(b));
        let peaks = find_peaks(&env, 800, Some(0.8 * top));
        assert!((19..=21).contains(&peaks.len()), "{}", peaks.len());
    }

    #[test]
    fn determinism_and_zero_amplitude() {
        let spec = BeatSpec::default();
        assert_eq!(gen_beats(&spec, 2.0, 8000, 1).unwrap(), gen_beats(&spec, 2.0, 8000, 1).unwrap());
        let silent = gen_beats(&BeatSpec { amplitude: 0.0, ..spec }, 2.0, 8000, 1).unwrap();
        assert!(silent.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_beats(&BeatSpec { fhr_bpm: 300.0, ..BeatSpec::default() }, 1.0, 8000, 0).is_err());
        assert!(gen_beats(&BeatSpec { s1_freq_hz: 5000.0, ..BeatSpec::default() }, 1.0, 8000, 0).is_err());
        assert!(gen_artifact(ArtifactKind::Hiss, 0.0, 8000, 0).is_err());
    }

    #[test]
    fn artifacts() {
        let hum = gen_artifact(ArtifactKind::Hum, 2.0, 8000, 1).unwrap();
        assert_eq!(hum.len(), 16000);
        let spec = dft_exact(&hum.samples);
        let k = (1..8000).max_by(|&a, &b| spec[a].norm().total_cmp(&spec[b].norm())).unwrap();
        assert_eq!(k as f64 * 8000.0 / 16000.0, 50.0);
        let hiss = gen_artifact(ArtifactKind::Hiss, 2.0, 8000, 1).unwrap();
        // flatness of the raw periodogram of white noise sits near exp(-gamma)
        assert!(spectral_flatness(&hiss.samples) > 0.5);
        let fr = gen_artifact(ArtifactKind::Friction, 2.0, 8000, 1).unwrap();
        let s = dft_exact(&fr.samples);
        let above: f64 = (80..8000).map(|k| s[k].norm_sqr()).sum();
        assert!(above < 1e-12);
        for k in ArtifactKind::ALL {
            let w = gen_artifact(k, 1.5, 8000, 2).unwrap();
            assert_eq!(w.len(), 12000);
            assert!(w.samples.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn dataset_shape() {
        let d = gen_dataset(10, 5, ClassDeltaSpec { fhr_bpm: 20.0, s1_freq_hz: 0.0 }, 3).unwrap();
        assert_eq!(d.len(), 100);
        assert_eq!(d.labels().iter().filter(|g| **g == Gender::Male).count(), 50);
        assert_eq!(d.subjects().len(), 20);
        assert!(d.samples.iter().all(|s| s.item.samples.iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn materialized_corpus_loads() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_dataset(1, 2, ClassDeltaSpec::none(), 4).unwrap();
        let m = materialize(&d, dir.path()).unwrap();
        let man = crate::signal_io::load_manifest(&m).unwrap();
        assert_eq!(man.len(), 4);
    }
}
