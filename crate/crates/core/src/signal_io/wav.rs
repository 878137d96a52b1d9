use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{FpcgError, Result};

/// Reads a PCM WAV file, averaging channels to mono and scaling to [-1, 1].
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(FpcgError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = WavReader::open(path).map_err(|e| map_hound(e, path))?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(FpcgError::UnsupportedEncoding(format!("{:?} samples", spec.sample_format)));
    }
    if spec.bits_per_sample == 0 || spec.bits_per_sample > 32 {
        return Err(FpcgError::UnsupportedEncoding(format!("{} bits per sample", spec.bits_per_sample)));
    }
    let channels = spec.channels.max(1) as usize;
    let full_scale = (1u64 << (spec.bits_per_sample - 1)) as f64;

    let raw: Vec<i32> = reader.samples::<i32>().collect::<std::result::Result<_, _>>().map_err(|e| map_hound(e, path))?;
    if raw.len() < channels {
        return Err(FpcgError::EmptyAudio);
    }
    let samples =
        raw.chunks_exact(channels).map(|frame| frame.iter().map(|&s| s as f64 / full_scale).sum::<f64>() / channels as f64).collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV. Samples are clipped to [-1, 1].
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: w.sample_rate_hz, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut writer = WavWriter::create(path.as_ref(), spec).map_err(|e| map_hound(e, path.as_ref()))?;
    for &s in &w.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound(e, path.as_ref()))?;
    }
    writer.finalize().map_err(|e| map_hound(e, path.as_ref()))?;
    Ok(())
}

fn map_hound(e: hound::Error, path: &Path) -> FpcgError {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => FpcgError::FileNotFound(path.to_path_buf()),
        hound::Error::IoError(io) => FpcgError::Io(io),
        hound::Error::Unsupported => FpcgError::UnsupportedEncoding("unsupported WAV format".into()),
        other => FpcgError::UnsupportedEncoding(other.to_string()),
    }
}
