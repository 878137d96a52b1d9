//! Spectral and wavelet primitives.

mod chroma;
mod cqt;
pub mod fft;
mod mel;
mod stft;
pub mod wavelet;

pub use chroma::{chroma, pitch_class, ChromaConfig, PITCH_CLASSES};
pub use cqt::{cqt, CqtConfig};
pub use mel::{
    dct_ii_ortho, hz_to_mel, mel_center_frequencies, mel_filterbank, mel_spectrogram, mel_to_hz, mfcc, mfcc_from_mel_power, MelConfig,
    MfccConfig,
};
pub use stft::{hann, istft, stft, StftConfig, TimeFrequencyGrid};
pub use wavelet::{dwt, dwt_with_boundary, idwt, Boundary, WaveletDecomposition};
