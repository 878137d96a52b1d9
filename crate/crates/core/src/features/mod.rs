//! Statistical features, the time / frequency / time-frequency blocks,
//! and summaries of the acoustic matrices.

mod blocks;
pub mod stats;
mod table;

pub use blocks::{
    acoustic_matrices, flatten_acoustic, freq_features, full_statistical_vector, tf_features, time_features, time_stats, AcousticMatrices,
    FeatureConfig, FeatureVector, Summary,
};
pub use stats::{energy, kurtosis, mean, median, rms, skewness, spectral_entropy, stat_set, variance, zcr, StatSet};
pub use table::{FeatureTable, CACHE_VERSION};
