use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum FpcgError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio file has no frames")]
    EmptyAudio,
    #[error("invalid sample rate: {0}")]
    InvalidRate(i64),
    #[error("recording too short: {duration_s:.3} s (need at least {min_s} s)")]
    TooShort { duration_s: f64, min_s: f64 },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("unknown gender token {token:?} at line {line}")]
    UnknownGender { line: u64, token: String },
    #[error("missing file referenced at line {line}: {path}")]
    MissingFile { line: u64, path: PathBuf },

    #[error("invalid STFT window: {0}")]
    InvalidWindow(String),
    #[error("grid cannot be inverted: {0}")]
    NonInvertibleConfig(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("too many wavelet levels: requested {requested}, at most {max} for length {len}")]
    TooManyLevels { requested: usize, max: usize, len: usize },
    #[error("unknown wavelet {0:?}")]
    UnknownWavelet(String),
    #[error("inconsistent wavelet coefficients: {0}")]
    InconsistentCoefficients(String),

    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("zero variance input")]
    ZeroVariance,
    #[error("spectrum has zero power")]
    ZeroSpectrum,
    #[error("invalid frame length {0}")]
    InvalidFrame(usize),
    #[error("empty matrix")]
    EmptyMatrix,

    #[error("training labels contain a single class")]
    SingleClass,
    #[error("no usable features: {0}")]
    DegenerateFeatures(String),
    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("insufficient subjects: {0}")]
    InsufficientSubjects(String),
    #[error("too few subjects: {0}")]
    TooFewSubjects(String),
    #[error("evaluation set is empty")]
    EmptyEvaluation,

    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("model container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FpcgError>;
