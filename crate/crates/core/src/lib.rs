pub mod classifiers;
pub mod container;
pub mod denoise;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod pipeline;
pub mod signal_io;
pub mod synth;
pub mod transforms;

pub use error::{FpcgError, Result};
