//! Deterministic time-series preprocessing: zero-phase FIR filtering,
//! integer decimation, standardization, stimulus alignment, segmentation,
//! and the NTS1 binary container.

mod filter;
mod pipeline;
mod series;

pub use filter::{design_fir, filtfilt, filtfilt_channel, FilterKind, FilterSpec};
pub use pipeline::{
    preprocess, resample, segment, segment_starts, shift_align, zscore_channels, PreprocessConfig,
};
pub use series::{EmbeddingSeries, NtsFile, TimeSeries};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SigError {
    #[error("invalid sample rate {0}")]
    InvalidRate(f64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("filter: {0}")]
    Filter(String),
    #[error("series too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("{0}")]
    NonInteger(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
