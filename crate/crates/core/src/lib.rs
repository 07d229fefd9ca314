//! Reconstruction of continuous word embeddings from multichannel neural
//! time series, and correlation-guided beam-search decoding of text from
//! the reconstructions.

pub mod container;
pub mod numcore;
pub mod sigproc;
pub mod corpus;
pub mod cwer;
pub mod ridge;
pub mod decoder;
pub mod eval;
pub mod synth;
