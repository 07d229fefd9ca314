//! Text side: token normalization, vocabulary, n-gram language model,
//! word-embedding providers and rasterization onto the neural time grid.

mod embed;
mod ngram;
mod raster;
mod text;

pub use embed::{
    build_static_embeddings, contextual_embed, contextual_vectors, embeddings_to_nts, export_embeddings,
    import_embeddings, EmbeddingTable, StaticConfig, DEFAULT_CONTEXT_LEN, DEFAULT_DECAY,
};
pub use ngram::{truncate_history, NgramLm};
pub use raster::{rasterize, rasterize_raw, word_slot, Rasterized, RASTER_LOWPASS_HZ};
pub use text::{
    normalize_token, parse_annotations_tsv, read_annotations, validate_annotations,
    write_annotations_tsv, Vocabulary, WordAnnotation, UNK, UNK_ID,
};

use thiserror::Error;

use crate::sigproc::SigError;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("annotation: {0}")]
    Annotation(String),
    #[error("config: {0}")]
    Config(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("format: {0}")]
    Format(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding count mismatch: expected {expected} word vectors, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Signal(#[from] SigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
