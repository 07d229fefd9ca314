//! Beam-search text decoding guided by correlation between reconstructed
//! embeddings and candidate word embeddings.

mod beam;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{contextual_embed, word_slot, EmbeddingTable, WordAnnotation};
use crate::sigproc::EmbeddingSeries;

pub use beam::{
    beam_step, decode_trial, generate_null_sequences, parse_decoded_tsv, run_beam, write_decoded_tsv,
    Beam, CorrelationScorer, Decoded, Hypothesis, NullScorer, Proposer, StepScorer, MAX_CONTEXT,
};

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("distribution sums to {0}, not 1")]
    Unnormalized(f64),
    #[error("window [{t_on}, {t_off}) s holds no sample at {rate} Hz")]
    EmptyWindow { t_on: f64, t_off: f64, rate: f64 },
    #[error("no word timings to decode")]
    EmptyTimings,
    #[error("config: {0}")]
    Config(String),
    #[error("embedding dimension {found} does not match reconstruction dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub beam: usize,
    pub top_p: f64,
    pub top_r: f64,
    pub max_continuations: usize,
    pub horizon_s: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            beam: 200,
            top_p: 0.9,
            top_r: 0.1,
            max_continuations: 10,
            horizon_s: 8.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam < 1 || self.max_continuations < 1 {
            return Err(DecodeError::Config("beam and max_continuations must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) || !(self.top_r > 0.0 && self.top_r <= 1.0) {
            return Err(DecodeError::Config(format!(
                "top_p {} and top_r {} must lie in (0, 1]",
                self.top_p, self.top_r
            )));
        }
        if !(self.horizon_s > 0.0) {
            return Err(DecodeError::Config("horizon_s must be positive".into()));
        }
        Ok(())
    }
}

/// Words in the smallest probability-sorted prefix reaching mass `p`, kept
/// only if within factor `r` of the most likely word. Sorted by descending
/// probability, ties by ascending id.
pub fn nucleus_filter(dist: &[f64], p: f64, r: f64) -> Result<Vec<u32>, DecodeError> {
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-4 {
        return Err(DecodeError::Unnormalized(total));
    }
    let mut order: Vec<u32> = (0..dist.len() as u32).collect();
    order.sort_by(|&a, &b| dist[b as usize].total_cmp(&dist[a as usize]).then(a.cmp(&b)));
    let max = dist[order[0] as usize];
    let mut mass = 0.0;
    let mut out = Vec::new();
    for &w in &order {
        if mass >= p {
            break;
        }
        mass += dist[w as usize];
        if dist[w as usize] >= r * max {
            out.push(w);
        }
    }
    Ok(out)
}

/// Mean of the series over the samples of `[t_on, t_off)`.
pub fn window_average(zhat: &EmbeddingSeries, t_on: f64, t_off: f64) -> Result<Vec<f64>, DecodeError> {
    let rate = zhat.sample_rate();
    let (a, b) = word_slot(&WordAnnotation::new("", t_on, t_off), rate);
    let b = b.min(zhat.samples());
    if b <= a {
        return Err(DecodeError::EmptyWindow { t_on, t_off, rate });
    }
    Ok((0..zhat.channels())
        .map(|c| zhat.channel(c)[a..b].iter().map(|&v| v as f64).sum::<f64>() / (b - a) as f64)
        .collect())
}

/// Maps a word in context to a vector in reconstruction space.
pub trait Embedder {
    fn dim(&self) -> usize;
    /// Number of words (context plus candidate) the embedding looks at.
    fn context_len(&self) -> usize;
    /// Embedding of `word` following `context` (most recent last). `None`
    /// when the vector is zero.
    fn embed(&self, context: &[u32], word: u32) -> Option<Vec<f64>>;
}

/// Per-dimension affine map from embedding space into the standardized
/// target space the reconstruction lives in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetTransform {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl TargetTransform {
    /// Averages per-trial standardization statistics.
    pub fn average(stats: &[(Vec<f64>, Vec<f64>)]) -> Option<Self> {
        let first = stats.first()?;
        let d = first.0.len();
        let n = stats.len() as f64;
        let mut mean = vec![0.0; d];
        let mut sd = vec![0.0; d];
        for (m, s) in stats {
            for k in 0..d {
                mean[k] += m[k] / n;
                sd[k] += s[k] / n;
            }
        }
        Some(TargetTransform { mean, sd })
    }

    pub fn apply(&self, v: &mut [f64]) {
        for (k, x) in v.iter_mut().enumerate() {
            *x = if self.sd[k] > 0.0 { (*x - self.mean[k]) / self.sd[k] } else { 0.0 };
        }
    }
}

/// Decayed contextual average over the static table, optionally mapped
/// into target space.
pub struct BuiltinEmbedder {
    table: EmbeddingTable,
    context_len: usize,
    decay: f64,
    transform: Option<TargetTransform>,
}

impl BuiltinEmbedder {
    pub fn new(table: EmbeddingTable, context_len: usize, decay: f64, transform: Option<TargetTransform>) -> Self {
        BuiltinEmbedder {
            table,
            context_len: context_len.max(1),
            decay,
            transform,
        }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }
}

impl Embedder for BuiltinEmbedder {
    fn dim(&self) -> usize {
        self.table.dim()
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn embed(&self, context: &[u32], word: u32) -> Option<Vec<f64>> {
        let keep = self.context_len - 1;
        let mut ids: Vec<u32> = context[context.len().saturating_sub(keep)..].to_vec();
        ids.push(word);
        let v = contextual_embed(&self.table, &ids, self.context_len, self.decay)?;
        let mut v: Vec<f64> = v.into_iter().map(f64::from).collect();
        if let Some(t) = &self.transform {
            t.apply(&mut v);
        }
        Some(v)
    }
}

/// Pearson correlation of `zhat_word` with each candidate's embedding in
/// its context.
pub fn score_continuations<E: Embedder>(
    zhat_word: &[f64],
    candidates: &[u32],
    contexts: &[&[u32]],
    embedder: &E,
) -> Vec<f64> {
    candidates
        .iter()
        .zip(contexts)
        .map(|(&w, ctx)| match embedder.embed(ctx, w) {
            Some(e) => crate::numcore::pearson(zhat_word, &e),
            None => 0.0,
        })
        .collect()
}
