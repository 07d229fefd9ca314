//! Segment retrieval metrics and window-level sequence similarity with
//! permutation significance.

mod report;
mod sequence;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{center_unit, Tensor};
use crate::sigproc::{segment, EmbeddingSeries, SigError};

pub use report::{render_score_svg, render_sequence_text, render_retrieval_text};
pub use sequence::{
    builtin_scorer, evaluate_sequences, export_window_scores, import_window_scores, permutation_pvalue,
    window_similarity, BuiltinScorer, PValueMode, SequenceReport, TrialInput, TrialReport, WindowScorer,
    WindowScores, DEFAULT_STRIDE_S, DEFAULT_WINDOW_S, MIN_NULLS, SIGNIFICANCE_LEVEL,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("retrieval needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("trial {0} has no windows to score")]
    EmptyTrial(String),
    #[error("empty null set for {0}")]
    EmptyNulls(String),
    #[error("missing external scores: {}", .0.join(", "))]
    MissingScores(Vec<String>),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Signal(#[from] SigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized rank accuracy: 1 at rank 1, 0 at rank `m`, affine between.
pub fn rank_accuracy(rank: usize, m: usize) -> f64 {
    1.0 - (rank as f64 - 1.0) / (m as f64 - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub rank: usize,
    pub candidates: usize,
    pub top10: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub results: Vec<RetrievalResult>,
    pub top10_accuracy: f64,
    pub rank_accuracy: f64,
}

fn flat_unit(x: &Tensor<f32>) -> Option<Vec<f64>> {
    let v: Vec<f64> = x.data().iter().map(|&a| a as f64).collect();
    center_unit(&v)
}

/// Retrieves each reconstruction's own target among all `truth` segments
/// by Pearson correlation over the flattened segment. Ties count against
/// the target, so a constant reconstruction ranks last.
pub fn segment_retrieval(recon: &[Tensor<f32>], truth: &[Tensor<f32>]) -> Result<RetrievalSummary, EvalError> {
    let m = truth.len();
    if m < 2 {
        return Err(EvalError::TooFewCandidates(m));
    }
    if recon.len() != m {
        return Err(EvalError::Shape(format!("{} reconstructions for {m} targets", recon.len())));
    }
    let shape = truth[0].shape().to_vec();
    if let Some(bad) = recon.iter().chain(truth).find(|s| s.shape() != shape.as_slice()) {
        return Err(EvalError::Shape(format!("segment {:?} differs from {:?}", bad.shape(), shape)));
    }
    let len = truth[0].len();
    let pack = |set: &[Tensor<f32>]| {
        let mut a = Mat::<f64>::zeros(set.len(), len);
        for (i, s) in set.iter().enumerate() {
            if let Some(u) = flat_unit(s) {
                for (j, v) in u.into_iter().enumerate() {
                    a[(i, j)] = v;
                }
            }
        }
        a
    };
    let (r, t) = (pack(recon), pack(truth));
    let mut sim = Mat::<f64>::zeros(m, m);
    matmul(sim.as_mut(), Accum::Replace, r.as_ref(), t.transpose(), 1.0, Par::Seq);
    let results: Vec<RetrievalResult> = (0..m)
        .map(|i| {
            let target = sim[(i, i)];
            let rank = 1 + (0..m).filter(|&j| j != i && sim[(i, j)] >= target).count();
            RetrievalResult {
                rank,
                candidates: m,
                top10: rank <= 10,
            }
        })
        .collect();
    let n = results.len() as f64;
    Ok(RetrievalSummary {
        top10_accuracy: results.iter().filter(|r| r.top10).count() as f64 / n,
        rank_accuracy: results.iter().map(|r| rank_accuracy(r.rank, r.candidates)).sum::<f64>() / n,
        results,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationResult {
    pub duration_s: f64,
    pub segments: usize,
    pub chance_top10: f64,
    pub top10_accuracy: f64,
    pub rank_accuracy: f64,
}

/// Cuts every trial into non-overlapping windows of each duration and runs
/// retrieval against the pooled true windows.
pub fn retrieval_by_duration(
    recon: &[EmbeddingSeries],
    truth: &[EmbeddingSeries],
    durations_s: &[f64],
) -> Result<Vec<DurationResult>, EvalError> {
    if recon.len() != truth.len() {
        return Err(EvalError::Shape(format!("{} reconstructed trials for {} true", recon.len(), truth.len())));
    }
    durations_s
        .iter()
        .map(|&d| {
            let mut rs = Vec::new();
            let mut ts = Vec::new();
            for (r, t) in recon.iter().zip(truth) {
                if r.samples() != t.samples() || r.channels() != t.channels() {
                    return Err(EvalError::Shape(format!(
                        "reconstruction {}×{} vs truth {}×{}",
                        r.channels(),
                        r.samples(),
                        t.channels(),
                        t.samples()
                    )));
                }
                rs.extend(segment(r, d, 0.0)?.into_iter().map(|s| s.into_tensor()));
                ts.extend(segment(t, d, 0.0)?.into_iter().map(|s| s.into_tensor()));
            }
            let s = segment_retrieval(&rs, &ts)?;
            Ok(DurationResult {
                duration_s: d,
                segments: ts.len(),
                chance_top10: (10.0 / ts.len() as f64).min(1.0),
                top10_accuracy: s.top10_accuracy,
                rank_accuracy: s.rank_accuracy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
