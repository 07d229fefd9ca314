use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CorpusError, UNK_ID};
use crate::numcore::Tensor;
use crate::sigproc::NtsFile;

/// Tokens on each side counted as co-occurring.
const WINDOW: usize = 5;
const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 4;
/// Singular values below this fraction of the largest count as rank deficient.
const RANK_TOL: f64 = 1e-9;

pub const DEFAULT_CONTEXT_LEN: usize = 8;
pub const DEFAULT_DECAY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticConfig {
    pub dim: usize,
    pub seed: u64,
}

/// Static word vectors, one unit-norm row per vocabulary id (UNK is zero).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vectors: Tensor<f32>,
}

impl EmbeddingTable {
    /// `vectors` is `[V, D]`; rows must be finite and `D ≥ 2`.
    pub fn from_tensor(vectors: Tensor<f32>) -> Result<Self, CorpusError> {
        if vectors.shape().len() != 2 || vectors.cols() < 2 {
            return Err(CorpusError::Config(format!(
                "embedding table must be [V, D ≥ 2], got {:?}",
                vectors.shape()
            )));
        }
        if !vectors.is_finite() {
            return Err(CorpusError::Format("embedding table has non-finite entries".into()));
        }
        Ok(EmbeddingTable { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.rows()
    }

    pub fn vector(&self, id: u32) -> &[f32] {
        self.vectors.row(id as usize)
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.vectors
    }
}

fn ppmi(trials: &[Vec<u32>], v: usize) -> Mat<f64> {
    let mut counts = Mat::<f64>::zeros(v, v);
    for trial in trials {
        for (i, &a) in trial.iter().enumerate() {
            let hi = (i + WINDOW + 1).min(trial.len());
            for &b in &trial[i + 1..hi] {
                counts[(a as usize, b as usize)] += 1.0;
                counts[(b as usize, a as usize)] += 1.0;
            }
        }
    }
    for k in 0..v {
        counts[(UNK_ID as usize, k)] = 0.0;
        counts[(k, UNK_ID as usize)] = 0.0;
    }
    let row: Vec<f64> = (0..v).map(|i| (0..v).map(|j| counts[(i, j)]).sum()).collect();
    let total: f64 = row.iter().sum();
    Mat::from_fn(v, v, |i, j| {
        let c = counts[(i, j)];
        if c > 0.0 {
            (c * total / (row[i] * row[j])).ln().max(0.0)
        } else {
            0.0
        }
    })
}

fn orthonormal_basis(y: &Mat<f64>) -> Mat<f64> {
    y.qr().compute_thin_Q()
}

/// Top-`k` left singular vectors and values of `m`, by randomized range
/// finding with power iterations.
fn randomized_svd(m: &Mat<f64>, k: usize, seed: u64) -> (Mat<f64>, Vec<f64>) {
    let n = m.nrows();
    let l = (k + OVERSAMPLE).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Mat::<f64>::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
    let mut y = Mat::<f64>::zeros(n, l);
    matmul(y.as_mut(), Accum::Replace, m.as_ref(), omega.as_ref(), 1.0, Par::Seq);
    let mut q = orthonormal_basis(&y);
    for _ in 0..POWER_ITERS {
        let mut z = Mat::<f64>::zeros(n, q.ncols());
        matmul(z.as_mut(), Accum::Replace, m.transpose(), q.as_ref(), 1.0, Par::Seq);
        let z = orthonormal_basis(&z);
        let mut y = Mat::<f64>::zeros(n, z.ncols());
        matmul(y.as_mut(), Accum::Replace, m.as_ref(), z.as_ref(), 1.0, Par::Seq);
        q = orthonormal_basis(&y);
    }
    let mut b = Mat::<f64>::zeros(q.ncols(), n);
    matmul(b.as_mut(), Accum::Replace, q.transpose(), m.as_ref(), 1.0, Par::Seq);
    let svd = b.thin_svd().expect("SVD of a finite matrix converges");
    let mut u = Mat::<f64>::zeros(n, svd.U().ncols());
    matmul(u.as_mut(), Accum::Replace, q.as_ref(), svd.U(), 1.0, Par::Seq);
    let s: Vec<f64> = (0..svd.S().dim()).map(|i| svd.S()[i]).collect();
    (u, s)
}

/// PPMI co-occurrence (symmetric window of 5) factorized by truncated SVD.
/// Each dimension's sign makes its largest-magnitude coordinate positive;
/// every non-UNK word vector is scaled to unit norm.
pub fn build_static_embeddings(
    trials: &[Vec<u32>],
    vocab_size: usize,
    cfg: StaticConfig,
) -> Result<EmbeddingTable, CorpusError> {
    let v = vocab_size;
    if trials.iter().all(Vec::is_empty) {
        return Err(CorpusError::EmptyCorpus);
    }
    if cfg.dim < 2 || cfg.dim > v {
        return Err(CorpusError::Config(format!(
            "embedding dimension {} must lie in [2, V = {v}]",
            cfg.dim
        )));
    }
    if let Some(&bad) = trials.iter().flatten().find(|&&w| w as usize >= v) {
        return Err(CorpusError::Config(format!("token id {bad} outside vocabulary of {v}")));
    }
    let m = ppmi(trials, v);
    let (u, s) = randomized_svd(&m, cfg.dim, cfg.seed);
    let smax = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|&&x| x > RANK_TOL * smax && x > 0.0).count().min(cfg.dim);
    if rank < cfg.dim {
        log::warn!(
            "co-occurrence rank {rank} below requested dimension {}; padding with zero dimensions",
            cfg.dim
        );
    }
    let mut out = Tensor::<f64>::zeros(&[v, cfg.dim]);
    for d in 0..rank {
        let col: Vec<f64> = (0..v).map(|i| u[(i, d)]).collect();
        let pivot = col
            .iter()
            .enumerate()
            .fold(0usize, |best, (i, x)| if x.abs() > col[best].abs() { i } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign * s[d].sqrt();
        for (i, x) in col.iter().enumerate() {
            out.row_mut(i)[d] = x * scale;
        }
    }
    for i in 0..v {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if i == UNK_ID as usize || norm == 0.0 {
            row.iter_mut().for_each(|x| *x = 0.0);
        } else {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    EmbeddingTable::from_tensor(out.cast())
}

/// Decayed average `Σ_j γ^j e(w_{−j}) / Σ_j γ^j` over the last `len` ids of
/// `context` (most recent last), renormalized. Returns `None` for the
/// vector when every contributing embedding is zero.
pub fn contextual_embed(table: &EmbeddingTable, context: &[u32], len: usize, decay: f64) -> Option<Vec<f32>> {
    assert!(!context.is_empty() && len >= 1, "context must be non-empty");
    let d = table.dim();
    let mut acc = vec![0.0f64; d];
    for (j, &id) in context.iter().rev().take(len).enumerate() {
        let w = decay.powi(j as i32);
        for (a, &e) in acc.iter_mut().zip(table.vector(id)) {
            *a += w * e as f64;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(acc.iter().map(|x| (x / norm) as f32).collect())
}

/// One contextual vector per word of a trial, as `[W, D]`. Words whose
/// context embeds to zero get the zero vector.
pub fn contextual_vectors(table: &EmbeddingTable, ids: &[u32], len: usize, decay: f64) -> Tensor<f32> {
    let d = table.dim();
    let mut out = Tensor::zeros(&[ids.len(), d]);
    for i in 0..ids.len() {
        if let Some(v) = contextual_embed(table, &ids[..=i], len, decay) {
            out.row_mut(i).copy_from_slice(&v);
        }
    }
    out
}

/// `[W, D]` word vectors as an NTS1 container with channels = D,
/// samples = W and sample rate 0.
pub fn embeddings_to_nts(vectors: &Tensor<f32>) -> NtsFile {
    let (w, d) = (vectors.rows(), vectors.cols());
    NtsFile {
        sample_rate: 0.0,
        data: Tensor::from_fn(&[d, w], |k| vectors.at(k % w, k / w)),
    }
}

pub fn export_embeddings(vectors: &Tensor<f32>, path: &Path) -> Result<(), CorpusError> {
    embeddings_to_nts(vectors).write(path)?;
    Ok(())
}

/// Reads word vectors written by [`export_embeddings`] (or any NTS1 file
/// with one column per annotation) and checks them against the expected
/// dimension and word count.
pub fn import_embeddings(path: &Path, dim: usize, words: usize) -> Result<Tensor<f32>, CorpusError> {
    let nts = NtsFile::read(path)?;
    let (d, w) = (nts.data.rows(), nts.data.cols());
    if d != dim {
        return Err(CorpusError::DimensionMismatch {
            expected: dim,
            found: d,
        });
    }
    if w != words {
        return Err(CorpusError::CountMismatch {
            expected: words,
            found: w,
        });
    }
    if !nts.data.is_finite() {
        return Err(CorpusError::Format("imported embeddings contain non-finite values".into()));
    }
    Ok(Tensor::from_fn(&[w, d], |k| nts.data.at(k % d, k / d)))
}
