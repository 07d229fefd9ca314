//! Contrastive InfoNCE loss with Pearson similarity per time step.

use super::stats::center_unit;
use super::{NumError, Real, Tensor};

/// A `D × T` embedding segment with every time column centered and scaled
/// to unit norm, stored time-major. Constant columns are stored as zeros,
/// which makes their correlation with anything 0.
#[derive(Clone, Debug)]
pub struct NormalizedSeries {
    dim: usize,
    steps: usize,
    cols: Vec<f64>,
}

impl NormalizedSeries {
    pub fn new<T: Real>(z: &Tensor<T>) -> Self {
        let (dim, steps) = (z.rows(), z.cols());
        let mut cols = vec![0.0f64; dim * steps];
        let mut buf = vec![0.0f64; dim];
        for t in 0..steps {
            for (d, b) in buf.iter_mut().enumerate() {
                *b = z.at(d, t).f64();
            }
            if let Some(u) = center_unit(&buf) {
                for (d, v) in u.into_iter().enumerate() {
                    cols[t * dim + d] = v;
                }
            }
        }
        NormalizedSeries { dim, steps, cols }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn column(&self, t: usize) -> &[f64] {
        &self.cols[t * self.dim..(t + 1) * self.dim]
    }
}

fn validate<T: Real>(
    pred: &Tensor<T>,
    candidates: &[&NormalizedSeries],
    tau: f64,
) -> Result<(), NumError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(NumError::NonPositiveTemperature(tau));
    }
    if candidates.len() < 2 {
        return Err(NumError::TooFewCandidates(candidates.len()));
    }
    if pred.shape().len() != 2 {
        return Err(NumError::ShapeMismatch {
            op: "infonce_loss",
            expected: "2-D prediction".into(),
            found: format!("{:?}", pred.shape()),
        });
    }
    for c in candidates {
        if c.dim != pred.rows() || c.steps != pred.cols() {
            return Err(NumError::ShapeMismatch {
                op: "infonce_loss",
                expected: format!("{}×{}", pred.rows(), pred.cols()),
                found: format!("{}×{}", c.dim, c.steps),
            });
        }
    }
    Ok(())
}

/// Loss summed over time steps and its gradient with respect to `pred`.
/// `candidates[0]` is the positive.
pub fn infonce_with_grad<T: Real>(
    pred: &Tensor<T>,
    candidates: &[&NormalizedSeries],
    tau: f64,
) -> Result<(f64, Tensor<T>), NumError> {
    validate(pred, candidates, tau)?;
    let (dim, steps) = (pred.rows(), pred.cols());
    let n = candidates.len();
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0;
    let mut col = vec![0.0f64; dim];
    let mut sims = vec![0.0f64; n];
    let mut g = vec![0.0f64; dim];
    for t in 0..steps {
        for (d, c) in col.iter_mut().enumerate() {
            *c = pred.at(d, t).f64();
        }
        let mean = col.iter().sum::<f64>() / dim as f64;
        col.iter_mut().for_each(|c| *c -= mean);
        let norm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
        let degenerate = norm <= f64::MIN_POSITIVE;
        if !degenerate {
            col.iter_mut().for_each(|c| *c /= norm);
        }
        for (s, cand) in sims.iter_mut().zip(candidates) {
            *s = if degenerate {
                0.0
            } else {
                let b = cand.column(t);
                col.iter().zip(b).map(|(&u, &v)| u * v).sum::<f64>().clamp(-1.0, 1.0)
            };
        }
        let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
        let denom: f64 = sims.iter().map(|s| libm::exp(s / tau - max)).sum();
        loss += max + libm::log(denom) - sims[0] / tau;
        if degenerate {
            continue;
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        for (i, (cand, &s)) in candidates.iter().zip(&sims).enumerate() {
            let p = libm::exp(s / tau - max) / denom;
            let coef = (p - if i == 0 { 1.0 } else { 0.0 }) / tau;
            if coef == 0.0 {
                continue;
            }
            let b = cand.column(t);
            for d in 0..dim {
                g[d] += coef * (b[d] - s * col[d]);
            }
        }
        for d in 0..dim {
            grad.data_mut()[d * steps + t] = T::of(g[d] / norm);
        }
    }
    Ok((loss, grad))
}

/// InfoNCE loss of `pred` against the positive `pos` and negatives `negs`,
/// summed over time steps.
pub fn infonce_loss<T: Real>(
    pred: &Tensor<T>,
    pos: &Tensor<T>,
    negs: &[Tensor<T>],
    tau: f64,
) -> Result<f64, NumError> {
    let normalized: Vec<NormalizedSeries> = std::iter::once(pos)
        .chain(negs)
        .map(NormalizedSeries::new)
        .collect();
    let refs: Vec<&NormalizedSeries> = normalized.iter().collect();
    Ok(infonce_with_grad(pred, &refs, tau)?.0)
}
