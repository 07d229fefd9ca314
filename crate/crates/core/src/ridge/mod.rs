//! Lagged linear baseline: ridge regression from a window of neural
//! samples around each time step to the embedding at that step.

mod normal;

use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Blob, BlobData, Container, ContainerError};
use crate::numcore::Tensor;
use crate::sigproc::{EmbeddingSeries, TimeSeries};

pub use normal::NormalEquations;

pub const RIDGE_KIND: &[u8; 4] = b"RIDG";

#[derive(Debug, Error)]
pub enum RidgeError {
    #[error("config: {0}")]
    Config(String),
    #[error("series of {samples} samples is shorter than the lag span (need more than {span})")]
    TooShort { samples: usize, span: usize },
    #[error("regularized Gram matrix is singular at lambda = {lambda}; use lambda > 0")]
    Singular { lambda: f64 },
    #[error("cross-validation needs at least {needed} trials, got {found}")]
    TooFewTrials { needed: usize, found: usize },
    #[error("shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RidgeConfig {
    /// First lag in samples (negative looks back).
    pub tau1: i64,
    pub tau2: i64,
    pub lambdas: Vec<f64>,
    pub folds: usize,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            tau1: -40,
            tau2: 60,
            lambdas: log_grid(1e-3, 1e5, 20),
            folds: 5,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<(), RidgeError> {
        if self.tau1 > self.tau2 {
            return Err(RidgeError::Config(format!("tau1 {} exceeds tau2 {}", self.tau1, self.tau2)));
        }
        if self.folds < 2 {
            return Err(RidgeError::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.lambdas.is_empty()
            || self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite())
            || self.lambdas.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(RidgeError::Config("lambda grid must be non-empty, non-negative and ascending".into()));
        }
        Ok(())
    }

    pub fn n_lags(&self) -> usize {
        (self.tau2 - self.tau1 + 1) as usize
    }

    /// Lagged features plus the intercept.
    pub fn n_features(&self, channels: usize) -> usize {
        channels * self.n_lags() + 1
    }

    fn lag(&self, a: usize) -> i64 {
        self.tau1 + a as i64
    }
}

/// Source index range `[u0, u1)` and target range start `t0` such that
/// `t = u − τ` for lag `τ` on a series of `len` samples.
fn lag_overlap(tau: i64, len: usize) -> Option<(usize, usize, usize)> {
    let n = len as i64;
    let t0 = (-tau).max(0);
    let t1 = (n - tau).min(n);
    (t1 > t0).then(|| ((t0 + tau) as usize, (t1 + tau) as usize, t0 as usize))
}

fn check_len(samples: usize, cfg: &RidgeConfig) -> Result<(), RidgeError> {
    let span = (cfg.tau2 - cfg.tau1) as usize;
    if samples <= span {
        return Err(RidgeError::TooShort { samples, span });
    }
    Ok(())
}

fn to_f64(x: &Tensor<f32>) -> Mat<f64> {
    Mat::from_fn(x.rows(), x.cols(), |r, c| x.at(r, c) as f64)
}

/// `T × (C·L + 1)` design: row `t` holds `x[:, t + τ]` for each lag in
/// order (zero outside the series) followed by a constant 1.
pub fn build_lagged_design(x: &Tensor<f32>, cfg: &RidgeConfig) -> Result<Mat<f64>, RidgeError> {
    cfg.validate()?;
    let (c, t) = (x.rows(), x.cols());
    check_len(t, cfg)?;
    let mut a = Mat::<f64>::zeros(t, cfg.n_features(c));
    for lag in 0..cfg.n_lags() {
        let tau = cfg.lag(lag);
        if let Some((u0, u1, t0)) = lag_overlap(tau, t) {
            for ch in 0..c {
                let src = x.row(ch);
                for (k, u) in (u0..u1).enumerate() {
                    a[(t0 + k, lag * c + ch)] = src[u] as f64;
                }
            }
        }
    }
    let p = a.ncols();
    for row in 0..t {
        a[(row, p - 1)] = 1.0;
    }
    Ok(a)
}

/// Solves `(G + λ I') W = B` where `I'` skips the last (intercept) entry.
pub fn solve_regularized(g: MatRef<'_, f64>, b: MatRef<'_, f64>, lambda: f64) -> Result<Mat<f64>, RidgeError> {
    let p = g.nrows();
    let mut reg = g.to_owned();
    for i in 0..p - 1 {
        reg[(i, i)] += lambda;
    }
    let llt = reg.llt(Side::Lower).map_err(|_| RidgeError::Singular { lambda })?;
    let w = llt.solve(b);
    if w.col_iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(RidgeError::Singular { lambda });
    }
    Ok(w)
}

/// `W = (AᵀA + λI')⁻¹ AᵀZ` with the last column of `a` treated as the
/// unpenalized intercept. `z` is `rows × D`.
pub fn ridge_fit(a: MatRef<'_, f64>, z: MatRef<'_, f64>, lambda: f64) -> Result<Mat<f64>, RidgeError> {
    if a.nrows() != z.nrows() {
        return Err(RidgeError::Shape(format!("design has {} rows, targets {}", a.nrows(), z.nrows())));
    }
    if !(lambda >= 0.0) {
        return Err(RidgeError::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let g = a.transpose() * a;
    let b = a.transpose() * z;
    solve_regularized(g.as_ref(), b.as_ref(), lambda)
}

/// Aligned neural (`C × T`) and embedding (`D × T`) trial.
#[derive(Clone, Copy, Debug)]
pub struct RidgeTrial<'a> {
    pub x: &'a Tensor<f32>,
    pub z: &'a Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub lambdas: Vec<f64>,
    /// Mean over folds of the mean per-dimension Pearson on the held fold.
    pub scores: Vec<f64>,
    pub best_lambda: f64,
    /// Trial indices held out in each fold.
    pub folds: Vec<Vec<usize>>,
}

fn check_trials(trials: &[RidgeTrial<'_>], cfg: &RidgeConfig) -> Result<(usize, usize), RidgeError> {
    let first = trials.first().ok_or(RidgeError::TooFewTrials { needed: 1, found: 0 })?;
    let (c, d) = (first.x.rows(), first.z.rows());
    for (i, tr) in trials.iter().enumerate() {
        if tr.x.rows() != c || tr.z.rows() != d || tr.x.cols() != tr.z.cols() {
            return Err(RidgeError::Shape(format!(
                "trial {i}: x {:?} and z {:?} do not match {c} channels / {d} dims",
                tr.x.shape(),
                tr.z.shape()
            )));
        }
        check_len(tr.x.cols(), cfg)?;
    }
    Ok((c, d))
}

/// Trial-level k-fold grid search over `cfg.lambdas` (trial `i` is held out
/// in fold `i mod k`). Ties go to the larger lambda.
pub fn cross_validate(trials: &[RidgeTrial<'_>], cfg: &RidgeConfig) -> Result<CvReport, RidgeError> {
    cfg.validate()?;
    if trials.len() < cfg.folds {
        return Err(RidgeError::TooFewTrials {
            needed: cfg.folds,
            found: trials.len(),
        });
    }
    check_trials(trials, cfg)?;
    let folds: Vec<Vec<usize>> = (0..cfg.folds)
        .map(|f| (0..trials.len()).filter(|i| i % cfg.folds == f).collect())
        .collect();
    let fold_eqs: Vec<NormalEquations> = folds
        .iter()
        .map(|idx| {
            let mut acc: Option<NormalEquations> = None;
            for &i in idx {
                let ne = NormalEquations::from_trial(trials[i].x, trials[i].z, cfg);
                match acc.as_mut() {
                    None => acc = Some(ne),
                    Some(a) => a.add(&ne),
                }
            }
            acc.expect("every fold holds at least one trial")
        })
        .collect();
    let mut total = fold_eqs[0].clone();
    for ne in &fold_eqs[1..] {
        total.add(ne);
    }
    let mut scores = vec![0.0; cfg.lambdas.len()];
    for (f, held) in fold_eqs.iter().enumerate() {
        let train_ids: Vec<usize> = (0..trials.len()).filter(|i| i % cfg.folds != f).collect();
        assert!(train_ids.iter().all(|i| !folds[f].contains(i)), "fold {f} overlaps its training set");
        let train = total.minus(held);
        for (k, &lambda) in cfg.lambdas.iter().enumerate() {
            let w = solve_regularized(train.gram(), train.cross(), lambda)?;
            scores[k] += held.mean_pearson(w.as_ref()) / cfg.folds as f64;
        }
        log::debug!("ridge fold {f}: scores so far {scores:?}");
    }
    let best = (0..scores.len())
        .rev()
        .fold(scores.len() - 1, |b, k| if scores[k] > scores[b] { k } else { b });
    Ok(CvReport {
        lambdas: cfg.lambdas.clone(),
        scores,
        best_lambda: cfg.lambdas[best],
        folds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RidgeHeader {
    config: RidgeConfig,
    channels: usize,
    dim: usize,
    lambda: f64,
}

/// Fitted lagged ridge model; weights are `[C·L + 1, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub config: RidgeConfig,
    pub channels: usize,
    pub dim: usize,
    pub lambda: f64,
    pub weights: Tensor<f64>,
}

impl RidgeModel {
    /// Fits on all `trials` at a fixed lambda.
    pub fn fit(trials: &[RidgeTrial<'_>], cfg: &RidgeConfig, lambda: f64) -> Result<Self, RidgeError> {
        cfg.validate()?;
        let (c, d) = check_trials(trials, cfg)?;
        let mut acc = NormalEquations::from_trial(trials[0].x, trials[0].z, cfg);
        for tr in &trials[1..] {
            acc.add(&NormalEquations::from_trial(tr.x, tr.z, cfg));
        }
        let w = solve_regularized(acc.gram(), acc.cross(), lambda)?;
        Ok(RidgeModel {
            config: cfg.clone(),
            channels: c,
            dim: d,
            lambda,
            weights: Tensor::from_fn(&[w.nrows(), w.ncols()], |k| w[(k / d, k % d)]),
        })
    }

    /// Cross-validates lambda, then refits on all trials.
    pub fn fit_cv(trials: &[RidgeTrial<'_>], cfg: &RidgeConfig) -> Result<(Self, CvReport), RidgeError> {
        let report = cross_validate(trials, cfg)?;
        Ok((Self::fit(trials, cfg, report.best_lambda)?, report))
    }

    /// `Ẑ[:, t] = Wᵀ · design_row(t)`, same length as the input.
    pub fn predict(&self, x: &TimeSeries) -> Result<EmbeddingSeries, RidgeError> {
        if x.channels() != self.channels {
            return Err(RidgeError::Shape(format!(
                "input has {} channels, model expects {}",
                x.channels(),
                self.channels
            )));
        }
        let t = x.samples();
        let (c, d) = (self.channels, self.dim);
        let xm = to_f64(x.tensor());
        let w = MatRef::from_row_major_slice(self.weights.data(), self.weights.rows(), d);
        let intercept = w.row(w.nrows() - 1);
        let mut out = Mat::<f64>::from_fn(d, t, |r, _| intercept[r]);
        for lag in 0..self.config.n_lags() {
            if let Some((u0, u1, t0)) = lag_overlap(self.config.lag(lag), t) {
                let wl = w.subrows(lag * c, c).transpose();
                let src = xm.as_ref().subcols(u0, u1 - u0);
                let dst = out.as_mut().subcols_mut(t0, u1 - u0);
                faer::linalg::matmul::matmul(dst, faer::Accum::Add, wl, src, 1.0, faer::Par::Seq);
            }
        }
        let data = Tensor::from_fn(&[d, t], |k| out[(k / t, k % t)] as f32);
        TimeSeries::new(data, x.sample_rate()).map_err(|e| RidgeError::Shape(e.to_string()))
    }

    pub fn to_container(&self) -> Container {
        let header = RidgeHeader {
            config: self.config.clone(),
            channels: self.channels,
            dim: self.dim,
            lambda: self.lambda,
        };
        Container {
            kind: *RIDGE_KIND,
            config: serde_json::to_string(&header).expect("header serializes"),
            blobs: vec![Blob {
                name: "weights".into(),
                shape: self.weights.shape().to_vec(),
                data: BlobData::F64(self.weights.data().to_vec()),
            }],
        }
    }

    pub fn from_container(c: Container) -> Result<Self, RidgeError> {
        let bad = |m: String| RidgeError::Container(ContainerError::Format(m));
        if &c.kind != RIDGE_KIND {
            return Err(RidgeError::Container(ContainerError::KindMismatch {
                expected: "RIDG".into(),
                found: String::from_utf8_lossy(&c.kind).into_owned(),
            }));
        }
        let h: RidgeHeader = serde_json::from_str(&c.config).map_err(|e| bad(format!("ridge header: {e}")))?;
        h.config.validate()?;
        let [blob] = <[Blob; 1]>::try_from(c.blobs).map_err(|_| bad("expected one weights blob".into()))?;
        let want = vec![h.config.n_features(h.channels), h.dim];
        let BlobData::F64(data) = blob.data else {
            return Err(bad("weights must be f64".into()));
        };
        if blob.name != "weights" || blob.shape != want {
            return Err(bad(format!("weights blob {:?} {:?}, expected {want:?}", blob.name, blob.shape)));
        }
        Ok(RidgeModel {
            weights: Tensor::from_vec(&want, data).map_err(|e| bad(e.to_string()))?,
            config: h.config,
            channels: h.channels,
            dim: h.dim,
            lambda: h.lambda,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RidgeError> {
        Ok(self.to_container().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, RidgeError> {
        Self::from_container(Container::read(path, Some(RIDGE_KIND))?)
    }
}
