use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::EmbeddingTable;

/// One-sided significance threshold on permutation p-values.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const DEFAULT_WINDOW_S: f64 = 20.0;
pub const DEFAULT_STRIDE_S: f64 = 1.0;
/// Fewest null sequences a unit may be tested against.
pub const MIN_NULLS: usize = 100;

/// Similarity of a predicted and a reference word multiset.
pub trait WindowScorer {
    fn score(&self, pred: &[u32], reference: &[u32]) -> f64;
}

/// Greedy-matching F1 over static-embedding cosines, clamped to `[0, 1]`.
/// Empty prediction or reference scores 0.
pub fn builtin_scorer(pred: &[u32], reference: &[u32], table: &EmbeddingTable) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let cos = |a: u32, b: u32| -> f64 {
        let (x, y) = (table.vector(a), table.vector(b));
        let dot: f64 = x.iter().zip(y).map(|(&p, &q)| p as f64 * q as f64).sum();
        let nx: f64 = x.iter().map(|&p| (p as f64).powi(2)).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|&q| (q as f64).powi(2)).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            (dot / (nx * ny)).clamp(0.0, 1.0)
        }
    };
    let greedy = |from: &[u32], to: &[u32]| {
        from.iter()
            .map(|&a| to.iter().map(|&b| cos(a, b)).fold(0.0, f64::max))
            .sum::<f64>()
            / from.len() as f64
    };
    let p = greedy(pred, reference);
    let r = greedy(reference, pred);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub struct BuiltinScorer<'t> {
    pub table: &'t EmbeddingTable,
}

impl WindowScorer for BuiltinScorer<'_> {
    fn score(&self, pred: &[u32], reference: &[u32]) -> f64 {
        builtin_scorer(pred, reference, self.table)
    }
}

fn window_count(trial_len_s: f64, stride_s: f64) -> usize {
    (trial_len_s / stride_s - 1e-9).ceil().max(0.0) as usize
}

/// Scores the words whose onset lies in `[s − w/2, s + w/2)` around every
/// stride point `s` of the trial. Edge windows are truncated by the trial
/// bounds, never dropped. Words are `(id, onset)`.
pub fn window_similarity<S: WindowScorer + ?Sized>(
    decoded: &[(u32, f64)],
    truth: &[(u32, f64)],
    trial_len_s: f64,
    window_s: f64,
    stride_s: f64,
    scorer: &S,
) -> Result<Vec<f64>, EvalError> {
    let n = window_count(trial_len_s, stride_s);
    if n == 0 || truth.is_empty() {
        return Err(EvalError::EmptyTrial(format!("of length {trial_len_s} s")));
    }
    let pick = |words: &[(u32, f64)], lo: f64, hi: f64| -> Vec<u32> {
        words.iter().filter(|w| w.1 >= lo && w.1 < hi).map(|w| w.0).collect()
    };
    Ok((0..n)
        .map(|k| {
            let s = k as f64 * stride_s;
            let (lo, hi) = (s - window_s / 2.0, s + window_s / 2.0);
            scorer.score(&pick(decoded, lo, hi), &pick(truth, lo, hi))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMode {
    /// `(1 + #{null ≥ real}) / (1 + n)`, never zero.
    AddOne,
    /// `#{null ≥ real} / n`.
    Raw,
}

/// One-sided permutation p-value of `real` against `nulls`.
pub fn permutation_pvalue(real: f64, nulls: &[f64], mode: PValueMode) -> Result<f64, EvalError> {
    if nulls.is_empty() {
        return Err(EvalError::EmptyNulls("permutation test".into()));
    }
    let above = nulls.iter().filter(|&&v| v >= real).count() as f64;
    let n = nulls.len() as f64;
    Ok(match mode {
        PValueMode::AddOne => (1.0 + above) / (1.0 + n),
        PValueMode::Raw => above / n,
    })
}

/// A decoded trial with its reference and null decodes, words as
/// `(id, onset)`.
#[derive(Clone, Debug)]
pub struct TrialInput {
    pub id: String,
    pub trial_len_s: f64,
    pub truth: Vec<(u32, f64)>,
    pub decoded: Vec<(u32, f64)>,
    pub nulls: Vec<Vec<(u32, f64)>>,
}

impl TrialInput {
    pub fn null_id(&self, i: usize) -> String {
        format!("{}/null{i:04}", self.id)
    }
}

/// Window scores per scored unit (a trial's decode or one of its nulls).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowScores {
    pub units: BTreeMap<String, Vec<f64>>,
}

impl WindowScores {
    pub fn compute<S: WindowScorer + ?Sized>(
        trials: &[TrialInput],
        scorer: &S,
        window_s: f64,
        stride_s: f64,
    ) -> Result<Self, EvalError> {
        let mut units = BTreeMap::new();
        for t in trials {
            let score = |d: &[(u32, f64)]| window_similarity(d, &t.truth, t.trial_len_s, window_s, stride_s, scorer);
            units.insert(t.id.clone(), score(&t.decoded)?);
            for (i, n) in t.nulls.iter().enumerate() {
                units.insert(t.null_id(i), score(n)?);
            }
        }
        Ok(WindowScores { units })
    }

    /// Fails listing every `unit@window` that has no score.
    pub fn require(&self, expected: &[(String, usize)]) -> Result<(), EvalError> {
        let mut gaps = Vec::new();
        for (id, n) in expected {
            match self.units.get(id) {
                None => gaps.push(format!("{id}@all")),
                Some(v) => gaps.extend((0..*n).filter(|&k| v.get(k).is_none_or(|x| x.is_nan())).map(|k| format!("{id}@{k}"))),
            }
        }
        if gaps.is_empty() {
            Ok(())
        } else {
            Err(EvalError::MissingScores(gaps))
        }
    }
}

/// Rows `unit_id \t window_second \t score`.
pub fn export_window_scores(scores: &WindowScores, stride_s: f64) -> String {
    let mut out = String::new();
    for (id, v) in &scores.units {
        for (k, s) in v.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{}\t{s}", k as f64 * stride_s);
        }
    }
    out
}

pub fn import_window_scores(text: &str, stride_s: f64) -> Result<WindowScores, EvalError> {
    let mut units: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(EvalError::Format(format!("line {}: expected 3 fields, got {}", n + 1, f.len())));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| EvalError::Format(format!("line {}: bad number {s:?}: {e}", n + 1)))
        };
        let second = num(f[1])?;
        let score = num(f[2])?;
        let k = (second / stride_s).round();
        if k < 0.0 || (k * stride_s - second).abs() > 1e-6 {
            return Err(EvalError::Format(format!("line {}: window {second} is not on the stride grid", n + 1)));
        }
        let k = k as usize;
        let v = units.entry(f[0].to_string()).or_default();
        if v.len() <= k {
            v.resize(k + 1, f64::NAN);
        }
        if !v[k].is_nan() {
            return Err(EvalError::Format(format!("line {}: duplicate score for {}@{k}", n + 1, f[0])));
        }
        v[k] = score;
    }
    Ok(WindowScores { units })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub id: String,
    pub window_scores: Vec<f64>,
    pub null_window_mean: Vec<f64>,
    pub window_p: Vec<f64>,
    pub score: f64,
    pub null_score_mean: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub score_source: String,
    pub p_value_mode: PValueMode,
    pub window_s: f64,
    pub stride_s: f64,
    pub nulls_per_trial: usize,
    pub mean_score: f64,
    pub mean_null_score: f64,
    /// Percent of windows with p below the significance level.
    pub window_accuracy: f64,
    /// Percent of trials with p below the significance level.
    pub trial_accuracy: f64,
    pub trials: Vec<TrialReport>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trial and window significance of each decode against its nulls.
pub fn evaluate_sequences(
    trials: &[TrialInput],
    scores: &WindowScores,
    score_source: &str,
    mode: PValueMode,
    window_s: f64,
    stride_s: f64,
) -> Result<SequenceReport, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::EmptyTrial("set (no trials)".into()));
    }
    let mut expected = Vec::new();
    for t in trials {
        if t.nulls.len() < MIN_NULLS {
            return Err(EvalError::EmptyNulls(format!(
                "{}: {} null sequences, need at least {MIN_NULLS}",
                t.id,
                t.nulls.len()
            )));
        }
        let n = window_count(t.trial_len_s, stride_s);
        expected.push((t.id.clone(), n));
        expected.extend((0..t.nulls.len()).map(|i| (t.null_id(i), n)));
    }
    scores.require(&expected)?;
    let mut reports = Vec::new();
    let (mut sig_windows, mut windows) = (0usize, 0usize);
    for t in trials {
        let n = window_count(t.trial_len_s, stride_s);
        let real = &scores.units[&t.id][..n];
        let nulls: Vec<&[f64]> = (0..t.nulls.len()).map(|i| &scores.units[&t.null_id(i)][..n]).collect();
        let mut window_p = Vec::with_capacity(n);
        let mut null_window_mean = Vec::with_capacity(n);
        for k in 0..n {
            let col: Vec<f64> = nulls.iter().map(|v| v[k]).collect();
            null_window_mean.push(mean(&col));
            window_p.push(permutation_pvalue(real[k], &col, mode)?);
        }
        sig_windows += window_p.iter().filter(|&&p| p < SIGNIFICANCE_LEVEL).count();
        windows += n;
        let null_means: Vec<f64> = nulls.iter().map(|v| mean(v)).collect();
        let score = mean(real);
        let p = permutation_pvalue(score, &null_means, mode)?;
        reports.push(TrialReport {
            id: t.id.clone(),
            window_scores: real.to_vec(),
            null_window_mean,
            window_p,
            score,
            null_score_mean: mean(&null_means),
            p_value: p,
            significant: p < SIGNIFICANCE_LEVEL,
        });
    }
    let nt = reports.len() as f64;
    Ok(SequenceReport {
        score_source: score_source.to_string(),
        p_value_mode: mode,
        window_s,
        stride_s,
        nulls_per_trial: trials.iter().map(|t| t.nulls.len()).min().unwrap_or(0),
        mean_score: reports.iter().map(|r| r.score).sum::<f64>() / nt,
        mean_null_score: reports.iter().map(|r| r.null_score_mean).sum::<f64>() / nt,
        window_accuracy: 100.0 * sig_windows as f64 / windows as f64,
        trial_accuracy: 100.0 * reports.iter().filter(|r| r.significant).count() as f64 / nt,
        trials: reports,
    })
}
