//! Interpolated Kneser–Ney n-gram language model over a [`Vocabulary`].

use std::collections::BTreeMap;

use super::CorpusError;

const DISCOUNT: f64 = 0.75;

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextStats {
    /// Raw count of the context (top order) or number of distinct
    /// (left word, context, next) types (lower orders).
    total: f64,
    /// Follower id → count (raw or continuation).
    followers: BTreeMap<u32, f64>,
}

/// Smoothed next-word model. Histories shorter than `order − 1` use the
/// matching lower-order distribution; the empty history gives the unigram.
#[derive(Clone, Debug, PartialEq)]
pub struct NgramLm {
    order: usize,
    vocab_size: usize,
    /// `levels[k]` holds contexts of length `k` (k = 0..order).
    levels: Vec<BTreeMap<Vec<u32>, ContextStats>>,
}

impl NgramLm {
    pub const DEFAULT_ORDER: usize = 3;

    /// Trains on id sequences (one per trial). Ids must be `< vocab_size`.
    pub fn train(trials: &[Vec<u32>], order: usize, vocab_size: usize) -> Result<Self, CorpusError> {
        if !(2..=5).contains(&order) {
            return Err(CorpusError::Config(format!("LM order must lie in [2, 5], got {order}")));
        }
        let tokens: usize = trials.iter().map(Vec::len).sum();
        if tokens < order {
            return Err(CorpusError::Config(format!(
                "corpus of {tokens} tokens is shorter than the LM order {order}"
            )));
        }
        if let Some(&bad) = trials.iter().flatten().find(|&&w| w as usize >= vocab_size) {
            return Err(CorpusError::Config(format!("token id {bad} outside vocabulary of {vocab_size}")));
        }
        // Distinct n-gram types with raw counts, per length.
        let mut grams: Vec<BTreeMap<Vec<u32>, f64>> = vec![BTreeMap::new(); order + 1];
        for trial in trials {
            for n in 1..=order {
                for win in trial.windows(n) {
                    *grams[n].entry(win.to_vec()).or_default() += 1.0;
                }
            }
        }
        let mut levels: Vec<BTreeMap<Vec<u32>, ContextStats>> = vec![BTreeMap::new(); order];
        // Top order: raw counts.
        for (g, &c) in &grams[order] {
            let (ctx, w) = g.split_at(order - 1);
            let st = levels[order - 1].entry(ctx.to_vec()).or_default();
            st.total += c;
            *st.followers.entry(w[0]).or_default() += c;
        }
        // Lower orders: continuation counts N1+(• ctx w).
        for n in 1..order {
            for g in grams[n + 1].keys() {
                let suffix = &g[1..];
                let (ctx, w) = suffix.split_at(n - 1);
                let st = levels[n - 1].entry(ctx.to_vec()).or_default();
                st.total += 1.0;
                *st.followers.entry(w[0]).or_default() += 1.0;
            }
        }
        Ok(NgramLm {
            order,
            vocab_size,
            levels,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Full next-word distribution given the history (most recent last).
    pub fn next_distribution(&self, history: &[u32]) -> Vec<f64> {
        let keep = history.len().min(self.order - 1);
        let ctx = &history[history.len() - keep..];
        let mut p = vec![1.0 / self.vocab_size as f64; self.vocab_size];
        // Recurse from the unigram level up to the full context.
        for k in 0..=keep {
            let sub = &ctx[keep - k..];
            let Some(st) = self.levels[k].get(sub) else {
                continue;
            };
            if st.total <= 0.0 {
                continue;
            }
            let backoff = DISCOUNT * st.followers.len() as f64 / st.total;
            p.iter_mut().for_each(|v| *v *= backoff);
            for (&w, &c) in &st.followers {
                p[w as usize] += (c - DISCOUNT).max(0.0) / st.total;
            }
        }
        p
    }

    pub fn prob(&self, history: &[u32], word: u32) -> f64 {
        self.next_distribution(history)[word as usize]
    }
}

/// Keeps the history words whose onset lies within `horizon_s` before
/// `now_s`, then the last `order − 1` of those.
pub fn truncate_history<'a>(
    ids: &'a [u32],
    onsets: &[f64],
    now_s: f64,
    horizon_s: f64,
    order: usize,
) -> &'a [u32] {
    debug_assert_eq!(ids.len(), onsets.len());
    let first_in = onsets.partition_point(|&t| t < now_s - horizon_s);
    let recent = &ids[first_in..];
    &recent[recent.len().saturating_sub(order.saturating_sub(1))..]
}
