use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{nucleus_filter, window_average, DecodeError, DecoderConfig, Embedder};
use crate::corpus::{truncate_history, NgramLm, Vocabulary, WordAnnotation, UNK_ID};
use crate::numcore::center_unit;
use crate::sigproc::EmbeddingSeries;

/// Scores the continuations of one hypothesis at one word slot.
pub trait StepScorer {
    /// `context` holds the hypothesis' most recent words (at most
    /// [`MAX_CONTEXT`], most recent last); one score per candidate, in
    /// candidate order.
    fn score(&mut self, step: usize, context: &[u32], candidates: &[u32]) -> Vec<f64>;
}

/// Pearson correlation between the window-averaged reconstruction of each
/// slot and the candidate's contextual embedding.
pub struct CorrelationScorer<'e, E: Embedder> {
    embedder: &'e E,
    targets: Vec<Option<Vec<f64>>>,
    cache: HashMap<Vec<u32>, Option<Vec<f64>>>,
}

impl<'e, E: Embedder> CorrelationScorer<'e, E> {
    pub fn new(zhat: &EmbeddingSeries, timings: &[(f64, f64)], embedder: &'e E) -> Result<Self, DecodeError> {
        if embedder.context_len() > MAX_CONTEXT + 1 {
            return Err(DecodeError::Config(format!(
                "embedding context {} exceeds {}",
                embedder.context_len(),
                MAX_CONTEXT + 1
            )));
        }
        if embedder.dim() != zhat.channels() {
            return Err(DecodeError::DimensionMismatch {
                expected: zhat.channels(),
                found: embedder.dim(),
            });
        }
        let targets = timings
            .iter()
            .map(|&(a, b)| window_average(zhat, a, b).map(|v| center_unit(&v)))
            .collect::<Result<_, _>>()?;
        Ok(CorrelationScorer {
            embedder,
            targets,
            cache: HashMap::new(),
        })
    }

    fn unit_embedding(&mut self, context: &[u32], word: u32) -> Option<&[f64]> {
        let keep = self.embedder.context_len() - 1;
        let ctx = &context[context.len().saturating_sub(keep)..];
        let mut key = ctx.to_vec();
        key.push(word);
        let embedder = self.embedder;
        self.cache
            .entry(key)
            .or_insert_with(|| embedder.embed(ctx, word).and_then(|e| center_unit(&e)))
            .as_deref()
    }
}

impl<E: Embedder> StepScorer for CorrelationScorer<'_, E> {
    fn score(&mut self, step: usize, context: &[u32], candidates: &[u32]) -> Vec<f64> {
        let Some(target) = self.targets[step].clone() else {
            return vec![0.0; candidates.len()];
        };
        candidates
            .iter()
            .map(|&w| match self.unit_embedding(context, w) {
                // both sides centered and unit-norm: dot product is Pearson
                Some(e) => e.iter().zip(&target).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0),
                None => 0.0,
            })
            .collect()
    }
}

/// I.i.d. Uniform(−1, 1) scores from a seeded stream.
pub struct NullScorer {
    rng: ChaCha8Rng,
}

impl NullScorer {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NullScorer { rng }
    }
}

impl StepScorer for NullScorer {
    fn score(&mut self, _step: usize, _context: &[u32], candidates: &[u32]) -> Vec<f64> {
        candidates.iter().map(|_| self.rng.random_range(-1.0..1.0)).collect()
    }
}

/// LM continuations, memoized by truncated history.
pub struct Proposer<'a> {
    lm: &'a NgramLm,
    cfg: DecoderConfig,
    cache: HashMap<Vec<u32>, Rc<[(u32, f64)]>>,
}

impl<'a> Proposer<'a> {
    pub fn new(lm: &'a NgramLm, cfg: &DecoderConfig) -> Result<Self, DecodeError> {
        cfg.validate()?;
        if lm.order() > MAX_CONTEXT + 1 {
            return Err(DecodeError::Config(format!("LM order {} exceeds {}", lm.order(), MAX_CONTEXT + 1)));
        }
        Ok(Proposer {
            lm,
            cfg: cfg.clone(),
            cache: HashMap::new(),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Next-word distribution with the unknown token removed.
    pub fn distribution(&self, history: &[u32]) -> Vec<f64> {
        let mut p = self.lm.next_distribution(history);
        if let Some(u) = p.get_mut(UNK_ID as usize) {
            *u = 0.0;
        }
        let s: f64 = p.iter().sum();
        if s > 0.0 {
            p.iter_mut().for_each(|v| *v /= s);
        }
        p
    }

    /// Nucleus-filtered `(word, probability)` pairs, most probable first,
    /// at most `max_continuations`. Empty if no known word has mass.
    pub fn propose(&mut self, history: &[u32]) -> Result<Rc<[(u32, f64)]>, DecodeError> {
        if let Some(c) = self.cache.get(history) {
            return Ok(c.clone());
        }
        let dist = self.distribution(history);
        let out: Rc<[(u32, f64)]> = if dist.iter().sum::<f64>() > 0.0 {
            nucleus_filter(&dist, self.cfg.top_p, self.cfg.top_r)?
                .into_iter()
                .take(self.cfg.max_continuations)
                .map(|w| (w, dist[w as usize]))
                .collect()
        } else {
            Rc::from(Vec::new())
        };
        self.cache.insert(history.to_vec(), out.clone());
        Ok(out)
    }

    /// Most probable word of the unmasked distribution.
    pub fn top1(&self, history: &[u32]) -> (u32, f64) {
        let p = self.lm.next_distribution(history);
        let mut best = 0;
        for (w, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = w;
            }
        }
        (best as u32, p[best])
    }

    /// `context` holds the last words before `step`, most recent last.
    fn history<'h>(&self, context: &'h [u32], timings: &[(f64, f64)], step: usize) -> &'h [u32] {
        let onsets: Vec<f64> = timings[step - context.len()..step].iter().map(|t| t.0).collect();
        truncate_history(context, &onsets, timings[step].0, self.cfg.horizon_s, self.lm.order())
    }
}

const ROOT: u32 = u32::MAX;
/// Most recent words kept on each node; bounds the LM order and the
/// embedding context a decode can use.
pub const MAX_CONTEXT: usize = 16;

#[derive(Clone, Copy, Debug)]
struct Node {
    parent: u32,
    word: u32,
    score: f64,
    cum: f64,
    lm_prob: f64,
    tail: [u32; MAX_CONTEXT],
    tail_len: u8,
}

impl Node {
    fn tail(&self) -> &[u32] {
        &self.tail[..self.tail_len as usize]
    }
}

/// `tail` extended by `word`, dropping the oldest word when full.
fn push_tail(tail: &[u32], word: u32) -> ([u32; MAX_CONTEXT], u8) {
    let mut out = [0u32; MAX_CONTEXT];
    let keep = tail.len().min(MAX_CONTEXT - 1);
    out[..keep].copy_from_slice(&tail[tail.len() - keep..]);
    out[keep] = word;
    (out, keep as u8 + 1)
}

/// A ranked hypothesis. `scores[i]` is the correlation at word `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<u32>,
    pub scores: Vec<f64>,
    pub cumulative: f64,
}

/// Live hypotheses stored as parent-linked nodes. `live` is ranked best
/// first; `lex` holds each live node's lexicographic rank among its peers.
pub struct Beam {
    nodes: Vec<Node>,
    live: Vec<u32>,
    lex: Vec<u32>,
    depth: usize,
    fallback_steps: Vec<usize>,
}

impl Default for Beam {
    fn default() -> Self {
        Self::new()
    }
}

impl Beam {
    /// The beam holding only the empty hypothesis.
    pub fn new() -> Self {
        Beam {
            nodes: Vec::new(),
            live: vec![ROOT],
            lex: vec![0],
            depth: 0,
            fallback_steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Steps at which no hypothesis had a continuation and the top LM word
    /// was used instead.
    pub fn fallback_steps(&self) -> &[usize] {
        &self.fallback_steps
    }

    fn trace(&self, mut id: u32) -> (Vec<u32>, Vec<f64>) {
        let mut words = Vec::with_capacity(self.depth);
        let mut scores = Vec::with_capacity(self.depth);
        while id != ROOT {
            let n = self.nodes[id as usize];
            words.push(n.word);
            scores.push(n.score);
            id = n.parent;
        }
        words.reverse();
        scores.reverse();
        (words, scores)
    }

    /// Hypotheses best first.
    pub fn hypotheses(&self) -> Vec<Hypothesis> {
        self.live
            .iter()
            .map(|&id| {
                let (words, scores) = self.trace(id);
                let cumulative = if id == ROOT { 0.0 } else { self.nodes[id as usize].cum };
                Hypothesis {
                    words,
                    scores,
                    cumulative,
                }
            })
            .collect()
    }

    pub fn best(&self) -> Hypothesis {
        self.hypotheses().swap_remove(0)
    }
}

struct Child {
    node: Node,
    parent_lex: u32,
}

/// Higher cumulative, then higher LM probability, then smaller word
/// sequence. Strict on distinct children.
fn rank(a: &Child, b: &Child) -> Ordering {
    b.node
        .cum
        .total_cmp(&a.node.cum)
        .then(b.node.lm_prob.total_cmp(&a.node.lm_prob))
        .then(a.parent_lex.cmp(&b.parent_lex))
        .then(a.node.word.cmp(&b.node.word))
}

/// Extends every hypothesis by one word and keeps the global top `k`.
/// Returns whether the step fell back to the top LM word.
pub fn beam_step<S: StepScorer>(
    beam: &mut Beam,
    timings: &[(f64, f64)],
    proposer: &mut Proposer,
    scorer: &mut S,
) -> Result<bool, DecodeError> {
    let step = beam.depth;
    if beam.is_empty() {
        return Err(DecodeError::Config("beam is empty".into()));
    }
    if step >= timings.len() {
        return Err(DecodeError::Config(format!("no timing for word {step}")));
    }
    let mut children: Vec<Child> = Vec::new();
    let empty: &[u32] = &[];
    let child = |beam: &Beam, slot: usize, id: u32, word: u32, score: f64, lm_prob: f64| {
        let (base, tail) = if id == ROOT {
            (0.0, empty)
        } else {
            let n = &beam.nodes[id as usize];
            (n.cum, n.tail())
        };
        let (tail, tail_len) = push_tail(tail, word);
        Child {
            node: Node {
                parent: id,
                word,
                score,
                cum: base + score,
                lm_prob,
                tail,
                tail_len,
            },
            parent_lex: beam.lex[slot],
        }
    };
    for (slot, &id) in beam.live.iter().enumerate() {
        let context = if id == ROOT { empty } else { beam.nodes[id as usize].tail() };
        let history = proposer.history(context, timings, step);
        let props = proposer.propose(history)?;
        if props.is_empty() {
            continue;
        }
        let words: Vec<u32> = props.iter().map(|p| p.0).collect();
        let scores = scorer.score(step, context, &words);
        for (&(word, lm_prob), score) in props.iter().zip(scores) {
            children.push(child(beam, slot, id, word, score, lm_prob));
        }
    }
    let fell_back = children.is_empty();
    if fell_back {
        for (slot, &id) in beam.live.iter().enumerate() {
            let context = if id == ROOT { empty } else { beam.nodes[id as usize].tail() };
            let (word, lm_prob) = proposer.top1(proposer.history(context, timings, step));
            let score = scorer.score(step, context, &[word])[0];
            children.push(child(beam, slot, id, word, score, lm_prob));
        }
        beam.fallback_steps.push(step);
    }
    let k = proposer.cfg.beam;
    if children.len() > k {
        children.select_nth_unstable_by(k - 1, rank);
        children.truncate(k);
    }
    children.sort_unstable_by(rank);
    let mut by_lex: Vec<usize> = (0..children.len()).collect();
    by_lex.sort_unstable_by_key(|&i| (children[i].parent_lex, children[i].node.word));
    let mut lex = vec![0u32; children.len()];
    for (r, &i) in by_lex.iter().enumerate() {
        lex[i] = r as u32;
    }
    beam.live = children
        .iter()
        .map(|c| {
            beam.nodes.push(c.node);
            (beam.nodes.len() - 1) as u32
        })
        .collect();
    beam.lex = lex;
    beam.depth += 1;
    Ok(fell_back)
}

/// Best hypothesis of a full decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub words: Vec<u32>,
    pub scores: Vec<f64>,
    pub cumulative: f64,
    pub fallback_steps: Vec<usize>,
}

fn check_timings(timings: &[(f64, f64)]) -> Result<(), DecodeError> {
    if timings.is_empty() {
        return Err(DecodeError::EmptyTimings);
    }
    for (i, &(a, b)) in timings.iter().enumerate() {
        if !(a.is_finite() && b > a) {
            return Err(DecodeError::Config(format!("word {i}: bad timing [{a}, {b})")));
        }
        if i > 0 && a < timings[i - 1].1 {
            return Err(DecodeError::Config(format!("word {i} overlaps its predecessor")));
        }
    }
    Ok(())
}

/// Runs one beam over every word slot.
pub fn run_beam<S: StepScorer>(
    timings: &[(f64, f64)],
    proposer: &mut Proposer,
    scorer: &mut S,
) -> Result<Decoded, DecodeError> {
    check_timings(timings)?;
    let mut beam = Beam::new();
    for _ in 0..timings.len() {
        beam_step(&mut beam, timings, proposer, scorer)?;
    }
    let best = beam.best();
    Ok(Decoded {
        words: best.words,
        scores: best.scores,
        cumulative: best.cumulative,
        fallback_steps: beam.fallback_steps,
    })
}

/// Decodes a trial from its reconstruction given true word timings.
pub fn decode_trial<E: Embedder>(
    zhat: &EmbeddingSeries,
    timings: &[(f64, f64)],
    lm: &NgramLm,
    embedder: &E,
    cfg: &DecoderConfig,
) -> Result<Decoded, DecodeError> {
    check_timings(timings)?;
    let mut proposer = Proposer::new(lm, cfg)?;
    let mut scorer = CorrelationScorer::new(zhat, timings, embedder)?;
    run_beam(timings, &mut proposer, &mut scorer)
}

/// `count` decodes with random scores; null `i` draws from stream `i` of
/// `seed`.
pub fn generate_null_sequences(
    timings: &[(f64, f64)],
    proposer: &mut Proposer,
    count: usize,
    seed: u64,
) -> Result<Vec<Decoded>, DecodeError> {
    if count == 0 {
        return Err(DecodeError::Config("null count must be at least 1".into()));
    }
    (0..count)
        .map(|i| run_beam(timings, proposer, &mut NullScorer::new(seed, i as u64)))
        .collect()
}

/// Rows `token \t t_on \t t_off \t step_correlation`.
pub fn write_decoded_tsv(decoded: &Decoded, timings: &[(f64, f64)], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for ((&w, &s), &(a, b)) in decoded.words.iter().zip(&decoded.scores).zip(timings) {
        let _ = writeln!(out, "{}\t{a}\t{b}\t{s}", vocab.token(w));
    }
    out
}

/// Inverse of [`write_decoded_tsv`]: annotations plus step correlations.
pub fn parse_decoded_tsv(text: &str) -> Result<(Vec<WordAnnotation>, Vec<f64>), DecodeError> {
    let mut words = Vec::new();
    let mut scores = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| DecodeError::Config(format!("line {}: bad number {s:?}: {e}", n + 1)))
        };
        if f.len() != 4 {
            return Err(DecodeError::Config(format!("line {}: expected 4 fields, got {}", n + 1, f.len())));
        }
        words.push(WordAnnotation::new(f[0], num(f[1])?, num(f[2])?));
        scores.push(num(f[3])?);
    }
    Ok((words, scores))
}
