//! Synthetic forward-model data: Markov text with word timings, contextual
//! embeddings, and simulated sensor signals with known mixing, lag and noise.

mod dataset;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, NgramLm, Vocabulary, WordAnnotation, UNK_ID};
use crate::numcore::Tensor;
use crate::sigproc::{EmbeddingSeries, SigError, TimeSeries};

pub use dataset::{
    generate_dataset, load_dataset, read_manifest, sha256_hex, write_dataset, Dataset, DatasetConfig, FileEntry,
    Manifest, Split, SynthTrial, TrialEntry, MANIFEST_FILE, TAIL_S,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("embedding dimension {found} does not match the forward model's {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Signal(#[from] SigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn config_err(field: &'static str, reason: impl Into<String>) -> SynthError {
    SynthError::Config {
        field,
        reason: reason.into(),
    }
}

/// Generator stream for one purpose, subject and trial. Distinct tuples map
/// to distinct ChaCha streams of the same seed.
pub fn stream_rng(seed: u64, kind: u8, subject: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 56) | ((subject as u64 & 0xff_ffff) << 32) | (trial as u64 & 0xffff_ffff));
    rng
}

pub(crate) const STREAM_MIXING: u8 = 1;
pub(crate) const STREAM_TEXT: u8 = 2;
pub(crate) const STREAM_NOISE: u8 = 3;
pub(crate) const STREAM_GRAMMAR: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    None,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardModelConfig {
    pub subjects: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub sample_rate: f64,
    pub kernel_length_s: f64,
    /// Weight of the shared mixing matrix; `1 − alpha` goes to the subject's own.
    pub alpha: f64,
    pub subject_scale: f64,
    pub ar_rho: f64,
    pub snr_db: f64,
    pub nonlinearity: Nonlinearity,
    /// Input gain of tanh, in units of the per-entry RMS of a unit vector.
    pub tanh_gain: f64,
    pub seed: u64,
}

impl Default for ForwardModelConfig {
    fn default() -> Self {
        ForwardModelConfig {
            subjects: 3,
            channels: 32,
            embed_dim: 32,
            sample_rate: 40.0,
            kernel_length_s: 0.4,
            alpha: 0.5,
            subject_scale: 1.0,
            ar_rho: 0.9,
            snr_db: 15.0,
            nonlinearity: Nonlinearity::None,
            tanh_gain: 2.0,
            seed: 0,
        }
    }
}

impl ForwardModelConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.subjects < 1 {
            return Err(config_err("subjects", "must be at least 1"));
        }
        if self.channels < 1 {
            return Err(config_err("channels", "must be at least 1"));
        }
        if self.embed_dim < 2 {
            return Err(config_err("embed_dim", "must be at least 2"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(config_err("sample_rate", format!("{} is not a positive rate", self.sample_rate)));
        }
        if !(self.kernel_length_s >= 0.0 && self.kernel_length_s.is_finite()) {
            return Err(config_err("kernel_length_s", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err("alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        if !(self.subject_scale >= 0.0 && self.subject_scale.is_finite()) {
            return Err(config_err("subject_scale", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.ar_rho) {
            return Err(config_err("ar_rho", format!("{} outside [0, 1)", self.ar_rho)));
        }
        if !self.snr_db.is_finite() && self.snr_db != f64::INFINITY {
            return Err(config_err("snr_db", "must be finite or +inf"));
        }
        if !(self.tanh_gain > 0.0 && self.tanh_gain.is_finite()) {
            return Err(config_err("tanh_gain", "must be positive"));
        }
        Ok(())
    }

    pub fn kernel_taps(&self) -> usize {
        (self.kernel_length_s * self.sample_rate).round() as usize
    }
}

/// Causal gamma-shaped impulse response `k² e^(−k/τ)` over `taps` samples,
/// peaking at a quarter of a second and summing to 1. Zero taps is a delta.
pub fn lag_kernel(taps: usize, sample_rate: f64) -> Vec<f64> {
    if taps <= 1 {
        return vec![1.0];
    }
    let tau = 0.25 * sample_rate / 2.0;
    let h: Vec<f64> = (0..taps)
        .map(|k| {
            let k = k as f64 + 1.0;
            k * k * (-k / tau).exp()
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.into_iter().map(|v| v / s).collect()
}

/// Per-subject mixing matrices and the lag kernel of a forward model.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    cfg: ForwardModelConfig,
    kernel: Vec<f64>,
    mixing: Vec<Tensor<f64>>,
}

impl ForwardModel {
    pub fn new(cfg: &ForwardModelConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let (c, d) = (cfg.channels, cfg.embed_dim);
        let normal = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..c * d).map(|_| StandardNormal.sample(rng)).collect() };
        let shared = normal(&mut stream_rng(cfg.seed, STREAM_MIXING, 0, 0));
        let mixing = (0..cfg.subjects)
            .map(|s| {
                let own = normal(&mut stream_rng(cfg.seed, STREAM_MIXING, s + 1, 0));
                let a = shared
                    .iter()
                    .zip(&own)
                    .map(|(&g, &b)| cfg.alpha * g + (1.0 - cfg.alpha) * cfg.subject_scale * b)
                    .collect();
                Tensor::from_vec(&[c, d], a).expect("mixing shape")
            })
            .collect();
        Ok(ForwardModel {
            kernel: lag_kernel(cfg.kernel_taps(), cfg.sample_rate),
            cfg: cfg.clone(),
            mixing,
        })
    }

    pub fn config(&self) -> &ForwardModelConfig {
        &self.cfg
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// `[C, D]` mixing of subject `s`.
    pub fn mixing(&self, s: usize) -> &Tensor<f64> {
        &self.mixing[s]
    }

    /// Noise-free sensor signal `A_s (h ⊛ φ(z))`.
    pub fn clean_signal(&self, z: &EmbeddingSeries, subject: usize) -> Result<Vec<Vec<f64>>, SynthError> {
        let cfg = &self.cfg;
        if z.channels() != cfg.embed_dim {
            return Err(SynthError::DimensionMismatch {
                expected: cfg.embed_dim,
                found: z.channels(),
            });
        }
        if subject >= cfg.subjects {
            return Err(config_err("subjects", format!("subject {subject} out of range")));
        }
        if (z.sample_rate() - cfg.sample_rate).abs() > 1e-9 {
            return Err(SynthError::Signal(SigError::InvalidRate(z.sample_rate())));
        }
        let t = z.samples();
        let gain = cfg.tanh_gain * (cfg.embed_dim as f64).sqrt();
        let driven: Vec<Vec<f64>> = (0..cfg.embed_dim)
            .map(|k| {
                let phi: Vec<f64> = z
                    .channel(k)
                    .iter()
                    .map(|&v| match cfg.nonlinearity {
                        Nonlinearity::None => v as f64,
                        Nonlinearity::Tanh => libm::tanh(gain * v as f64),
                    })
                    .collect();
                (0..t)
                    .map(|i| {
                        self.kernel
                            .iter()
                            .enumerate()
                            .take(i + 1)
                            .map(|(j, &h)| h * phi[i - j])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let a = &self.mixing[subject];
        Ok((0..cfg.channels)
            .map(|c| {
                let row = a.row(c);
                (0..t)
                    .map(|i| row.iter().zip(&driven).map(|(&w, dk)| w * dk[i]).sum())
                    .collect()
            })
            .collect())
    }

    /// Sensor signal of `subject` for trial `trial`: the clean signal plus
    /// AR(1) noise whose realized power sets each channel to the target SNR.
    pub fn simulate(&self, z: &EmbeddingSeries, subject: usize, trial: usize) -> Result<TimeSeries, SynthError> {
        let cfg = &self.cfg;
        let clean = self.clean_signal(z, subject)?;
        let mut rng = stream_rng(cfg.seed, STREAM_NOISE, subject, trial);
        let rho = cfg.ar_rho;
        let innov = (1.0 - rho * rho).sqrt();
        let rows: Vec<Vec<f32>> = clean
            .iter()
            .map(|x| {
                let mut e = Vec::with_capacity(x.len());
                let mut prev: f64 = StandardNormal.sample(&mut rng);
                for _ in 0..x.len() {
                    e.push(prev);
                    let w: f64 = StandardNormal.sample(&mut rng);
                    prev = rho * prev + innov * w;
                }
                let sig_var = variance(x);
                let noise_var = variance(&e);
                let scale = if cfg.snr_db.is_infinite() || noise_var == 0.0 {
                    0.0
                } else {
                    (sig_var / 10f64.powf(cfg.snr_db / 10.0) / noise_var).sqrt()
                };
                x.iter().zip(&e).map(|(&s, &n)| (s + scale * n) as f32).collect()
            })
            .collect();
        Ok(TimeSeries::from_rows(&rows, cfg.sample_rate)?)
    }
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

/// Source of running text.
pub trait TextSource {
    /// Next-token candidates `(token, weight)` after `history` (most recent
    /// last). Weights need not be normalized.
    fn next(&self, history: &[&str]) -> Vec<(&str, f64)>;
    /// Token that opens a trial.
    fn start(&self, rng: &mut ChaCha8Rng) -> &str;
}

/// First-order Markov chain over pseudo-words with a few successors each.
/// Every word's successors include the next word in id order, so the chain
/// visits the whole vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceGrammar {
    words: Vec<String>,
    successors: Vec<Vec<(usize, f64)>>,
}

const SYLLABLES: [&str; 20] = [
    "ba", "ko", "ri", "te", "mu", "sa", "lin", "do", "ve", "pa", "zu", "ne", "gor", "fi", "ha", "jo", "tu", "wen",
    "ly", "ca",
];

/// Distinct pronounceable token for each id.
pub fn pseudo_word(mut id: usize) -> String {
    let mut s = String::new();
    loop {
        s.push_str(SYLLABLES[id % SYLLABLES.len()]);
        id /= SYLLABLES.len();
        if id == 0 {
            break;
        }
        id -= 1;
    }
    s
}

impl SourceGrammar {
    pub fn random(vocab_size: usize, min_successors: usize, max_successors: usize, seed: u64) -> Result<Self, SynthError> {
        if vocab_size < 2 {
            return Err(config_err("vocab_size", "must be at least 2"));
        }
        if min_successors < 1 || max_successors < min_successors || max_successors > vocab_size {
            return Err(config_err(
                "max_successors",
                format!("need 1 ≤ min ≤ max ≤ vocab_size, got {min_successors}..{max_successors}"),
            ));
        }
        let mut rng = stream_rng(seed, STREAM_GRAMMAR, 0, 0);
        let words = (0..vocab_size).map(pseudo_word).collect();
        let successors = (0..vocab_size)
            .map(|i| {
                let n = rng.random_range(min_successors..=max_successors);
                let mut next = vec![(i + 1) % vocab_size];
                while next.len() < n {
                    let w = rng.random_range(0..vocab_size);
                    if !next.contains(&w) {
                        next.push(w);
                    }
                }
                next.into_iter().map(|w| (w, rng.random_range(1.0..1.5))).collect()
            })
            .collect();
        Ok(SourceGrammar { words, successors })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn successors(&self, id: usize) -> &[(usize, f64)] {
        &self.successors[id]
    }

    fn id(&self, token: &str) -> Option<usize> {
        self.words.iter().position(|w| w == token)
    }
}

impl TextSource for SourceGrammar {
    fn next(&self, history: &[&str]) -> Vec<(&str, f64)> {
        match history.last().and_then(|t| self.id(t)) {
            Some(i) => self.successors[i].iter().map(|&(w, p)| (self.words[w].as_str(), p)).collect(),
            None => self.words.iter().map(|w| (w.as_str(), 1.0)).collect(),
        }
    }

    fn start(&self, rng: &mut ChaCha8Rng) -> &str {
        &self.words[rng.random_range(0..self.words.len())]
    }
}

/// An n-gram model as a text source; the unknown token is never emitted.
pub struct LmSource<'a> {
    pub lm: &'a NgramLm,
    pub vocab: &'a Vocabulary,
}

impl TextSource for LmSource<'_> {
    fn next(&self, history: &[&str]) -> Vec<(&str, f64)> {
        let ids: Vec<u32> = history.iter().map(|t| self.vocab.id(t)).collect();
        self.lm
            .next_distribution(&ids)
            .into_iter()
            .enumerate()
            .filter(|&(w, p)| w as u32 != UNK_ID && p > 0.0)
            .map(|(w, p)| (self.vocab.token(w as u32), p))
            .collect()
    }

    fn start(&self, rng: &mut ChaCha8Rng) -> &str {
        let c = self.next(&[]);
        pick(&c, rng)
    }
}

fn pick<'a>(cands: &[(&'a str, f64)], rng: &mut ChaCha8Rng) -> &'a str {
    let total: f64 = cands.iter().map(|c| c.1).sum();
    let mut u = rng.random_range(0.0..total);
    for &(t, w) in cands {
        if u < w {
            return t;
        }
        u -= w;
    }
    cands.last().expect("non-empty candidates").0
}

pub const MIN_WORD_S: f64 = 0.2;
pub const MAX_WORD_S: f64 = 0.6;
pub const MAX_GAP_S: f64 = 0.2;

/// Samples `n_words` tokens at temperature 1 and lays them out with word
/// durations in `[0.2, 0.6]` s, each preceded by a gap in `[0, 0.2]` s.
pub fn gen_text<S: TextSource + ?Sized>(source: &S, n_words: usize, rng: &mut ChaCha8Rng) -> Vec<WordAnnotation> {
    let mut tokens: Vec<&str> = Vec::with_capacity(n_words);
    for i in 0..n_words {
        let tok = if i == 0 {
            source.start(rng)
        } else {
            let c = source.next(&tokens);
            if c.is_empty() {
                source.start(rng)
            } else {
                pick(&c, rng)
            }
        };
        tokens.push(tok);
    }
    let mut t = 0.0;
    tokens
        .into_iter()
        .map(|tok| {
            t += rng.random_range(0.0..=MAX_GAP_S);
            let on = t;
            t += rng.random_range(MIN_WORD_S..=MAX_WORD_S);
            WordAnnotation::new(tok, on, t)
        })
        .collect()
}

#[cfg(test)]
mod tests;
