use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Lowercases and strips leading/trailing punctuation.
pub fn normalize_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// A spoken word with onset/offset in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordAnnotation {
    pub token: String,
    pub t_on: f64,
    pub t_off: f64,
}

impl WordAnnotation {
    pub fn new(token: impl Into<String>, t_on: f64, t_off: f64) -> Self {
        WordAnnotation {
            token: token.into(),
            t_on,
            t_off,
        }
    }
}

/// Checks that words are sorted, non-overlapping and have positive length.
pub fn validate_annotations(words: &[WordAnnotation]) -> Result<(), CorpusError> {
    for (i, w) in words.iter().enumerate() {
        if !(w.t_off > w.t_on) || !w.t_on.is_finite() || !w.t_off.is_finite() || w.t_on < 0.0 {
            return Err(CorpusError::Annotation(format!(
                "word {i} ({:?}) has invalid interval [{}, {})",
                w.token, w.t_on, w.t_off
            )));
        }
        if i > 0 && w.t_on < words[i - 1].t_off {
            return Err(CorpusError::Annotation(format!(
                "word {i} ({:?}) starts at {} before word {} ends at {}",
                w.token,
                w.t_on,
                i - 1,
                words[i - 1].t_off
            )));
        }
    }
    Ok(())
}

/// One row per word: `token \t t_on \t t_off`.
pub fn write_annotations_tsv(words: &[WordAnnotation]) -> String {
    let mut out = String::new();
    for w in words {
        let _ = writeln!(out, "{}\t{}\t{}", w.token, w.t_on, w.t_off);
    }
    out
}

pub fn parse_annotations_tsv(text: &str) -> Result<Vec<WordAnnotation>, CorpusError> {
    let mut words = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::Annotation(format!(
                "line {}: expected 3 tab-separated fields, got {}",
                n + 1,
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| {
                CorpusError::Annotation(format!("line {}: bad time {s:?}: {e}", n + 1))
            })
        };
        words.push(WordAnnotation {
            token: normalize_token(fields[0]),
            t_on: num(fields[1])?,
            t_off: num(fields[2])?,
        });
    }
    validate_annotations(&words)?;
    Ok(words)
}

pub fn read_annotations(path: &Path) -> Result<Vec<WordAnnotation>, CorpusError> {
    parse_annotations_tsv(&std::fs::read_to_string(path)?)
}

pub const UNK: &str = "<unk>";
pub const UNK_ID: u32 = 0;

/// Decoder vocabulary. Id 0 is the unknown-word token; the remaining ids
/// are ordered by descending training count, then lexicographically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    min_count: u64,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const DEFAULT_MIN_COUNT: u64 = 2;

    /// Keeps tokens seen at least `min_count` times across `trials`.
    pub fn build<S: AsRef<str>>(trials: &[Vec<S>], min_count: u64) -> Result<Self, CorpusError> {
        if min_count < 1 {
            return Err(CorpusError::Config("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0usize;
        for trial in trials {
            for tok in trial {
                let t = normalize_token(tok.as_ref());
                if t.is_empty() {
                    continue;
                }
                *counts.entry(t).or_default() += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut kept: Vec<(String, u64)> = Vec::new();
        let mut unk = 0;
        for (t, c) in counts {
            if c >= min_count && t != UNK {
                kept.push((t, c));
            } else {
                unk += c;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![UNK.to_string()];
        let mut cnts = vec![unk];
        for (t, c) in kept {
            tokens.push(t);
            cnts.push(c);
        }
        Ok(Self::from_parts(tokens, cnts, min_count))
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>, min_count: u64) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            counts,
            min_count,
            index,
        }
    }

    /// Number of ids including the unknown token.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index
            .get(&normalize_token(token))
            .copied()
            .unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id(token) != UNK_ID
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        let v: Vocabulary = serde_json::from_str(s).map_err(|e| CorpusError::Format(e.to_string()))?;
        if v.tokens.len() != v.counts.len() || v.tokens.first().map(String::as_str) != Some(UNK) {
            return Err(CorpusError::Format("malformed vocabulary".into()));
        }
        Ok(Self::from_parts(v.tokens, v.counts, v.min_count))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_token("Holmes,"), "holmes");
        assert_eq!(normalize_token("\"Don't!\""), "don't");
        assert_eq!(normalize_token("..."), "");
    }

    #[test]
    fn min_count_filtering() {
        let v = Vocabulary::build(&[vec!["a", "a", "b"]], 2).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.token(1), "a");
        assert_eq!(v.id("b"), UNK_ID);
        assert_eq!(v.count(UNK_ID), 1);
        let all = Vocabulary::build(&[vec!["a", "a", "b"]], 1).unwrap();
        assert!(all.contains("a") && all.contains("b"));
        assert_eq!(Vocabulary::DEFAULT_MIN_COUNT, 2);
        assert!(matches!(
            Vocabulary::build::<&str>(&[vec![]], 2),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn annotation_tsv_round_trip_and_validation() {
        let words = vec![
            WordAnnotation::new("the", 0.5, 0.71),
            WordAnnotation::new("game", 0.8, 1.3333333333333333),
        ];
        let tsv = write_annotations_tsv(&words);
        assert_eq!(parse_annotations_tsv(&tsv).unwrap(), words);
        assert!(parse_annotations_tsv("a\t1.0\t0.5\n").is_err());
        assert!(parse_annotations_tsv("a\t0.0\t1.0\nb\t0.5\t2.0\n").is_err());
        assert!(parse_annotations_tsv("a\t0.0\n").is_err());
    }

    proptest! {
        #[test]
        fn vocabulary_json_round_trip(words in prop::collection::vec("[a-e]{1,3}", 1..60), mc in 1u64..3) {
            if let Ok(v) = Vocabulary::build(&[words], mc) {
                let back = Vocabulary::from_json(&v.to_json()).unwrap();
                prop_assert_eq!(back.to_json(), v.to_json());
                prop_assert_eq!(&back, &v);
            }
        }
    }
}
