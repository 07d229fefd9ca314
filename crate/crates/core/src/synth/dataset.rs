use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{config_err, gen_text, stream_rng, ForwardModel, ForwardModelConfig, SourceGrammar, SynthError, STREAM_TEXT};
use crate::corpus::{
    build_static_embeddings, contextual_vectors, embeddings_to_nts, import_embeddings, parse_annotations_tsv,
    rasterize_raw, write_annotations_tsv, EmbeddingTable, StaticConfig, Vocabulary, WordAnnotation,
    DEFAULT_CONTEXT_LEN, DEFAULT_DECAY,
};
use crate::numcore::Tensor;
use crate::sigproc::TimeSeries;

pub const MANIFEST_FILE: &str = "dataset.json";
/// Recording continues this long after the last word so delayed responses
/// to it are captured.
pub const TAIL_S: f64 = 0.5;
const FORMAT: &str = "semdec-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub forward: ForwardModelConfig,
    pub trials_per_subject: usize,
    pub words_per_trial: usize,
    pub test_fraction: f64,
    pub vocab_size: usize,
    pub min_successors: usize,
    pub max_successors: usize,
    pub context_len: usize,
    pub decay: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            forward: ForwardModelConfig::default(),
            trials_per_subject: 20,
            words_per_trial: 100,
            test_fraction: 0.2,
            vocab_size: 300,
            min_successors: 2,
            max_successors: 5,
            context_len: DEFAULT_CONTEXT_LEN,
            decay: DEFAULT_DECAY,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.forward.validate()?;
        if self.trials_per_subject < 2 {
            return Err(config_err("trials_per_subject", "need at least 2 trials to split"));
        }
        if self.words_per_trial < 1 {
            return Err(config_err("words_per_trial", "must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(config_err("test_fraction", format!("{} outside (0, 1)", self.test_fraction)));
        }
        if self.context_len < 1 {
            return Err(config_err("context_len", "must be at least 1"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(config_err("decay", format!("{} outside (0, 1]", self.decay)));
        }
        Ok(())
    }

    /// Trials per subject held out for testing: the last ones, at least one.
    pub fn test_trials(&self) -> usize {
        let n = (self.trials_per_subject as f64 * self.test_fraction).round() as usize;
        n.clamp(1, self.trials_per_subject - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTrial {
    pub subject: usize,
    pub index: usize,
    pub split: Split,
    pub duration_s: f64,
    pub words: Vec<WordAnnotation>,
    pub ids: Vec<u32>,
    /// `[W, D]` contextual embedding of each word.
    pub vectors: Tensor<f32>,
    pub meg: TimeSeries,
}

impl SynthTrial {
    pub fn name(&self) -> String {
        format!("s{}_t{:03}", self.subject, self.index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    pub trials: Vec<SynthTrial>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SynthTrial> {
        self.trials.iter().filter(move |t| t.split == split)
    }
}

/// Builds every trial in memory. Deterministic in the config.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let fw = &cfg.forward;
    let grammar = SourceGrammar::random(cfg.vocab_size, cfg.min_successors, cfg.max_successors, fw.seed)?;
    let n_test = cfg.test_trials();
    let mut texts = Vec::new();
    for s in 0..fw.subjects {
        for t in 0..cfg.trials_per_subject {
            let mut rng = stream_rng(fw.seed, STREAM_TEXT, s, t);
            texts.push((s, t, gen_text(&grammar, cfg.words_per_trial, &mut rng)));
        }
    }
    let tokens: Vec<Vec<&str>> = texts
        .iter()
        .map(|(_, _, w)| w.iter().map(|a| a.token.as_str()).collect())
        .collect();
    let vocab = Vocabulary::build(&tokens, 1)?;
    let id_seqs: Vec<Vec<u32>> = tokens.iter().map(|t| vocab.encode(t)).collect();
    let table = build_static_embeddings(
        &id_seqs,
        vocab.len(),
        StaticConfig {
            dim: fw.embed_dim,
            seed: fw.seed,
        },
    )?;
    let model = ForwardModel::new(fw)?;
    let mut trials = Vec::with_capacity(texts.len());
    for ((s, t, words), ids) in texts.into_iter().zip(id_seqs) {
        let duration_s = words.last().map_or(0.0, |w| w.t_off) + TAIL_S;
        let vectors = contextual_vectors(&table, &ids, cfg.context_len, cfg.decay);
        let raw = rasterize_raw(&words, &vectors, fw.sample_rate, duration_s)?;
        let meg = model.simulate(&raw, s, t)?;
        trials.push(SynthTrial {
            subject: s,
            index: t,
            split: if t >= cfg.trials_per_subject - n_test { Split::Test } else { Split::Train },
            duration_s,
            words,
            ids,
            vectors,
            meg,
        });
    }
    Ok(Dataset {
        config: cfg.clone(),
        vocab,
        table,
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub subject: usize,
    pub index: usize,
    pub split: Split,
    pub duration_s: f64,
    pub words: FileEntry,
    pub embeddings: FileEntry,
    pub meg: FileEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: DatasetConfig,
    pub vocab: FileEntry,
    pub static_embeddings: FileEntry,
    pub trials: Vec<TrialEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn put(dir: &Path, rel: String, bytes: &[u8]) -> Result<FileEntry, SynthError> {
    let path = dir.join(&rel);
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(&path, bytes)?;
    Ok(FileEntry {
        path: rel,
        sha256: sha256_hex(bytes),
    })
}

/// Writes signals, annotations, embeddings and the manifest under `dir`
/// (created if missing). Returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf, SynthError> {
    std::fs::create_dir_all(dir)?;
    let vocab = put(dir, "vocab.json".into(), ds.vocab.to_json().as_bytes())?;
    let static_embeddings = put(dir, "embeddings.nts".into(), &embeddings_to_nts(ds.table.tensor()).to_bytes())?;
    let mut trials = Vec::with_capacity(ds.trials.len());
    for t in &ds.trials {
        let name = t.name();
        trials.push(TrialEntry {
            subject: t.subject,
            index: t.index,
            split: t.split,
            duration_s: t.duration_s,
            words: put(dir, format!("trials/{name}.words.tsv"), write_annotations_tsv(&t.words).as_bytes())?,
            embeddings: put(dir, format!("trials/{name}.emb.nts"), &embeddings_to_nts(&t.vectors).to_bytes())?,
            meg: put(dir, format!("trials/{name}.meg.nts"), &t.meg.to_nts().to_bytes())?,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        config: ds.config.clone(),
        vocab,
        static_embeddings,
        trials,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::Format(e.to_string()))?;
    json.push('\n');
    std::fs::write(&path, json)?;
    Ok(path)
}

fn verified(dir: &Path, entry: &FileEntry) -> Result<(PathBuf, Vec<u8>), SynthError> {
    let path = dir.join(&entry.path);
    let bytes = std::fs::read(&path)?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(SynthError::Checksum(entry.path.clone()));
    }
    Ok((path, bytes))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, SynthError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| SynthError::Format(format!("{MANIFEST_FILE}: {e}")))?;
    if m.format != FORMAT {
        return Err(SynthError::Format(format!("unsupported dataset format {:?}", m.format)));
    }
    Ok(m)
}

/// Reads a dataset written by [`write_dataset`], verifying every checksum.
pub fn load_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let m = read_manifest(dir)?;
    let (_, vb) = verified(dir, &m.vocab)?;
    let vocab = Vocabulary::from_json(
        std::str::from_utf8(&vb).map_err(|e| SynthError::Format(format!("vocab.json: {e}")))?,
    )?;
    let dim = m.config.forward.embed_dim;
    let (tp, _) = verified(dir, &m.static_embeddings)?;
    let table = EmbeddingTable::from_tensor(import_embeddings(&tp, dim, vocab.len())?)?;
    let mut trials = Vec::with_capacity(m.trials.len());
    for e in &m.trials {
        let (_, wb) = verified(dir, &e.words)?;
        let words = parse_annotations_tsv(
            std::str::from_utf8(&wb).map_err(|err| SynthError::Format(format!("{}: {err}", e.words.path)))?,
        )?;
        let (ep, _) = verified(dir, &e.embeddings)?;
        let vectors = import_embeddings(&ep, dim, words.len())?;
        let (mp, _) = verified(dir, &e.meg)?;
        let meg = TimeSeries::read_nts(&mp)?;
        if meg.channels() != m.config.forward.channels {
            return Err(SynthError::Format(format!(
                "{}: {} channels, manifest says {}",
                e.meg.path,
                meg.channels(),
                m.config.forward.channels
            )));
        }
        let toks: Vec<&str> = words.iter().map(|w| w.token.as_str()).collect();
        trials.push(SynthTrial {
            subject: e.subject,
            index: e.index,
            split: e.split,
            duration_s: e.duration_s,
            ids: vocab.encode(&toks),
            words,
            vectors,
            meg,
        });
    }
    Ok(Dataset {
        config: m.config,
        vocab,
        table,
        trials,
    })
}
