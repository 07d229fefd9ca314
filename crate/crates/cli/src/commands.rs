//! Subcommands. Every run writes a resolved snapshot `{command, config}`
//! next to its output; `replay` re-runs a snapshot unchanged.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use semdec_core::cwer::{save_model, train, CwerError, SubjectMode, TrainReport};
use semdec_core::decoder::{
    decode_trial, generate_null_sequences, parse_decoded_tsv, write_decoded_tsv, Decoded, Proposer,
};
use semdec_core::eval::{
    evaluate_sequences, export_window_scores, import_window_scores, render_retrieval_text,
    render_score_svg, render_sequence_text, retrieval_by_duration, BuiltinScorer, DurationResult,
    PValueMode, SequenceReport, TrialInput, WindowScores, SIGNIFICANCE_LEVEL,
};
use semdec_core::ridge::{CvReport, RidgeModel, RidgeTrial};
use semdec_core::synth::{
    generate_dataset, load_dataset, sha256_hex, write_dataset, Dataset, FileEntry, Nonlinearity,
    Split, MANIFEST_FILE,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::pipeline::{
    heldout_split, make_embedder, make_segments, null_seed, prepare, reconstruct_all, train_lm,
    Reconstructor,
};
use crate::{Failure, Tag};

/// Parses a snake_case enum value through its serde representation.
fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "semdec",
    version,
    about = "Decode text from neural recordings via embedding reconstruction"
)]
pub struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed, copied into every module seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker cap. Computation is sequential, so results never depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Write preprocessed, aligned signals and targets of every trial.
    Preprocess(PreprocessArgs),
    /// Train a reconstruction model.
    Train(TrainArgs),
    /// Segment retrieval on the test trials.
    EvalSegments(EvalSegmentsArgs),
    /// Decode the test trials and their null sequences.
    Decode(DecodeArgs),
    /// Window and trial significance of decoded text.
    EvalSequence(EvalSequenceArgs),
    /// Re-run a resolved snapshot.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, value_parser = serde_enum::<Nonlinearity>)]
    pub nonlinearity: Option<Nonlinearity>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub words: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Cwer,
    CwerNosubject,
    CwerPersubject,
    Ridge,
}

impl ModelKind {
    fn subject_mode(self) -> Option<SubjectMode> {
        match self {
            ModelKind::Cwer => Some(SubjectMode::SubjectLayer),
            ModelKind::CwerNosubject => Some(SubjectMode::NoSubjectLayer),
            ModelKind::CwerPersubject => Some(SubjectMode::PerSubjectModel),
            ModelKind::Ridge => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Cwer)]
    pub model: ModelKind,
    /// Checkpoint path; the report goes to `<out>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalSegmentsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Use the true targets as the reconstruction.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, value_delimiter = ',')]
    pub durations: Option<Vec<f64>>,
    /// JSON report; a text table goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub nulls: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub top_r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalSequenceArgs {
    #[arg(long)]
    pub decoded: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for one score-vs-time SVG per trial.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Window scores from an external scorer, replacing the builtin one.
    #[arg(long)]
    pub import_scores: Option<PathBuf>,
    #[arg(long)]
    pub export_scores: Option<PathBuf>,
    #[arg(long, value_parser = serde_enum::<PValueMode>)]
    pub p_value: Option<PValueMode>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub snapshot: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub command: Command,
    pub config: RunConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Train(_) => "train",
            Command::EvalSegments(_) => "eval-segments",
            Command::Decode(_) => "decode",
            Command::EvalSequence(_) => "eval-sequence",
            Command::Replay(_) => "replay",
        }
    }

    /// Applies the command's flags to the config. Idempotent, so a
    /// snapshot's config replays to itself.
    fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        match self {
            Command::Synth(a) => {
                let f = &mut cfg.synth.forward;
                set(&mut f.subjects, &a.subjects);
                set(&mut f.alpha, &a.alpha);
                set(&mut f.snr_db, &a.snr_db);
                set(&mut f.nonlinearity, &a.nonlinearity);
                set(&mut cfg.synth.trials_per_subject, &a.trials);
                set(&mut cfg.synth.words_per_trial, &a.words);
            }
            Command::Train(a) => {
                let t = &mut cfg.cwer.train;
                set(&mut t.lr, &a.lr);
                set(&mut t.max_epochs, &a.epochs);
                set(&mut t.batch, &a.batch);
            }
            Command::EvalSegments(a) => set(&mut cfg.eval.durations_s, &a.durations),
            Command::Decode(a) => {
                set(&mut cfg.decoder.nulls, &a.nulls);
                set(&mut cfg.decoder.search.beam, &a.beam);
                set(&mut cfg.decoder.search.top_p, &a.top_p);
                set(&mut cfg.decoder.search.top_r, &a.top_r);
            }
            Command::EvalSequence(a) => set(&mut cfg.eval.p_value, &a.p_value),
            Command::Preprocess(_) | Command::Replay(_) => {}
        }
    }

    /// Where the snapshot goes: inside directory outputs, next to files.
    fn snapshot_path(&self) -> Option<PathBuf> {
        match self {
            Command::Synth(SynthArgs { out, .. })
            | Command::Preprocess(PreprocessArgs { out, .. })
            | Command::Decode(DecodeArgs { out, .. }) => {
                Some(out.join(format!("{}.config.json", self.name())))
            }
            Command::Train(TrainArgs { out, .. })
            | Command::EvalSegments(EvalSegmentsArgs { out, .. })
            | Command::EvalSequence(EvalSequenceArgs { out, .. }) => {
                Some(with_suffix(out, ".config.json"))
            }
            Command::Replay(_) => None,
        }
    }
}

/// `report.json` + `.txt` → `report.txt`; other names get the suffix appended.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = match path.extension() {
        Some(e) if e == "json" => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut s = stem.into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads == 0 {
        return Err(anyhow::anyhow!("--threads must be at least 1")).tag(Failure::Config);
    }
    if let Command::Replay(a) = &cli.command {
        let text = fs::read_to_string(&a.snapshot)
            .with_context(|| format!("reading snapshot {}", a.snapshot.display()))
            .tag(Failure::Config)?;
        let snap: Snapshot = serde_json::from_str(&text)
            .with_context(|| format!("parsing snapshot {}", a.snapshot.display()))
            .tag(Failure::Config)?;
        if matches!(snap.command, Command::Replay(_)) {
            return Err(anyhow::anyhow!("a snapshot cannot replay another snapshot"))
                .tag(Failure::Config);
        }
        return execute(snap.command, snap.config);
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    execute(cli.command, cfg)
}

/// Resolves the config, writes the snapshot and runs the command.
pub fn execute(command: Command, mut cfg: RunConfig) -> anyhow::Result<()> {
    command.apply(&mut cfg);
    let cfg = cfg.resolve()?;
    let snapshot = Snapshot {
        command,
        config: cfg,
    };
    if let Some(path) = snapshot.command.snapshot_path() {
        write_json(&path, &snapshot)?;
    }
    let cfg = &snapshot.config;
    match &snapshot.command {
        Command::Synth(a) => cmd_synth(a, cfg),
        Command::Preprocess(a) => cmd_preprocess(a, cfg),
        Command::Train(a) => cmd_train(a, cfg),
        Command::EvalSegments(a) => cmd_eval_segments(a, cfg).map(|_| ()),
        Command::Decode(a) => cmd_decode(a, cfg),
        Command::EvalSequence(a) => cmd_eval_sequence(a, cfg).map(|_| ()),
        Command::Replay(_) => unreachable!("replay is handled before resolution"),
    }
}

fn open_dataset(dir: &Path) -> anyhow::Result<(Dataset, String)> {
    let ds = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    Ok((ds, sha256_hex(&bytes)))
}

fn cmd_synth(a: &SynthArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let ds = generate_dataset(&cfg.synth).tag(Failure::Config)?;
    let manifest = write_dataset(&ds, &a.out)
        .with_context(|| format!("writing dataset to {}", a.out.display()))?;
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct PreprocessEntry {
    name: String,
    subject: usize,
    index: usize,
    split: Split,
    signal: FileEntry,
    target: FileEntry,
}

#[derive(Serialize)]
struct PreprocessManifest {
    dataset_sha256: String,
    trials: Vec<PreprocessEntry>,
}

fn nts_entry(dir: &Path, name: String, bytes: Vec<u8>) -> anyhow::Result<FileEntry> {
    let path = dir.join(&name);
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(FileEntry {
        path: name,
        sha256: sha256_hex(&bytes),
    })
}

fn cmd_preprocess(a: &PreprocessArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (ds, ds_sha) = open_dataset(&a.dataset)?;
    fs::create_dir_all(&a.out)?;
    let mut trials = Vec::new();
    for split in [Split::Train, Split::Test] {
        for p in prepare(&ds, cfg, split)? {
            trials.push(PreprocessEntry {
                signal: nts_entry(
                    &a.out,
                    format!("{}.signal.nts", p.name),
                    p.x.to_nts().to_bytes(),
                )?,
                target: nts_entry(
                    &a.out,
                    format!("{}.target.nts", p.name),
                    p.z.to_nts().to_bytes(),
                )?,
                name: p.name,
                subject: p.subject,
                index: p.index,
                split: p.split,
            });
        }
    }
    let path = a.out.join("preprocess.json");
    write_json(
        &path,
        &PreprocessManifest {
            dataset_sha256: ds_sha,
            trials,
        },
    )?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fit {
    Cwer(TrainReport),
    Ridge(CvReport),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: ModelKind,
    pub dataset_sha256: String,
    pub checkpoint_sha256: String,
    pub fit: Fit,
}

fn cwer_failure(e: &CwerError) -> Failure {
    match e {
        CwerError::Diverged { .. } => Failure::Training,
        CwerError::Config(_) => Failure::Config,
        _ => Failure::Data,
    }
}

fn cmd_train(a: &TrainArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (ds, ds_sha) = open_dataset(&a.dataset)?;
    let trials = prepare(&ds, cfg, Split::Train)?;
    let fcfg = &cfg.synth.forward;
    let (channels, dim) = (trials[0].x.channels(), trials[0].z.channels());
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let fit = match a.model.subject_mode() {
        Some(mode) => {
            let (fit_trials, held_trials) = heldout_split(&trials, cfg.cwer.heldout_trials);
            let train_segs = make_segments(&fit_trials, cfg.cwer.segment_s, cfg.cwer.overlap)?;
            let held_segs = make_segments(&held_trials, cfg.cwer.segment_s, 0.0)?;
            log::info!(
                "{} training and {} held-out segments",
                train_segs.len(),
                held_segs.len()
            );
            let mcfg = cfg.cwer.model_config(channels, dim, fcfg.subjects, mode);
            let (model, report) =
                train(&mcfg, &train_segs, &held_segs, &cfg.cwer.train).map_err(|e| {
                    let f = cwer_failure(&e);
                    anyhow::Error::new(e).context(f)
                })?;
            save_model(&model, &a.out)?;
            Fit::Cwer(report)
        }
        None => {
            let rt: Vec<RidgeTrial> = trials
                .iter()
                .map(|p| RidgeTrial {
                    x: p.x.tensor(),
                    z: p.z.tensor(),
                })
                .collect();
            let (model, cv) = RidgeModel::fit_cv(&rt, &cfg.ridge)?;
            log::info!("ridge: best lambda {}", cv.best_lambda);
            model.save(&a.out)?;
            Fit::Ridge(cv)
        }
    };
    let summary = TrainSummary {
        model: a.model,
        dataset_sha256: ds_sha,
        checkpoint_sha256: sha256_hex(&fs::read(&a.out)?),
        fit,
    };
    write_json(&with_suffix(&a.out, ".report.json"), &summary)?;
    println!("{}", a.out.display());
    Ok(())
}

/// Segment retrieval on the test trials; returns the rows of the report.
pub fn cmd_eval_segments(
    a: &EvalSegmentsArgs,
    cfg: &RunConfig,
) -> anyhow::Result<Vec<DurationResult>> {
    let (ds, _) = open_dataset(&a.dataset)?;
    let test = prepare(&ds, cfg, Split::Test)?;
    let truth: Vec<_> = test.iter().map(|p| p.z.clone()).collect();
    let recon = match (&a.checkpoint, a.oracle) {
        (_, true) => truth.clone(),
        (Some(ck), false) => reconstruct_all(&Reconstructor::load(ck)?.0, &test)?,
        (None, false) => {
            return Err(anyhow::anyhow!("--checkpoint is required without --oracle"))
                .tag(Failure::Config)
        }
    };
    let rows = retrieval_by_duration(&recon, &truth, &cfg.eval.durations_s)?;
    write_json(&a.out, &rows)?;
    let text = render_retrieval_text(&rows);
    write_text(&with_suffix(&a.out, ".txt"), &text)?;
    print!("{text}");
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodedTrialEntry {
    pub name: String,
    pub subject: usize,
    pub index: usize,
    pub duration_s: f64,
    pub null_seed: u64,
    pub fallback_steps: Vec<usize>,
    pub decoded: FileEntry,
    pub nulls: FileEntry,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodeManifest {
    pub format: String,
    pub dataset_sha256: String,
    pub checkpoint_sha256: String,
    pub trials: Vec<DecodedTrialEntry>,
}

const DECODE_FORMAT: &str = "semdec-decoded/1";
pub const DECODE_MANIFEST: &str = "decoded.json";

/// Null sequences as TSV rows `null  token  t_on  t_off  score`.
fn write_nulls_tsv(nulls: &[Decoded], timings: &[(f64, f64)], ds: &Dataset) -> String {
    let mut out = String::new();
    for (i, n) in nulls.iter().enumerate() {
        for line in write_decoded_tsv(n, timings, &ds.vocab).lines() {
            let _ = writeln!(out, "{i}\t{line}");
        }
    }
    out
}

fn parse_nulls_tsv(text: &str) -> anyhow::Result<Vec<Vec<(String, f64)>>> {
    let mut out: Vec<Vec<(String, f64)>> = Vec::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let (idx, rest) = line
            .split_once('\t')
            .with_context(|| format!("null TSV line {}: no index column", n + 1))?;
        let idx: usize = idx
            .parse()
            .with_context(|| format!("null TSV line {}: bad index {idx:?}", n + 1))?;
        if idx != out.len() && idx + 1 != out.len() {
            anyhow::bail!("null TSV line {}: index {idx} out of order", n + 1);
        }
        if idx == out.len() {
            out.push(Vec::new());
        }
        let (words, _) =
            parse_decoded_tsv(rest).with_context(|| format!("null TSV line {}", n + 1))?;
        out[idx].extend(words.into_iter().map(|w| (w.token, w.t_on)));
    }
    Ok(out)
}

fn cmd_decode(a: &DecodeArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let (ds, ds_sha) = open_dataset(&a.dataset)?;
    let (model, ck_sha) = Reconstructor::load(&a.checkpoint)?;
    let train_trials = prepare(&ds, cfg, Split::Train)?;
    let test = prepare(&ds, cfg, Split::Test)?;
    let lm = train_lm(&ds, cfg.decoder.lm_order)?;
    let embedder = make_embedder(&ds, &train_trials, cfg);
    let search = &cfg.decoder.search;
    let mut proposer = Proposer::new(&lm, search).tag(Failure::Config)?;
    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    for p in &test {
        let zhat = model.reconstruct(&p.x, p.subject)?;
        let decoded = decode_trial(&zhat, &p.timings, &lm, &embedder, search)
            .with_context(|| format!("decoding {}", p.name))?;
        let seed = null_seed(cfg.seed, p.subject, p.index);
        let nulls = generate_null_sequences(&p.timings, &mut proposer, cfg.decoder.nulls, seed)?;
        log::info!(
            "{}: decoded {} words, {} nulls",
            p.name,
            decoded.words.len(),
            nulls.len()
        );
        let dec_text = write_decoded_tsv(&decoded, &p.timings, &ds.vocab);
        let null_text = write_nulls_tsv(&nulls, &p.timings, &ds);
        entries.push(DecodedTrialEntry {
            decoded: nts_entry(&a.out, format!("{}.tsv", p.name), dec_text.into_bytes())?,
            nulls: nts_entry(
                &a.out,
                format!("{}.nulls.tsv", p.name),
                null_text.into_bytes(),
            )?,
            name: p.name.clone(),
            subject: p.subject,
            index: p.index,
            duration_s: p.duration_s,
            null_seed: seed,
            fallback_steps: decoded.fallback_steps,
        });
    }
    let manifest = DecodeManifest {
        format: DECODE_FORMAT.into(),
        dataset_sha256: ds_sha,
        checkpoint_sha256: ck_sha,
        trials: entries,
    };
    let path = a.out.join(DECODE_MANIFEST);
    write_json(&path, &manifest)?;
    println!("{}", path.display());
    Ok(())
}

fn read_checked(dir: &Path, entry: &FileEntry) -> anyhow::Result<String> {
    let path = dir.join(&entry.path);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    if sha256_hex(&bytes) != entry.sha256 {
        anyhow::bail!("checksum mismatch for {}", path.display());
    }
    String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
}

/// Reads a decode directory into scorer inputs, checking every checksum.
pub fn load_decoded(dir: &Path, ds: &Dataset) -> anyhow::Result<Vec<TrialInput>> {
    let path = dir.join(DECODE_MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: DecodeManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if manifest.format != DECODE_FORMAT {
        anyhow::bail!(
            "{}: unsupported format {:?}",
            path.display(),
            manifest.format
        );
    }
    let ids = |words: Vec<(String, f64)>| -> Vec<(u32, f64)> {
        words
            .into_iter()
            .map(|(t, on)| (ds.vocab.id(&t), on))
            .collect()
    };
    manifest
        .trials
        .iter()
        .map(|e| {
            let trial = ds
                .trials
                .iter()
                .find(|t| t.subject == e.subject && t.index == e.index)
                .with_context(|| format!("decoded trial {} is not in the dataset", e.name))?;
            let (words, _) = parse_decoded_tsv(&read_checked(dir, &e.decoded)?)
                .with_context(|| e.name.clone())?;
            let nulls =
                parse_nulls_tsv(&read_checked(dir, &e.nulls)?).with_context(|| e.name.clone())?;
            Ok(TrialInput {
                id: e.name.clone(),
                trial_len_s: trial.duration_s,
                truth: trial
                    .ids
                    .iter()
                    .zip(&trial.words)
                    .map(|(&i, w)| (i, w.t_on))
                    .collect(),
                decoded: ids(words.into_iter().map(|w| (w.token, w.t_on)).collect()),
                nulls: nulls.into_iter().map(ids).collect(),
            })
        })
        .collect()
}

pub fn cmd_eval_sequence(a: &EvalSequenceArgs, cfg: &RunConfig) -> anyhow::Result<SequenceReport> {
    let (ds, _) = open_dataset(&a.dataset)?;
    let trials = load_decoded(&a.decoded, &ds)?;
    let (window, stride) = (cfg.eval.window_s, cfg.eval.stride_s);
    let (scores, source) = match &a.import_scores {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let name = p
                .file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            (
                import_window_scores(&text, stride)?,
                format!("imported:{name}"),
            )
        }
        None => {
            let scorer = BuiltinScorer { table: &ds.table };
            (
                WindowScores::compute(&trials, &scorer, window, stride)?,
                "builtin".to_owned(),
            )
        }
    };
    if let Some(p) = &a.export_scores {
        write_text(p, &export_window_scores(&scores, stride))?;
    }
    let report = evaluate_sequences(&trials, &scores, &source, cfg.eval.p_value, window, stride)?;
    write_json(&a.out, &report)?;
    let text = render_sequence_text(&report);
    write_text(&with_suffix(&a.out, ".txt"), &text)?;
    if let Some(dir) = &a.plot {
        fs::create_dir_all(dir)?;
        for t in &report.trials {
            write_text(
                &dir.join(format!("{}.svg", t.id)),
                &render_score_svg(t, stride, SIGNIFICANCE_LEVEL),
            )?;
        }
    }
    print!("{text}");
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_paths() {
        assert_eq!(
            with_suffix(Path::new("out/r.json"), ".txt"),
            PathBuf::from("out/r.txt")
        );
        assert_eq!(
            with_suffix(Path::new("model.ckpt"), ".report.json"),
            PathBuf::from("model.ckpt.report.json")
        );
    }

    #[test]
    fn overrides_are_idempotent() {
        let cmd = Command::Synth(SynthArgs {
            out: "d".into(),
            subjects: Some(2),
            alpha: Some(0.25),
            snr_db: None,
            nonlinearity: Some(Nonlinearity::Tanh),
            trials: None,
            words: Some(40),
        });
        let mut once = RunConfig::default();
        cmd.apply(&mut once);
        let mut twice = once.clone();
        cmd.apply(&mut twice);
        assert_eq!(once, twice);
        assert_eq!(once.synth.forward.alpha, 0.25);
        assert_eq!(once.synth.words_per_trial, 40);
    }

    #[test]
    fn nulls_tsv_round_trip() {
        let text = "0\ta\t0\t0.5\t0.1\n0\tb\t0.6\t1\t0.2\n1\tc\t0\t0.5\t0.3\n1\ta\t0.6\t1\t0\n";
        let nulls = parse_nulls_tsv(text).unwrap();
        assert_eq!(nulls.len(), 2);
        assert_eq!(nulls[1], vec![("c".to_owned(), 0.0), ("a".to_owned(), 0.6)]);
        assert!(parse_nulls_tsv("1\ta\t0\t0.5\t0.1\n").is_err());
        assert!(parse_nulls_tsv("x\ta\t0\t0.5\t0.1\n").is_err());
    }

    #[test]
    fn enum_flags_parse_through_serde() {
        assert_eq!(serde_enum::<Nonlinearity>("tanh"), Ok(Nonlinearity::Tanh));
        assert_eq!(serde_enum::<PValueMode>("raw"), Ok(PValueMode::Raw));
        assert!(serde_enum::<PValueMode>("exact").is_err());
    }

    #[test]
    fn cli_shape_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
