//! Data flow shared by the subcommands: preprocessing and alignment of
//! trials, segment construction, model loading, and decoder inputs.

use std::path::Path;

use anyhow::Context as _;
use semdec_core::container::Container;
use semdec_core::corpus::{rasterize, NgramLm};
use semdec_core::cwer::{load_model, CwerModel, Segment, CHECKPOINT_KIND};
use semdec_core::decoder::{BuiltinEmbedder, TargetTransform};
use semdec_core::ridge::{RidgeModel, RIDGE_KIND};
use semdec_core::sigproc::{preprocess, segment_starts, shift_align, EmbeddingSeries, TimeSeries};
use semdec_core::synth::{sha256_hex, Dataset, Split, SynthTrial};

use crate::config::RunConfig;
use crate::{Failure, Tag};

/// A trial after preprocessing, rasterization and the response shift:
/// sample `t` of `x` is paired with stimulus sample `t` of `z`.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub name: String,
    pub subject: usize,
    pub index: usize,
    pub split: Split,
    pub duration_s: f64,
    pub ids: Vec<u32>,
    /// Word `(t_on, t_off)` in stimulus time.
    pub timings: Vec<(f64, f64)>,
    pub x: TimeSeries,
    pub z: EmbeddingSeries,
    /// Per-dimension statistics removed when standardizing `z`.
    pub z_mean: Vec<f64>,
    pub z_sd: Vec<f64>,
}

pub fn prepare_trial(trial: &SynthTrial, cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let name = trial.name();
    let (meg, _) =
        preprocess(&trial.meg, &cfg.preprocess).with_context(|| format!("preprocessing {name}"))?;
    let r = rasterize(
        &trial.words,
        &trial.vectors,
        meg.sample_rate(),
        meg.duration_s(),
    )
    .with_context(|| format!("rasterizing {name}"))?;
    let (x, z) =
        shift_align(&meg, &r.series, cfg.shift_s).with_context(|| format!("aligning {name}"))?;
    Ok(Prepared {
        subject: trial.subject,
        index: trial.index,
        split: trial.split,
        duration_s: trial.duration_s,
        ids: trial.ids.clone(),
        timings: trial.words.iter().map(|w| (w.t_on, w.t_off)).collect(),
        x,
        z,
        z_mean: r.mean,
        z_sd: r.sd,
        name,
    })
}

pub fn prepare(ds: &Dataset, cfg: &RunConfig, split: Split) -> anyhow::Result<Vec<Prepared>> {
    ds.split(split).map(|t| prepare_trial(t, cfg)).collect()
}

/// Training trials split into fitting and early-stopping sets: the last
/// `heldout` training trials of every subject are held out.
pub fn heldout_split(train: &[Prepared], heldout: usize) -> (Vec<&Prepared>, Vec<&Prepared>) {
    let mut fit = Vec::new();
    let mut held = Vec::new();
    let max_subject = train.iter().map(|p| p.subject).max().unwrap_or(0);
    for s in 0..=max_subject {
        let mine: Vec<&Prepared> = train.iter().filter(|p| p.subject == s).collect();
        let cut = mine.len().saturating_sub(heldout);
        fit.extend_from_slice(&mine[..cut]);
        held.extend_from_slice(&mine[cut..]);
    }
    (fit, held)
}

/// Fixed-length windows of aligned trials.
pub fn make_segments(
    trials: &[&Prepared],
    duration_s: f64,
    overlap: f64,
) -> anyhow::Result<Vec<Segment>> {
    let mut out = Vec::new();
    for p in trials {
        let (len, starts) = segment_starts(p.x.samples(), p.x.sample_rate(), duration_s, overlap)?;
        for s in starts {
            out.push(Segment {
                x: p.x.slice(s, s + len)?.into_tensor(),
                z: p.z.slice(s, s + len)?.into_tensor(),
                subject: p.subject,
            });
        }
    }
    Ok(out)
}

/// A trained reconstruction model of either family.
#[derive(Clone, Debug)]
pub enum Reconstructor {
    Cwer(CwerModel),
    Ridge(RidgeModel),
}

impl Reconstructor {
    /// Loads a checkpoint, dispatching on its kind tag. Returns the model
    /// and the SHA-256 of the file.
    pub fn load(path: &Path) -> anyhow::Result<(Self, String)> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading checkpoint {}", path.display()))?;
        let sha = sha256_hex(&bytes);
        let c = Container::from_bytes(&bytes, None)
            .with_context(|| format!("checkpoint {}", path.display()))?;
        let model = if &c.kind == CHECKPOINT_KIND {
            Reconstructor::Cwer(load_model(path, None)?)
        } else if &c.kind == RIDGE_KIND {
            Reconstructor::Ridge(RidgeModel::from_container(c)?)
        } else {
            anyhow::bail!(
                "checkpoint {} has unknown kind {:?}",
                path.display(),
                String::from_utf8_lossy(&c.kind)
            );
        };
        Ok((model, sha))
    }

    pub fn reconstruct(&self, x: &TimeSeries, subject: usize) -> anyhow::Result<EmbeddingSeries> {
        Ok(match self {
            Reconstructor::Cwer(m) => m.reconstruct(x, subject)?,
            Reconstructor::Ridge(m) => m.predict(x)?,
        })
    }
}

pub fn reconstruct_all(
    model: &Reconstructor,
    trials: &[Prepared],
) -> anyhow::Result<Vec<EmbeddingSeries>> {
    trials
        .iter()
        .map(|p| {
            model
                .reconstruct(&p.x, p.subject)
                .with_context(|| format!("reconstructing {}", p.name))
        })
        .collect()
}

/// Language model over the training transcripts.
pub fn train_lm(ds: &Dataset, order: usize) -> anyhow::Result<NgramLm> {
    let texts: Vec<Vec<u32>> = ds.split(Split::Train).map(|t| t.ids.clone()).collect();
    NgramLm::train(&texts, order, ds.vocab.len()).tag(Failure::Data)
}

/// Candidate embedder whose outputs are put on the scale of the
/// standardized training targets.
pub fn make_embedder(ds: &Dataset, train: &[Prepared], cfg: &RunConfig) -> BuiltinEmbedder {
    let stats: Vec<(Vec<f64>, Vec<f64>)> = train
        .iter()
        .map(|p| (p.z_mean.clone(), p.z_sd.clone()))
        .collect();
    BuiltinEmbedder::new(
        ds.table.clone(),
        cfg.decoder.context_len,
        cfg.decoder.decay,
        TargetTransform::average(&stats),
    )
}

/// Seed of a trial's null sequences.
pub fn null_seed(seed: u64, subject: usize, index: usize) -> u64 {
    seed ^ ((subject as u64) << 32 | index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[cfg(test)]
mod tests {
    use super::*;
    use semdec_core::synth::{generate_dataset, DatasetConfig};

    fn small() -> (Dataset, RunConfig) {
        let mut cfg = RunConfig::default();
        cfg.synth = DatasetConfig {
            trials_per_subject: 4,
            words_per_trial: 30,
            vocab_size: 40,
            ..DatasetConfig::default()
        };
        cfg.synth.forward.subjects = 2;
        cfg.synth.forward.channels = 8;
        cfg.synth.forward.embed_dim = 4;
        let cfg = cfg.resolve().unwrap();
        (generate_dataset(&cfg.synth).unwrap(), cfg)
    }

    #[test]
    fn prepared_trials_are_aligned() {
        let (ds, cfg) = small();
        let train = prepare(&ds, &cfg, Split::Train).unwrap();
        assert_eq!(train.len(), 2 * 3);
        for p in &train {
            assert_eq!(p.x.samples(), p.z.samples());
            let full = (p.duration_s * 40.0).round() as usize;
            assert_eq!(
                p.x.samples(),
                full - 10,
                "0.25 s shift at 40 Hz drops 10 samples"
            );
            assert_eq!(p.timings.len(), 30);
        }
    }

    #[test]
    fn heldout_takes_last_trials_per_subject() {
        let (ds, cfg) = small();
        let train = prepare(&ds, &cfg, Split::Train).unwrap();
        let (fit, held) = heldout_split(&train, 1);
        assert_eq!(fit.len(), 4);
        let held: Vec<(usize, usize)> = held.iter().map(|p| (p.subject, p.index)).collect();
        assert_eq!(held, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn segments_tile_trials() {
        let (ds, cfg) = small();
        let train = prepare(&ds, &cfg, Split::Train).unwrap();
        let refs: Vec<&Prepared> = train.iter().collect();
        let segs = make_segments(&refs, 2.0, 0.5).unwrap();
        let expected: usize = train.iter().map(|p| (p.x.samples() - 80) / 40 + 1).sum();
        assert_eq!(segs.len(), expected);
        assert!(segs
            .iter()
            .all(|s| s.x.shape() == [8, 80] && s.z.shape() == [4, 80]));
    }

    #[test]
    fn null_seeds_differ_per_trial() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..3 {
            for i in 0..20 {
                assert!(seen.insert(null_seed(7, s, i)));
            }
        }
    }
}
