//! Run configuration: every module's settings in one JSON document.

use std::path::Path;

use anyhow::Context as _;
use semdec_core::corpus::{DEFAULT_CONTEXT_LEN, DEFAULT_DECAY};
use semdec_core::cwer::{CwerConfig, SubjectMode, TrainConfig};
use semdec_core::decoder::DecoderConfig;
use semdec_core::eval::{PValueMode, DEFAULT_STRIDE_S, DEFAULT_WINDOW_S};
use semdec_core::ridge::RidgeConfig;
use semdec_core::sigproc::PreprocessConfig;
use semdec_core::synth::DatasetConfig;
use serde::{Deserialize, Serialize};

use crate::{Failure, Tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CwerSection {
    pub hidden1: usize,
    pub hidden2: usize,
    pub n_blocks: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub segment_s: f64,
    pub overlap: f64,
    /// Training trials per subject set aside for early stopping.
    pub heldout_trials: usize,
}

impl Default for CwerSection {
    fn default() -> Self {
        let base = CwerConfig::new(1, 2, 1);
        CwerSection {
            hidden1: base.hidden1,
            hidden2: base.hidden2,
            n_blocks: base.n_blocks,
            kernel: base.kernel,
            dropout: base.dropout,
            train: TrainConfig::default(),
            segment_s: 10.0,
            overlap: 0.8,
            heldout_trials: 1,
        }
    }
}

impl CwerSection {
    pub fn model_config(
        &self,
        channels: usize,
        embed_dim: usize,
        subjects: usize,
        mode: SubjectMode,
    ) -> CwerConfig {
        CwerConfig {
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            n_blocks: self.n_blocks,
            kernel: self.kernel,
            dropout: self.dropout,
            mode,
            ..CwerConfig::new(channels, embed_dim, subjects)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSection {
    pub search: DecoderConfig,
    pub nulls: usize,
    pub lm_order: usize,
    pub context_len: usize,
    pub decay: f64,
}

impl Default for DecoderSection {
    fn default() -> Self {
        DecoderSection {
            search: DecoderConfig::default(),
            nulls: 500,
            lm_order: 3,
            context_len: DEFAULT_CONTEXT_LEN,
            decay: DEFAULT_DECAY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub durations_s: Vec<f64>,
    pub window_s: f64,
    pub stride_s: f64,
    pub p_value: PValueMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            durations_s: vec![3.0, 5.0, 10.0],
            window_s: DEFAULT_WINDOW_S,
            stride_s: DEFAULT_STRIDE_S,
            p_value: PValueMode::AddOne,
        }
    }
}

/// All settings of a run. The global `seed` is copied into every module
/// seed when the config is resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: DatasetConfig,
    pub preprocess: PreprocessConfig,
    /// Neural data lags the stimulus by this much.
    pub shift_s: f64,
    pub cwer: CwerSection,
    pub ridge: RidgeConfig,
    pub decoder: DecoderSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: DatasetConfig::default(),
            preprocess: PreprocessConfig::default(),
            shift_s: 0.25,
            cwer: CwerSection::default(),
            ridge: RidgeConfig::default(),
            decoder: DecoderSection::default(),
            eval: EvalSection::default(),
        }
    }
}

fn bad(field: &str, reason: impl std::fmt::Display) -> anyhow::Error {
    anyhow::anyhow!("config field `{field}`: {reason}").context(Failure::Config)
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .tag(Failure::Config)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .tag(Failure::Config)
    }

    /// Propagates the global seed and checks every section.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        self.synth.forward.seed = self.seed;
        self.cwer.train.seed = self.seed;
        self.synth.validate().tag(Failure::Config)?;
        self.cwer.train.validate().tag(Failure::Config)?;
        self.cwer
            .model_config(1, 2, 1, SubjectMode::SubjectLayer)
            .validate()
            .tag(Failure::Config)?;
        self.ridge.validate().tag(Failure::Config)?;
        self.decoder.search.validate().tag(Failure::Config)?;
        if !(self.shift_s >= 0.0 && self.shift_s.is_finite()) {
            return Err(bad("shift_s", "must be finite and non-negative"));
        }
        if !(self.cwer.segment_s > 0.0) || !(0.0..1.0).contains(&self.cwer.overlap) {
            return Err(bad(
                "cwer.segment_s",
                "need segment_s > 0 and overlap in [0, 1)",
            ));
        }
        if self.decoder.nulls == 0 {
            return Err(bad("decoder.nulls", "must be at least 1"));
        }
        if self.decoder.lm_order < 1 || self.decoder.context_len < 1 {
            return Err(bad(
                "decoder.lm_order",
                "order and context_len must be at least 1",
            ));
        }
        if self.eval.durations_s.is_empty() || self.eval.durations_s.iter().any(|d| !(*d > 0.0)) {
            return Err(bad("eval.durations_s", "need positive durations"));
        }
        if !(self.eval.window_s > 0.0 && self.eval.stride_s > 0.0) {
            return Err(bad("eval.window_s", "window and stride must be positive"));
        }
        Ok(self)
    }
}
