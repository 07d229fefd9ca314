//! Continuous word embedding reconstruction: a convolutional network that
//! maps multichannel neural segments to embedding series, trained with a
//! contrastive objective against negative segments.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{load_model, save_model, CHECKPOINT_KIND};
pub use model::{
    forward_eval, forward_with, param_shapes, BlockParams, CwerConfig, CwerNet, DropoutCtx, Eager,
    Exec, SubjectMode,
};
pub use train::{
    heldout_loss, sample_loss_grad, sample_negatives, train, NetHistory, Segment, TrainConfig,
    TrainReport,
};

use rand::Rng;
use thiserror::Error;

use crate::numcore::{NumError, Tensor};
use crate::sigproc::{EmbeddingSeries, SigError, TimeSeries};

pub type CwerParams = CwerNet<Tensor<f32>>;

#[derive(Debug, Error)]
pub enum CwerError {
    #[error("config: {0}")]
    Config(String),
    #[error("input has {found} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("subject {subject} out of range for {n_subjects} subjects")]
    UnknownSubject { subject: usize, n_subjects: usize },
    #[error("need at least {needed} training segments, have {found}")]
    TooFewSegments { needed: usize, found: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint config mismatch: expected {expected}, found {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Signal(#[from] SigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trained model: one network, or one per subject in per-subject mode.
#[derive(Clone, Debug, PartialEq)]
pub struct CwerModel {
    pub config: CwerConfig,
    pub nets: Vec<CwerParams>,
}

impl CwerModel {
    pub fn init<R: Rng + ?Sized>(config: CwerConfig, rng: &mut R) -> Result<Self, CwerError> {
        config.validate()?;
        let nets = (0..config.n_nets()).map(|_| CwerNet::init(&config, rng)).collect();
        Ok(CwerModel { config, nets })
    }

    /// The network serving `subject` and the subject index it expects.
    pub fn net_for(&self, subject: usize) -> Result<&CwerParams, CwerError> {
        if subject >= self.config.n_subjects {
            return Err(CwerError::UnknownSubject {
                subject,
                n_subjects: self.config.n_subjects,
            });
        }
        Ok(match self.config.mode {
            SubjectMode::PerSubjectModel => &self.nets[subject],
            _ => &self.nets[0],
        })
    }

    fn check_input(&self, x: &Tensor<f32>) -> Result<(), CwerError> {
        if x.shape().len() != 2 || x.rows() != self.config.channels {
            return Err(CwerError::ChannelMismatch {
                expected: self.config.channels,
                found: x.shape().first().copied().unwrap_or(0),
            });
        }
        Ok(())
    }

    /// `C × T` segment to `D × T`. Training mode applies dropout from `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<f32>,
        subject: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor<f32>, CwerError> {
        self.check_input(x)?;
        let net = self.net_for(subject)?;
        if !training {
            return forward_eval(net, x, subject);
        }
        let refs = net.refs();
        let ctx = DropoutCtx {
            rate: self.config.dropout,
            rng,
        };
        forward_with(&mut Eager::default(), &refs, x, subject, Some(ctx))
    }

    /// Eval-mode forward over a whole trial, keeping its sample rate.
    pub fn reconstruct(&self, x: &TimeSeries, subject: usize) -> Result<EmbeddingSeries, CwerError> {
        self.check_input(x.tensor())?;
        let z = forward_eval(self.net_for(subject)?, x.tensor(), subject)?;
        Ok(TimeSeries::new(z, x.sample_rate())?)
    }
}

#[cfg(test)]
mod tests;
