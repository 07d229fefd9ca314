use std::rc::Rc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_eval, forward_with, DropoutCtx};
use super::{CwerConfig, CwerError, CwerModel, CwerNet, CwerParams, SubjectMode};
use crate::numcore::{infonce_with_grad, AdamState, GradTape, NormalizedSeries, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    /// Contrastive set size including the positive.
    pub n_contrast: usize,
    pub tau: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            batch: 32,
            n_contrast: 128,
            tau: 0.025,
            patience: 2,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CwerError> {
        if self.n_contrast < 2 || self.patience < 1 || self.batch < 1 || self.max_epochs < 1 {
            return Err(CwerError::Config(
                "need n_contrast ≥ 2, patience ≥ 1, batch ≥ 1 and max_epochs ≥ 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.tau > 0.0) {
            return Err(CwerError::Config("lr and tau must be positive".into()));
        }
        Ok(())
    }
}

/// Aligned neural (`C × T`) and embedding (`D × T`) segments.
#[derive(Clone, Debug)]
pub struct Segment {
    pub x: Tensor<f32>,
    pub z: Tensor<f32>,
    pub subject: usize,
}

/// Per-epoch losses, averaged over segments and time steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetHistory {
    pub train_loss: Vec<f64>,
    pub heldout_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub nets: Vec<NetHistory>,
}

/// `count` distinct indices of `0..n` excluding `positive`, uniform without
/// replacement.
pub fn sample_negatives<R: Rng + ?Sized>(
    n: usize,
    positive: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>, CwerError> {
    if positive >= n || count > n - 1 {
        return Err(CwerError::TooFewSegments {
            needed: count + 1,
            found: n,
        });
    }
    Ok(index::sample(rng, n - 1, count)
        .into_iter()
        .map(|i| if i >= positive { i + 1 } else { i })
        .collect())
}

/// Loss of one segment (summed over time) and the gradient of every
/// parameter it reaches. `dropout` enables training mode.
pub fn sample_loss_grad<R: Rng + ?Sized>(
    net: &CwerParams,
    x: &Tensor<f32>,
    subject: usize,
    candidates: &[&NormalizedSeries],
    tau: f64,
    dropout: Option<DropoutCtx<'_, R>>,
) -> Result<(f64, CwerNet<Option<Tensor<f32>>>), CwerError> {
    let mut tape = GradTape::<f32>::new();
    let handles: CwerNet<Var> = net.map(|t| tape.leaf(t.clone()));
    let input = tape.leaf(x.clone());
    let pred = forward_with(&mut tape, &handles, &input, subject, dropout)?;
    let loss = tape.infonce(pred, candidates, tau)?;
    let value = tape.value(loss).scalar_value() as f64;
    let mut grads = tape.backward(loss);
    Ok((value, handles.map(|v| grads.take(*v))))
}

/// Mean per-time-step loss over `segments` in eval mode, each scored against
/// `negatives[i]` drawn from the same set.
pub fn heldout_loss(
    net: &CwerParams,
    segments: &[&Segment],
    targets: &[Rc<NormalizedSeries>],
    negatives: &[Vec<usize>],
    tau: f64,
) -> Result<f64, CwerError> {
    let mut total = 0.0;
    let mut steps = 0usize;
    for (i, seg) in segments.iter().enumerate() {
        let pred = forward_eval(net, &seg.x, seg.subject)?;
        let mut cands: Vec<&NormalizedSeries> = vec![targets[i].as_ref()];
        cands.extend(negatives[i].iter().map(|&j| targets[j].as_ref()));
        total += infonce_with_grad(&pred, &cands, tau)?.0;
        steps += pred.cols();
    }
    Ok(total / steps.max(1) as f64)
}

fn fixed_negatives(n: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>, CwerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| sample_negatives(n, i, count, &mut rng)).collect()
}

fn train_net(
    cfg: &CwerConfig,
    mut net: CwerParams,
    train: &[&Segment],
    heldout: &[&Segment],
    tcfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(CwerParams, NetHistory), CwerError> {
    if train.len() < tcfg.n_contrast {
        return Err(CwerError::TooFewSegments {
            needed: tcfg.n_contrast,
            found: train.len(),
        });
    }
    if heldout.len() < 2 {
        return Err(CwerError::TooFewSegments {
            needed: 2,
            found: heldout.len(),
        });
    }
    let targets: Vec<Rc<NormalizedSeries>> = train.iter().map(|s| Rc::new(NormalizedSeries::new(&s.z))).collect();
    let held_targets: Vec<Rc<NormalizedSeries>> =
        heldout.iter().map(|s| Rc::new(NormalizedSeries::new(&s.z))).collect();
    let held_count = tcfg.n_contrast.min(heldout.len()) - 1;
    let held_negs = fixed_negatives(heldout.len(), held_count, rng.random())?;

    let init: Vec<&Tensor<f32>> = net.named().into_iter().map(|(_, t)| t).collect();
    let mut adam = AdamState::with_lr(&init, tcfg.lr);
    let mut history = NetHistory::default();
    let mut best = (f64::INFINITY, net.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..tcfg.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for (step, batch) in order.chunks(tcfg.batch).enumerate() {
            let mut acc: CwerNet<Tensor<f32>> = net.map(|t| Tensor::zeros(t.shape()));
            for &i in batch {
                let negs = sample_negatives(train.len(), i, tcfg.n_contrast - 1, rng)?;
                let mut cands: Vec<&NormalizedSeries> = vec![targets[i].as_ref()];
                cands.extend(negs.iter().map(|&j| targets[j].as_ref()));
                let ctx = DropoutCtx {
                    rate: cfg.dropout,
                    rng: &mut *rng,
                };
                let (loss, grads) = sample_loss_grad(&net, &train[i].x, train[i].subject, &cands, tcfg.tau, Some(ctx))?;
                if !loss.is_finite() {
                    return Err(CwerError::Diverged { epoch, step, loss });
                }
                epoch_loss += loss;
                epoch_steps += train[i].x.cols();
                for (a, g) in acc.params_mut().into_iter().zip(grads.named()) {
                    if let Some(g) = g.1 {
                        a.add_assign(g);
                    }
                }
            }
            let inv = 1.0 / batch.len() as f32;
            let mut grads = acc;
            grads.params_mut().into_iter().for_each(|g| g.scale(inv));
            let grad_refs: Vec<&Tensor<f32>> = grads.named().into_iter().map(|(_, t)| t).collect();
            adam.step(&mut net.params_mut(), &grad_refs).map_err(|_| CwerError::Diverged {
                epoch,
                step,
                loss: f64::NAN,
            })?;
        }
        history.train_loss.push(epoch_loss / epoch_steps as f64);
        let held = heldout_loss(&net, heldout, &held_targets, &held_negs, tcfg.tau)?;
        if !held.is_finite() {
            return Err(CwerError::Diverged {
                epoch,
                step: usize::MAX,
                loss: held,
            });
        }
        history.heldout_loss.push(held);
        log::info!(
            "epoch {epoch}: train {:.4} heldout {held:.4} per step",
            history.train_loss[epoch]
        );
        if held < best.0 {
            best = (held, net.clone());
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= tcfg.patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}

/// Minibatch Adam on the contrastive loss with early stopping on the
/// held-out loss; returns the best held-out parameters. In per-subject mode
/// each subject's network sees only that subject's segments.
pub fn train(
    cfg: &CwerConfig,
    train: &[Segment],
    heldout: &[Segment],
    tcfg: &TrainConfig,
) -> Result<(CwerModel, TrainReport), CwerError> {
    cfg.validate()?;
    tcfg.validate()?;
    for s in train.iter().chain(heldout) {
        if s.subject >= cfg.n_subjects {
            return Err(CwerError::UnknownSubject {
                subject: s.subject,
                n_subjects: cfg.n_subjects,
            });
        }
        if s.x.rows() != cfg.channels {
            return Err(CwerError::ChannelMismatch {
                expected: cfg.channels,
                found: s.x.rows(),
            });
        }
        if s.z.rows() != cfg.embed_dim || s.z.cols() != s.x.cols() {
            return Err(CwerError::Config(format!(
                "target segment is {:?}, expected [{}, {}]",
                s.z.shape(),
                cfg.embed_dim,
                s.x.cols()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let model = CwerModel::init(cfg.clone(), &mut rng)?;
    let mut nets = Vec::new();
    let mut report = TrainReport::default();
    for (n, init) in model.nets.into_iter().enumerate() {
        let keep = |s: &&Segment| cfg.mode != SubjectMode::PerSubjectModel || s.subject == n;
        let tr: Vec<&Segment> = train.iter().filter(keep).collect();
        let ho: Vec<&Segment> = heldout.iter().filter(keep).collect();
        let (net, hist) = train_net(cfg, init, &tr, &ho, tcfg, &mut rng)?;
        nets.push(net);
        report.nets.push(hist);
    }
    Ok((
        CwerModel {
            config: cfg.clone(),
            nets,
        },
        report,
    ))
}
