use std::marker::PhantomData;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::CwerError;
use crate::numcore::kernels::{self, dropout_mask};
use crate::numcore::{GradTape, Real, Tensor, Var};

/// How subject identity enters the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectMode {
    /// Shared network with a per-subject `D1 × D1` matrix after the front.
    SubjectLayer,
    /// Shared network without any subject-dependent part.
    NoSubjectLayer,
    /// One independent no-subject network per subject.
    PerSubjectModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwerConfig {
    pub channels: usize,
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden1: usize,
    #[serde(default = "default_hidden")]
    pub hidden2: usize,
    #[serde(default = "default_blocks")]
    pub n_blocks: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    pub n_subjects: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_mode")]
    pub mode: SubjectMode,
}

fn default_hidden() -> usize {
    256
}
fn default_blocks() -> usize {
    5
}
fn default_kernel() -> usize {
    9
}
fn default_dropout() -> f64 {
    0.5
}
fn default_mode() -> SubjectMode {
    SubjectMode::SubjectLayer
}

impl CwerConfig {
    /// Defaults for everything but the data-dependent sizes.
    pub fn new(channels: usize, embed_dim: usize, n_subjects: usize) -> Self {
        CwerConfig {
            channels,
            embed_dim,
            hidden1: default_hidden(),
            hidden2: default_hidden(),
            n_blocks: default_blocks(),
            kernel: default_kernel(),
            n_subjects,
            dropout: default_dropout(),
            mode: default_mode(),
        }
    }

    pub fn validate(&self) -> Result<(), CwerError> {
        let bad = |m: String| Err(CwerError::Config(m));
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.n_blocks == 0 || self.n_subjects == 0 {
            return bad("n_blocks and n_subjects must be at least 1".into());
        }
        if [self.channels, self.embed_dim, self.hidden1, self.hidden2].contains(&0) {
            return bad("channel and hidden sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Number of independent networks the mode needs.
    pub fn n_nets(&self) -> usize {
        match self.mode {
            SubjectMode::PerSubjectModel => self.n_subjects,
            _ => 1,
        }
    }

    /// Subject matrices held by each network.
    fn subject_mats(&self) -> usize {
        match self.mode {
            SubjectMode::SubjectLayer => self.n_subjects,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<P> {
    pub conv1_w: P,
    pub conv1_b: P,
    pub conv2_w: P,
    pub conv2_b: P,
    pub gate_w: P,
    pub gate_b: P,
}

/// One network's parameters. `P` is a tensor for storage, or a tape
/// handle while recording.
#[derive(Clone, Debug, PartialEq)]
pub struct CwerNet<P> {
    pub front_w: P,
    pub front_b: P,
    pub front_conv: P,
    /// Empty unless the subject layer is on.
    pub subject: Vec<P>,
    pub blocks: Vec<BlockParams<P>>,
    pub head1_w: P,
    pub head1_b: P,
    pub head2_w: P,
    pub head2_b: P,
}

impl<P> CwerNet<P> {
    /// Parameters with stable names, in storage order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = vec![
            ("front.linear.w".to_string(), &self.front_w),
            ("front.linear.b".to_string(), &self.front_b),
            ("front.conv.w".to_string(), &self.front_conv),
        ];
        for (s, m) in self.subject.iter().enumerate() {
            out.push((format!("subject.{s}"), m));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.conv1.w"), &b.conv1_w));
            out.push((format!("block{i}.conv1.b"), &b.conv1_b));
            out.push((format!("block{i}.conv2.w"), &b.conv2_w));
            out.push((format!("block{i}.conv2.b"), &b.conv2_b));
            out.push((format!("block{i}.gate.w"), &b.gate_w));
            out.push((format!("block{i}.gate.b"), &b.gate_b));
        }
        out.push(("head.conv1.w".to_string(), &self.head1_w));
        out.push(("head.conv1.b".to_string(), &self.head1_b));
        out.push(("head.conv2.w".to_string(), &self.head2_w));
        out.push(("head.conv2.b".to_string(), &self.head2_b));
        out
    }

    /// Mutable references in the same order as [`CwerNet::named`].
    pub fn params_mut(&mut self) -> Vec<&mut P> {
        let mut out = vec![&mut self.front_w, &mut self.front_b, &mut self.front_conv];
        out.extend(self.subject.iter_mut());
        for b in &mut self.blocks {
            out.extend([
                &mut b.conv1_w,
                &mut b.conv1_b,
                &mut b.conv2_w,
                &mut b.conv2_b,
                &mut b.gate_w,
                &mut b.gate_b,
            ]);
        }
        out.extend([&mut self.head1_w, &mut self.head1_b, &mut self.head2_w, &mut self.head2_b]);
        out
    }

    pub fn refs(&self) -> CwerNet<&P> {
        self.map_ref(|p| p)
    }

    fn map_ref<'a, Q: 'a>(&'a self, f: impl FnMut(&'a P) -> Q) -> CwerNet<Q> {
        let mut f = f;
        CwerNet {
            front_w: f(&self.front_w),
            front_b: f(&self.front_b),
            front_conv: f(&self.front_conv),
            subject: self.subject.iter().map(&mut f).collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    conv1_w: f(&b.conv1_w),
                    conv1_b: f(&b.conv1_b),
                    conv2_w: f(&b.conv2_w),
                    conv2_b: f(&b.conv2_b),
                    gate_w: f(&b.gate_w),
                    gate_b: f(&b.gate_b),
                })
                .collect(),
            head1_w: f(&self.head1_w),
            head1_b: f(&self.head1_b),
            head2_w: f(&self.head2_w),
            head2_b: f(&self.head2_b),
        }
    }

    pub fn map<Q>(&self, f: impl FnMut(&P) -> Q) -> CwerNet<Q> {
        self.map_ref(f)
    }
}

fn shapes(cfg: &CwerConfig) -> CwerNet<Vec<usize>> {
    let (c, d, d1, d2, k) = (cfg.channels, cfg.embed_dim, cfg.hidden1, cfg.hidden2, cfg.kernel);
    CwerNet {
        front_w: vec![d1, c],
        front_b: vec![d1],
        front_conv: vec![d1, d1, 1],
        subject: vec![vec![d1, d1]; cfg.subject_mats()],
        blocks: vec![
            BlockParams {
                conv1_w: vec![d1, d1, k],
                conv1_b: vec![d1],
                conv2_w: vec![d1, d1, k],
                conv2_b: vec![d1],
                gate_w: vec![2 * d1, d1, 1],
                gate_b: vec![2 * d1],
            };
            cfg.n_blocks
        ],
        head1_w: vec![2 * d2, d1, 1],
        head1_b: vec![2 * d2],
        head2_w: vec![d, 2 * d2, 1],
        head2_b: vec![d],
    }
}

/// Expected `(name, shape)` of every parameter of one network.
pub fn param_shapes(cfg: &CwerConfig) -> Vec<(String, Vec<usize>)> {
    shapes(cfg).named().into_iter().map(|(n, s)| (n, s.clone())).collect()
}

fn he_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

impl<T: Real> CwerNet<Tensor<T>> {
    pub fn zeros(cfg: &CwerConfig) -> Self {
        shapes(cfg).map(|s| Tensor::zeros(s))
    }

    /// He-uniform weights, zero biases, subject matrices at identity plus
    /// N(0, 0.01) noise.
    pub fn init<R: Rng + ?Sized>(cfg: &CwerConfig, rng: &mut R) -> Self {
        let noise = Normal::new(0.0, 0.01).expect("valid normal");
        let d1 = cfg.hidden1;
        let mut next = |shape: &[usize], bias: bool| {
            if bias {
                Tensor::zeros(shape)
            } else {
                he_uniform(shape, rng)
            }
        };
        let front_w = next(&[d1, cfg.channels], false);
        let front_b = next(&[d1], true);
        let front_conv = next(&[d1, d1, 1], false);
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockParams {
                conv1_w: next(&[d1, d1, cfg.kernel], false),
                conv1_b: next(&[d1], true),
                conv2_w: next(&[d1, d1, cfg.kernel], false),
                conv2_b: next(&[d1], true),
                gate_w: next(&[2 * d1, d1, 1], false),
                gate_b: next(&[2 * d1], true),
            })
            .collect();
        let head1_w = next(&[2 * cfg.hidden2, d1, 1], false);
        let head1_b = next(&[2 * cfg.hidden2], true);
        let head2_w = next(&[cfg.embed_dim, 2 * cfg.hidden2, 1], false);
        let head2_b = next(&[cfg.embed_dim], true);
        let subject = (0..cfg.subject_mats())
            .map(|_| {
                Tensor::from_fn(&[d1, d1], |k| {
                    let eye = if k / d1 == k % d1 { 1.0 } else { 0.0 };
                    T::of(eye + noise.sample(rng))
                })
            })
            .collect();
        CwerNet {
            front_w,
            front_b,
            front_conv,
            subject,
            blocks,
            head1_w,
            head1_b,
            head2_w,
            head2_b,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn n_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Op set the forward pass is written against: eager evaluation or tape
/// recording.
pub trait Exec<T: Real> {
    type H;
    type P: Copy;
    fn conv(&mut self, x: &Self::H, w: Self::P, b: Option<Self::P>) -> Result<Self::H, CwerError>;
    fn linear(&mut self, x: &Self::H, w: Self::P, b: Option<Self::P>) -> Result<Self::H, CwerError>;
    fn gelu(&mut self, x: &Self::H) -> Self::H;
    fn glu(&mut self, x: &Self::H) -> Result<Self::H, CwerError>;
    fn mask(&mut self, x: &Self::H, mask: Tensor<T>) -> Self::H;
    fn add(&mut self, a: &Self::H, b: &Self::H) -> Self::H;
    fn shape(&self, x: &Self::H) -> Vec<usize>;
}

/// Direct evaluation without recording.
pub struct Eager<'a, T>(PhantomData<&'a T>);

impl<T> Default for Eager<'_, T> {
    fn default() -> Self {
        Eager(PhantomData)
    }
}

impl<'a, T: Real> Exec<T> for Eager<'a, T> {
    type H = Tensor<T>;
    type P = &'a Tensor<T>;
    fn conv(&mut self, x: &Tensor<T>, w: Self::P, b: Option<Self::P>) -> Result<Tensor<T>, CwerError> {
        Ok(kernels::conv1d(x, w, b, 1)?)
    }
    fn linear(&mut self, x: &Tensor<T>, w: Self::P, b: Option<Self::P>) -> Result<Tensor<T>, CwerError> {
        Ok(kernels::linear(x, w, b)?)
    }
    fn gelu(&mut self, x: &Tensor<T>) -> Tensor<T> {
        kernels::gelu(x)
    }
    fn glu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, CwerError> {
        Ok(kernels::glu(x)?)
    }
    fn mask(&mut self, x: &Tensor<T>, mask: Tensor<T>) -> Tensor<T> {
        kernels::hadamard(x, &mask)
    }
    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        let mut out = a.clone();
        out.add_assign(b);
        out
    }
    fn shape(&self, x: &Tensor<T>) -> Vec<usize> {
        x.shape().to_vec()
    }
}

impl<T: Real> Exec<T> for GradTape<T> {
    type H = Var;
    type P = Var;
    fn conv(&mut self, x: &Var, w: Var, b: Option<Var>) -> Result<Var, CwerError> {
        Ok(self.conv1d(*x, w, b, 1)?)
    }
    fn linear(&mut self, x: &Var, w: Var, b: Option<Var>) -> Result<Var, CwerError> {
        Ok(GradTape::linear(self, *x, w, b)?)
    }
    fn gelu(&mut self, x: &Var) -> Var {
        GradTape::gelu(self, *x)
    }
    fn glu(&mut self, x: &Var) -> Result<Var, CwerError> {
        Ok(GradTape::glu(self, *x)?)
    }
    fn mask(&mut self, x: &Var, mask: Tensor<T>) -> Var {
        GradTape::mask(self, *x, mask)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        GradTape::add(self, *a, *b)
    }
    fn shape(&self, x: &Var) -> Vec<usize> {
        self.value(*x).shape().to_vec()
    }
}

/// Dropout draws for one forward pass; `None` in eval mode.
pub struct DropoutCtx<'r, R: ?Sized> {
    pub rate: f64,
    pub rng: &'r mut R,
}

/// Runs one network on a `C × T` input. `subject` selects `M_s` when the
/// network has subject matrices; it is ignored otherwise.
pub fn forward_with<T: Real, E: Exec<T>, R: Rng + ?Sized>(
    exec: &mut E,
    net: &CwerNet<E::P>,
    x: &E::H,
    subject: usize,
    mut dropout: Option<DropoutCtx<'_, R>>,
) -> Result<E::H, CwerError> {
    let mut h = exec.linear(x, net.front_w, Some(net.front_b))?;
    h = exec.conv(&h, net.front_conv, None)?;
    if !net.subject.is_empty() {
        let m = *net
            .subject
            .get(subject)
            .ok_or(CwerError::UnknownSubject { subject, n_subjects: net.subject.len() })?;
        h = exec.linear(&h, m, None)?;
    }
    for b in &net.blocks {
        let mut y = exec.conv(&h, b.conv1_w, Some(b.conv1_b))?;
        y = exec.gelu(&y);
        y = exec.conv(&y, b.conv2_w, Some(b.conv2_b))?;
        y = exec.gelu(&y);
        y = exec.conv(&y, b.gate_w, Some(b.gate_b))?;
        y = exec.glu(&y)?;
        if let Some(ctx) = dropout.as_mut() {
            let mask = dropout_mask(&exec.shape(&y), ctx.rate, true, &mut *ctx.rng)?;
            y = exec.mask(&y, mask);
        }
        h = exec.add(&h, &y);
    }
    let mut out = exec.conv(&h, net.head1_w, Some(net.head1_b))?;
    out = exec.gelu(&out);
    exec.conv(&out, net.head2_w, Some(net.head2_b))
}

/// Eval-mode forward of one network.
pub fn forward_eval<T: Real>(net: &CwerNet<Tensor<T>>, x: &Tensor<T>, subject: usize) -> Result<Tensor<T>, CwerError> {
    let refs = net.refs();
    forward_with::<T, _, rand_chacha::ChaCha8Rng>(&mut Eager::default(), &refs, x, subject, None)
}
