use super::{NumError, Real, Tensor};

/// Adam optimizer state with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub const DEFAULT_LR: f64 = 5e-5;

    /// Zeroed moments shaped like `params`, default hyperparameters.
    pub fn new(params: &[&Tensor<T>]) -> Self {
        Self::with_lr(params, Self::DEFAULT_LR)
    }

    pub fn with_lr(params: &[&Tensor<T>], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. A non-finite gradient rejects the whole step and leaves
    /// both parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<(), NumError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumError::ShapeMismatch {
                op: "adam_step",
                expected: format!("{} parameter tensors", self.m.len()),
                found: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "adam_step",
                    expected: format!("{:?}", m.shape()),
                    found: format!("param {i}: {:?} / grad {:?}", p.shape(), g.shape()),
                });
            }
            if !g.is_finite() {
                return Err(NumError::NonFiniteGradient { param: i });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let gj = gj.f64();
                let mj = self.beta1 * m.data()[j].f64() + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v.data()[j].f64() + (1.0 - self.beta2) * gj * gj;
                m.data_mut()[j] = T::of(mj);
                v.data_mut()[j] = T::of(vj);
                let update = self.lr * (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                if update != 0.0 {
                    pd[j] = T::of(pd[j].f64() - update);
                }
            }
        }
        Ok(())
    }
}
