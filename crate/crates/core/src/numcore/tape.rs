//! Reverse-mode gradient tape over the CWER op set.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order; `backward` walks it once in reverse.

use std::rc::Rc;

use super::infonce::{infonce_with_grad, NormalizedSeries};
use super::kernels;
use super::{NumError, Real, Tensor};

/// Handle to a node on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Gelu(Var),
    Glu(Var),
    Mask {
        input: Var,
        mask: Tensor<T>,
    },
    Add(Var, Var),
    /// Scalar loss node with the gradient of the loss w.r.t. `input`
    /// precomputed during the forward pass.
    Loss {
        input: Var,
        grad: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation for a single backward pass.
pub struct GradTape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by [`Var`]; `None` for nodes the loss does not reach.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

impl<T: Real> GradTape<T> {
    pub fn new() -> Self {
        GradTape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs and parameters.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var, NumError> {
        let out = kernels::conv1d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            dilation,
        )?;
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                kernel,
                bias,
                dilation,
            },
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, NumError> {
        let out = kernels::linear(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = kernels::gelu(self.value(x));
        self.push(out, Op::Gelu(x))
    }

    pub fn glu(&mut self, x: Var) -> Result<Var, NumError> {
        let out = kernels::glu(self.value(x))?;
        Ok(self.push(out, Op::Glu(x)))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask(&mut self, x: Var, mask: Tensor<T>) -> Var {
        let out = kernels::hadamard(self.value(x), &mask);
        self.push(out, Op::Mask { input: x, mask })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// InfoNCE loss of `pred` against `candidates` (`[0]` is the positive).
    pub fn infonce(
        &mut self,
        pred: Var,
        candidates: &[&NormalizedSeries],
        tau: f64,
    ) -> Result<Var, NumError> {
        let (loss, grad) = infonce_with_grad(self.value(pred), candidates, tau)?;
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::Loss { input: pred, grad },
        ))
    }

    /// Same as [`GradTape::infonce`] but with shared candidate storage.
    pub fn infonce_rc(
        &mut self,
        pred: Var,
        candidates: &[Rc<NormalizedSeries>],
        tau: f64,
    ) -> Result<Var, NumError> {
        let refs: Vec<&NormalizedSeries> = candidates.iter().map(|c| c.as_ref()).collect();
        self.infonce(pred, &refs, tau)
    }

    /// Backpropagates from a scalar node, seeding its gradient with 1.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                // Leaves keep their gradient for the caller.
                grads[i] = Some(g);
                continue;
            }
            let mut send = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv1d {
                    input,
                    kernel,
                    bias,
                    dilation,
                } => {
                    let (dx, dw, db) = kernels::conv1d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        bias.is_some(),
                        *dilation,
                        &g,
                    );
                    send(*input, dx);
                    send(*kernel, dw);
                    if let (Some(b), Some(db)) = (bias, db) {
                        send(*b, db);
                    }
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let (dx, dw, db) = kernels::linear_backward(
                        self.value(*input),
                        self.value(*weight),
                        bias.is_some(),
                        &g,
                    );
                    send(*input, dx);
                    send(*weight, dw);
                    if let (Some(b), Some(db)) = (bias, db) {
                        send(*b, db);
                    }
                }
                Op::Gelu(x) => send(*x, kernels::gelu_backward(self.value(*x), &g)),
                Op::Glu(x) => send(*x, kernels::glu_backward(self.value(*x), &g)),
                Op::Mask { input, mask } => send(*input, kernels::hadamard(&g, mask)),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Loss { input, grad } => {
                    let mut d = grad.clone();
                    d.scale(g.scalar_value());
                    send(*input, d);
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_accumulates_fan_out() {
        // y = x + x, dy/dx = 2 (x used twice).
        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 2], vec![1.0, -3.0]).unwrap());
        let y = tape.add(x, x);
        let w = tape.leaf(Tensor::from_vec(&[1, 1], vec![1.0]).unwrap());
        let s = tape.linear(y, w, None).unwrap();
        let n1 = NormalizedSeries::new(&Tensor::<f64>::zeros(&[1, 2]));
        let loss = tape.infonce(s, &[&n1, &n1], 1.0).unwrap();
        let grads = tape.backward(loss);
        // constant candidates → zero similarity gradient everywhere
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
