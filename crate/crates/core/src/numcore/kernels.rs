//! Forward and backward kernels for the differentiable op set.
//!
//! Matrices are row-major `channels × time`. Convolutions use zero
//! same-padding so the time axis is preserved.

use faer::{MatMut, MatRef};
use rand::Rng;

use super::{NumError, Real, Tensor};

fn check_2d<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize), NumError> {
    if t.shape().len() != 2 {
        return Err(NumError::ShapeMismatch {
            op,
            expected: "2-D tensor".into(),
            found: format!("{:?}", t.shape()),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// View of tap `k` of a `[cout, cin, K]` kernel as a `cout × cin` matrix.
fn tap_view<T: Real>(kernel: &Tensor<T>, k: usize) -> MatRef<'_, T> {
    let s = kernel.shape();
    let (cout, cin, kk) = (s[0], s[1], s[2]);
    assert!(k < kk);
    // SAFETY: every index (o, c) maps to (o*cin + c)*K + k < cout*cin*K.
    unsafe {
        MatRef::from_raw_parts(
            kernel.data().as_ptr().add(k),
            cout,
            cin,
            (cin * kk) as isize,
            kk as isize,
        )
    }
}

fn tap_view_mut<T: Real>(kernel: &mut Tensor<T>, k: usize) -> MatMut<'_, T> {
    let s = kernel.shape().to_vec();
    let (cout, cin, kk) = (s[0], s[1], s[2]);
    assert!(k < kk);
    // SAFETY: same index map as `tap_view`; distinct (o, c) never alias.
    unsafe {
        MatMut::from_raw_parts_mut(
            kernel.data_mut().as_mut_ptr().add(k),
            cout,
            cin,
            (cin * kk) as isize,
            kk as isize,
        )
    }
}

/// Output column range `[lo, hi)` and input offset for kernel tap `k`.
fn tap_range(t: usize, k: usize, kk: usize, dilation: usize) -> Option<(usize, usize, isize)> {
    let pad = (kk as isize - 1) / 2;
    let shift = (k as isize - pad) * dilation as isize;
    let lo = (-shift).max(0) as usize;
    let hi = (t as isize - shift).min(t as isize);
    if hi <= lo as isize {
        return None;
    }
    Some((lo, hi as usize, shift))
}

fn check_conv<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(usize, usize, usize, usize), NumError> {
    let (cin, t) = check_2d("conv1d", input)?;
    let ks = kernel.shape();
    if ks.len() != 3 || ks[1] != cin {
        return Err(NumError::ShapeMismatch {
            op: "conv1d",
            expected: format!("kernel [cout, {}, K]", cin),
            found: format!("{:?}", ks),
        });
    }
    if ks[2] % 2 == 0 {
        return Err(NumError::EvenKernel(ks[2]));
    }
    if let Some(b) = bias {
        if b.len() != ks[0] {
            return Err(NumError::ShapeMismatch {
                op: "conv1d",
                expected: format!("bias of length {}", ks[0]),
                found: format!("{:?}", b.shape()),
            });
        }
    }
    Ok((ks[0], cin, ks[2], t))
}

/// Same-padded 1-D convolution (cross-correlation, as in deep-learning
/// frameworks): `out[o,t] = Σ_{c,k} w[o,c,k]·x[c, t + (k − (K−1)/2)·dilation]`.
pub fn conv1d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    dilation: usize,
) -> Result<Tensor<T>, NumError> {
    let (cout, _cin, kk, t) = check_conv(input, kernel, bias)?;
    let mut out = Tensor::zeros(&[cout, t]);
    if let Some(b) = bias {
        for o in 0..cout {
            let bo = b.data()[o];
            out.row_mut(o).iter_mut().for_each(|v| *v = bo);
        }
    }
    let x = input.as_mat();
    for k in 0..kk {
        let Some((lo, hi, shift)) = tap_range(t, k, kk, dilation) else {
            continue;
        };
        let src = x.subcols((lo as isize + shift) as usize, hi - lo);
        let dst = out.as_mat_mut().subcols_mut(lo, hi - lo);
        T::gemm(dst, tap_view(kernel, k), src, true);
    }
    Ok(out)
}

/// Gradients of `conv1d` given the upstream gradient `g` (`cout × T`).
pub fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    has_bias: bool,
    dilation: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Option<Tensor<T>>) {
    let ks = kernel.shape();
    let (cout, kk) = (ks[0], ks[2]);
    let t = input.cols();
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(ks);
    let gm = g.as_mat();
    let x = input.as_mat();
    for k in 0..kk {
        let Some((lo, hi, shift)) = tap_range(t, k, kk, dilation) else {
            continue;
        };
        let src_lo = (lo as isize + shift) as usize;
        let gk = gm.subcols(lo, hi - lo);
        T::gemm(
            dx.as_mat_mut().subcols_mut(src_lo, hi - lo),
            tap_view(kernel, k).transpose(),
            gk,
            true,
        );
        T::gemm(
            tap_view_mut(&mut dw, k),
            gk,
            x.subcols(src_lo, hi - lo).transpose(),
            true,
        );
    }
    let db = has_bias.then(|| row_sums(g, cout));
    (dx, dw, db)
}

fn row_sums<T: Real>(g: &Tensor<T>, rows: usize) -> Tensor<T> {
    Tensor::from_fn(&[rows], |o| {
        T::of(g.row(o).iter().map(|v| v.f64()).sum::<f64>())
    })
}

/// `out[:, t] = weight · input[:, t] + bias`.
pub fn linear<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>, NumError> {
    let (din, t) = check_2d("linear", input)?;
    let (dout, wdin) = check_2d("linear", weight)?;
    if wdin != din {
        return Err(NumError::ShapeMismatch {
            op: "linear",
            expected: format!("weight [_, {}]", din),
            found: format!("{:?}", weight.shape()),
        });
    }
    let mut out = Tensor::zeros(&[dout, t]);
    if let Some(b) = bias {
        if b.len() != dout {
            return Err(NumError::ShapeMismatch {
                op: "linear",
                expected: format!("bias of length {}", dout),
                found: format!("{:?}", b.shape()),
            });
        }
        for o in 0..dout {
            let bo = b.data()[o];
            out.row_mut(o).iter_mut().for_each(|v| *v = bo);
        }
    }
    T::gemm(out.as_mat_mut(), weight.as_mat(), input.as_mat(), true);
    Ok(out)
}

pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Option<Tensor<T>>) {
    let mut dx = Tensor::zeros(input.shape());
    T::gemm(dx.as_mat_mut(), weight.as_mat().transpose(), g.as_mat(), false);
    let mut dw = Tensor::zeros(weight.shape());
    T::gemm(dw.as_mat_mut(), g.as_mat(), input.as_mat().transpose(), false);
    let db = has_bias.then(|| row_sums(g, weight.rows()));
    (dx, dw, db)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2))
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        let v = v.f64();
        T::of(v * normal_cdf(v))
    })
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(x.shape());
    for ((o, &xv), &gv) in out.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
        let v = xv.f64();
        let d = normal_cdf(v) + v * INV_SQRT_2PI * libm::exp(-0.5 * v * v);
        *o = T::of(gv.f64() * d);
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Gated linear unit over the channel axis: the first half of the rows is
/// gated by the sigmoid of the second half.
pub fn glu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    let (c2, t) = check_2d("glu", x)?;
    if c2 % 2 != 0 {
        return Err(NumError::ShapeMismatch {
            op: "glu",
            expected: "even channel count".into(),
            found: format!("{:?}", x.shape()),
        });
    }
    let c = c2 / 2;
    let (a, b) = x.data().split_at(c * t);
    let data = a
        .iter()
        .zip(b)
        .map(|(&a, &b)| T::of(a.f64() * sigmoid(b.f64())))
        .collect();
    Tensor::from_vec(&[c, t], data)
}

pub fn glu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let half = x.len() / 2;
    let (a, b) = x.data().split_at(half);
    let mut dx = Tensor::zeros(x.shape());
    let (da, db) = dx.data_mut().split_at_mut(half);
    for i in 0..half {
        let s = sigmoid(b[i].f64());
        let gi = g.data()[i].f64();
        da[i] = T::of(gi * s);
        db[i] = T::of(gi * a[i].f64() * s * (1.0 - s));
    }
    dx
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else
/// `1/(1−rate)`. Eval mode and `rate == 0` give an all-ones mask.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>, NumError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumError::InvalidRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(Tensor::full(shape, T::one()));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    Ok(Tensor::from_fn(shape, |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    }))
}

pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>, NumError> {
    let mask = dropout_mask(x.shape(), rate, training, rng)?;
    Ok(hadamard(x, &mask))
}

pub fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}
