use faer::{Mat, MatRef};

use super::{lag_overlap, to_f64, RidgeConfig};
use crate::numcore::Tensor;

/// Sufficient statistics of a lagged regression: `AᵀA`, `AᵀZ` and the
/// target second moments, built without materializing the design `A`.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    gram: Mat<f64>,
    cross: Mat<f64>,
    z_sq: Vec<f64>,
}

impl NormalEquations {
    /// Statistics of one trial. Gram blocks come from lagged
    /// cross-correlations minus the edge terms that fall outside the
    /// trial for the row lag.
    pub fn from_trial(x: &Tensor<f32>, z: &Tensor<f32>, cfg: &RidgeConfig) -> Self {
        let (c, t, d) = (x.rows(), x.cols(), z.rows());
        let l = cfg.n_lags();
        let p = c * l + 1;
        let span = l - 1;
        let xm = to_f64(x);
        let zm = to_f64(z);
        let lagged: Vec<Mat<f64>> = (0..=span)
            .map(|dl| {
                if dl >= t {
                    Mat::zeros(c, c)
                } else {
                    xm.as_ref().subcols(0, t - dl) * xm.as_ref().subcols(dl, t - dl).transpose()
                }
            })
            .collect();
        let at = |u: i64, ch: usize| -> f64 {
            if u >= 0 && (u as usize) < t {
                xm[(ch, u as usize)]
            } else {
                0.0
            }
        };
        let add_outer = |e: &mut Mat<f64>, u: i64, delta: i64| {
            for c1 in 0..c {
                let a = at(u, c1);
                if a == 0.0 {
                    continue;
                }
                for c2 in 0..c {
                    e[(c1, c2)] += a * at(u + delta, c2);
                }
            }
        };
        let mut gram = Mat::<f64>::zeros(p, p);
        let s = span as i64;
        for delta in -s..=s {
            let corr: MatRef<'_, f64> = if delta >= 0 {
                lagged[delta as usize].as_ref()
            } else {
                lagged[(-delta) as usize].as_ref().transpose()
            };
            let a_lo = (-delta).max(0) as usize;
            let a_hi = (l as i64 - delta).min(l as i64) as usize;
            let mut write = |a: usize, e: &Mat<f64>| {
                let b = (a as i64 + delta) as usize;
                for c1 in 0..c {
                    for c2 in 0..c {
                        gram[(a * c + c1, b * c + c2)] = corr[(c1, c2)] - e[(c1, c2)];
                    }
                }
            };
            // Non-negative row lags exclude u < τ.
            let mut e = Mat::<f64>::zeros(c, c);
            let mut upto = 0i64;
            for a in a_lo..a_hi {
                let tau = cfg.lag(a);
                if tau < 0 {
                    continue;
                }
                while upto < tau {
                    add_outer(&mut e, upto, delta);
                    upto += 1;
                }
                write(a, &e);
            }
            // Negative row lags exclude u ≥ T + τ.
            let mut e = Mat::<f64>::zeros(c, c);
            let mut from = 0i64;
            for a in (a_lo..a_hi).rev() {
                let tau = cfg.lag(a);
                if tau >= 0 {
                    continue;
                }
                while from > tau {
                    from -= 1;
                    add_outer(&mut e, t as i64 + from, delta);
                }
                write(a, &e);
            }
        }
        let mut cross = Mat::<f64>::zeros(p, d);
        for a in 0..l {
            let Some((u0, u1, t0)) = lag_overlap(cfg.lag(a), t) else {
                continue;
            };
            let n = u1 - u0;
            let prod = xm.as_ref().subcols(u0, n) * zm.as_ref().subcols(t0, n).transpose();
            for ch in 0..c {
                let sum: f64 = (u0..u1).map(|u| xm[(ch, u)]).sum();
                gram[(a * c + ch, p - 1)] = sum;
                gram[(p - 1, a * c + ch)] = sum;
                for k in 0..d {
                    cross[(a * c + ch, k)] = prod[(ch, k)];
                }
            }
        }
        gram[(p - 1, p - 1)] = t as f64;
        let mut z_sq = vec![0.0; d];
        for k in 0..d {
            cross[(p - 1, k)] = (0..t).map(|i| zm[(k, i)]).sum();
            z_sq[k] = (0..t).map(|i| zm[(k, i)].powi(2)).sum();
        }
        NormalEquations { gram, cross, z_sq }
    }

    pub fn add(&mut self, other: &NormalEquations) {
        self.gram += &other.gram;
        self.cross += &other.cross;
        self.z_sq.iter_mut().zip(&other.z_sq).for_each(|(a, b)| *a += b);
    }

    pub fn minus(&self, other: &NormalEquations) -> NormalEquations {
        NormalEquations {
            gram: &self.gram - &other.gram,
            cross: &self.cross - &other.cross,
            z_sq: self.z_sq.iter().zip(&other.z_sq).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn gram(&self) -> MatRef<'_, f64> {
        self.gram.as_ref()
    }

    pub fn cross(&self) -> MatRef<'_, f64> {
        self.cross.as_ref()
    }

    /// Mean over dimensions of the Pearson correlation between `A·w_d` and
    /// `z_d` over the rows these statistics summarize.
    pub fn mean_pearson(&self, w: MatRef<'_, f64>) -> f64 {
        let p = self.gram.nrows();
        let n = self.gram[(p - 1, p - 1)];
        let gw = self.gram.as_ref() * w;
        let d = w.ncols();
        let mut total = 0.0;
        for k in 0..d {
            let wk = w.col(k);
            let sp = gw[(p - 1, k)];
            let spp: f64 = (0..p).map(|i| wk[i] * gw[(i, k)]).sum();
            let spz: f64 = (0..p).map(|i| wk[i] * self.cross[(i, k)]).sum();
            let sz = self.cross[(p - 1, k)];
            let szz = self.z_sq[k];
            let vp = n * spp - sp * sp;
            let vz = n * szz - sz * sz;
            if vp > 1e-12 * (n * spp).abs().max(f64::MIN_POSITIVE) && vz > 1e-12 * (n * szz).abs().max(f64::MIN_POSITIVE) {
                total += ((n * spz - sp * sz) / (vp * vz).sqrt()).clamp(-1.0, 1.0);
            }
        }
        total / d as f64
    }
}
