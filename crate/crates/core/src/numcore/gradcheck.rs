use super::{GradTape, NumError, Tensor, Var};

/// Finite-difference gradient check settings.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Step is `h_rel · max(1, |x|)`.
    pub h_rel: f64,
    /// Denominator floor of the relative error, for near-zero gradients.
    pub floor: f64,
    /// Probe at most this many entries per input (evenly strided).
    pub max_entries: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            h_rel: 1e-4,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat entry) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheck {
    /// Compares reverse-mode gradients of the scalar `f` at `point` with
    /// central differences. `f` must rebuild the same computation each call.
    pub fn run<F>(&self, f: F, point: &[Tensor<f64>]) -> Result<GradCheckReport, NumError>
    where
        F: Fn(&mut GradTape<f64>, &[Var]) -> Result<Var, NumError>,
    {
        let eval = |pt: &[Tensor<f64>]| -> Result<f64, NumError> {
            let mut tape = GradTape::new();
            let vars: Vec<Var> = pt.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = f(&mut tape, &vars)?;
            Ok(tape.value(out).scalar_value())
        };
        let mut tape = GradTape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out);

        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            worst: (0, 0),
            checked: 0,
        };
        let mut probe = point.to_vec();
        for (i, v) in vars.iter().enumerate() {
            let n = point[i].len();
            let zero = Tensor::zeros(point[i].shape());
            let analytic = grads.get(*v).unwrap_or(&zero);
            let stride = match self.max_entries {
                Some(m) if m < n => n.div_ceil(m),
                _ => 1,
            };
            for j in (0..n).step_by(stride) {
                let x = point[i].data()[j];
                let h = self.h_rel * x.abs().max(1.0);
                let mut at = |dx: f64| -> Result<f64, NumError> {
                    probe[i].data_mut()[j] = x + dx;
                    eval(&probe)
                };
                // Fourth-order central stencil: truncation error O(h⁴).
                let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
                probe[i].data_mut()[j] = x;
                let a = analytic.data()[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(self.floor);
                report.checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = (i, j);
                }
            }
        }
        Ok(report)
    }
}

/// [`GradCheck::run`] with default settings, returning the max relative error.
pub fn grad_check<F>(f: F, point: &[Tensor<f64>]) -> Result<f64, NumError>
where
    F: Fn(&mut GradTape<f64>, &[Var]) -> Result<Var, NumError>,
{
    Ok(GradCheck::default().run(f, point)?.max_rel_err)
}
