use super::{NumError, Real};

/// A Pearson correlation together with the zero-variance flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Set when either input had zero variance; `r` is then 0.
    pub degenerate: bool,
}

/// Pearson correlation with 64-bit accumulation. A zero-variance input
/// yields 0 and sets the flag.
pub fn pearson_checked<T: Real>(a: &[T], b: &[T]) -> Result<Correlation, NumError> {
    if a.len() != b.len() {
        return Err(NumError::ShapeMismatch {
            op: "pearson",
            expected: format!("length {}", a.len()),
            found: format!("length {}", b.len()),
        });
    }
    if a.len() < 2 {
        return Err(NumError::TooShort {
            op: "pearson",
            min: 2,
            found: a.len(),
        });
    }
    Ok(pearson_raw(a, b))
}

/// Pearson correlation; panics on length mismatch. See [`pearson_checked`].
pub fn pearson<T: Real>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson length mismatch");
    pearson_raw(a, b).r
}

fn pearson_raw<T: Real>(a: &[T], b: &[T]) -> Correlation {
    let n = a.len() as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sa += x.f64();
        sb += y.f64();
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = x.f64() - ma;
        let dy = y.f64() - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let denom = (saa * sbb).sqrt();
    if denom <= f64::MIN_POSITIVE || !denom.is_finite() {
        return Correlation {
            r: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        r: (sab / denom).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Centers `v` and scales it to unit Euclidean norm, so that Pearson
/// correlation becomes a dot product. Returns `None` for constant input.
pub fn center_unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut out: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= f64::MIN_POSITIVE {
        return None;
    }
    out.iter_mut().for_each(|x| *x /= norm);
    Some(out)
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
