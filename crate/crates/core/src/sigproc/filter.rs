//! Linear-phase windowed-sinc FIR design and zero-phase application.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{SigError, TimeSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Bandpass,
    Bandstop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// One cutoff for lowpass, `[low, high]` otherwise (Hz).
    pub cutoffs: Vec<f64>,
    /// Transition bandwidth in Hz; defaults to 25% of the lowest cutoff.
    #[serde(default)]
    pub transition_hz: Option<f64>,
}

/// Hamming main-lobe width in cycles/sample is about 3.3/N.
const HAMMING_WIDTH: f64 = 3.3;

impl FilterSpec {
    pub fn lowpass(cutoff_hz: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Lowpass,
            cutoffs: vec![cutoff_hz],
            transition_hz: None,
        }
    }

    pub fn bandpass(low_hz: f64, high_hz: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Bandpass,
            cutoffs: vec![low_hz, high_hz],
            transition_hz: None,
        }
    }

    pub fn bandstop(low_hz: f64, high_hz: f64) -> Self {
        FilterSpec {
            kind: FilterKind::Bandstop,
            cutoffs: vec![low_hz, high_hz],
            transition_hz: None,
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<(), SigError> {
        let nyquist = sample_rate / 2.0;
        let want = match self.kind {
            FilterKind::Lowpass => 1,
            _ => 2,
        };
        if self.cutoffs.len() != want {
            return Err(SigError::Filter(format!(
                "{:?} needs {want} cutoff(s), got {}",
                self.kind,
                self.cutoffs.len()
            )));
        }
        for &c in &self.cutoffs {
            if !(c > 0.0 && c < nyquist) {
                return Err(SigError::Filter(format!(
                    "cutoff {c} Hz outside (0, {nyquist}) Hz at {sample_rate} Hz"
                )));
            }
        }
        if want == 2 && self.cutoffs[0] >= self.cutoffs[1] {
            return Err(SigError::Filter("band edges must satisfy low < high".into()));
        }
        if let Some(tw) = self.transition_hz {
            if !(tw > 0.0) {
                return Err(SigError::Filter(format!("transition width must be positive, got {tw}")));
            }
        }
        Ok(())
    }

    fn transition(&self) -> f64 {
        self.transition_hz.unwrap_or(0.25 * self.cutoffs[0])
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    // Mirrored so the window is exactly symmetric.
    let mut w: Vec<f64> = (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    for i in 0..n / 2 {
        w[n - 1 - i] = w[i];
    }
    w
}

/// Windowed ideal lowpass at `fc` cycles/sample, not normalized.
fn sinc_lowpass(fc: f64, window: &[f64]) -> Vec<f64> {
    let mid = (window.len() - 1) as f64 / 2.0;
    window
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = i as f64 - mid;
            let h = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            h * w
        })
        .collect()
}

fn gain_at(taps: &[f64], f: f64) -> f64 {
    let mid = (taps.len() - 1) as f64 / 2.0;
    // Symmetric taps: the response is real after removing the linear phase.
    taps.iter()
        .enumerate()
        .map(|(i, h)| h * (2.0 * PI * f * (i as f64 - mid)).cos())
        .sum()
}

/// Odd-length linear-phase taps for `spec` (Hamming-windowed sinc).
pub fn design_fir(spec: &FilterSpec, sample_rate: f64) -> Result<Vec<f64>, SigError> {
    spec.validate(sample_rate)?;
    let tw = spec.transition() / sample_rate;
    let mut n = (HAMMING_WIDTH / tw).ceil() as usize;
    if n % 2 == 0 {
        n += 1;
    }
    let n = n.max(3);
    let win = hamming(n);
    let norm = |f: f64| f / sample_rate;
    let taps = match spec.kind {
        FilterKind::Lowpass => {
            let h = sinc_lowpass(norm(spec.cutoffs[0]), &win);
            let dc: f64 = h.iter().sum();
            h.into_iter().map(|v| v / dc).collect()
        }
        FilterKind::Bandpass | FilterKind::Bandstop => {
            let (lo, hi) = (norm(spec.cutoffs[0]), norm(spec.cutoffs[1]));
            let high = sinc_lowpass(hi, &win);
            let low = sinc_lowpass(lo, &win);
            let band: Vec<f64> = high.iter().zip(&low).map(|(a, b)| a - b).collect();
            let center = gain_at(&band, (lo + hi) / 2.0);
            let band: Vec<f64> = band.into_iter().map(|v| v / center).collect();
            if spec.kind == FilterKind::Bandpass {
                band
            } else {
                let mid = n / 2;
                band.iter()
                    .enumerate()
                    .map(|(i, v)| if i == mid { 1.0 - v } else { -v })
                    .collect()
            }
        }
    };
    Ok(taps)
}

/// Centered convolution with symmetric taps; zero outside the buffer.
fn convolve_centered(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = x.len();
    let half = taps.len() / 2;
    let mut y = vec![0.0; n];
    for (i, yi) in y.iter_mut().enumerate() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let mut acc = 0.0;
        for (j, xv) in x[lo..hi].iter().enumerate() {
            acc += taps[lo + j + half - i] * xv;
        }
        *yi = acc;
    }
    y
}

/// Zero-phase filtering of one channel: odd reflection padding of
/// `len(taps)` samples, a forward and a backward pass, then cropping.
pub fn filtfilt_channel(x: &[f32], taps: &[f64]) -> Result<Vec<f32>, SigError> {
    let pad = taps.len();
    if x.len() <= 3 * pad {
        return Err(SigError::TooShort {
            samples: x.len(),
            needed: 3 * pad + 1,
        });
    }
    let n = x.len();
    let first = x[0] as f64;
    let last = x[n - 1] as f64;
    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|i| 2.0 * first - x[i] as f64));
    buf.extend(x.iter().map(|&v| v as f64));
    buf.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i] as f64));
    // Symmetric taps: the time-reversed pass is the same centered convolution.
    let fwd = convolve_centered(&buf, taps);
    let both = convolve_centered(&fwd, taps);
    Ok(both[pad..pad + n].iter().map(|&v| v as f32).collect())
}

pub fn filtfilt(x: &TimeSeries, taps: &[f64]) -> Result<TimeSeries, SigError> {
    let mut rows = Vec::with_capacity(x.channels());
    for c in 0..x.channels() {
        rows.push(filtfilt_channel(x.channel(c), taps)?);
    }
    TimeSeries::from_rows(&rows, x.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate).sin() as f32)
            .collect()
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn lowpass_unit_dc_and_symmetric() {
        let h = design_fir(&FilterSpec::lowpass(4.0), 40.0).unwrap();
        assert_eq!(h.len() % 2, 1);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for i in 0..h.len() {
            assert_eq!(h[i], h[h.len() - 1 - i]);
        }
    }

    #[test]
    fn stopband_attenuation_at_12hz() {
        let h = design_fir(&FilterSpec::lowpass(4.0), 40.0).unwrap();
        let x = sine(12.0, 40.0, 4000);
        let y = filtfilt_channel(&x, &h).unwrap();
        let inner = &y[500..3500];
        let db = 20.0 * (rms(inner) / rms(&x[500..3500])).log10();
        assert!(db <= -40.0, "attenuation only {db} dB");
    }

    #[test]
    fn passband_sine_preserved() {
        let h = design_fir(&FilterSpec::lowpass(4.0), 40.0).unwrap();
        let x = sine(2.0, 40.0, 2000);
        let y = filtfilt_channel(&x, &h).unwrap();
        let ratio = rms(&y[200..1800]) / rms(&x[200..1800]);
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn zero_and_constant_inputs() {
        let h = design_fir(&FilterSpec::lowpass(4.0), 40.0).unwrap();
        let z = vec![0.0f32; 1000];
        assert!(filtfilt_channel(&z, &h).unwrap().iter().all(|&v| v == 0.0));
        let c = vec![3.5f32; 1000];
        assert!(filtfilt_channel(&c, &h).unwrap().iter().all(|&v| (v - 3.5).abs() < 1e-4));
    }

    #[test]
    fn zero_phase_peak_at_lag_zero() {
        let h = design_fir(&FilterSpec::lowpass(4.0), 40.0).unwrap();
        let x = sine(1.3, 40.0, 2000);
        let y = filtfilt_channel(&x, &h).unwrap();
        let xc = |lag: isize| -> f64 {
            (400..1600)
                .map(|i| x[i] as f64 * y[(i as isize + lag) as usize] as f64)
                .sum()
        };
        let best = (-10..=10).max_by(|&a, &b| xc(a).partial_cmp(&xc(b)).unwrap()).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn bandpass_and_bandstop() {
        let rate = 1200.0;
        let bp = design_fir(&FilterSpec::bandpass(1.0, 40.0), rate).unwrap();
        let dc = bp.iter().sum::<f64>();
        assert!(dc.abs() < 5e-3, "bandpass must reject DC, gain {dc}");
        let notch = FilterSpec {
            transition_hz: Some(1.0),
            ..FilterSpec::bandstop(49.0, 51.0)
        };
        let bs = design_fir(&notch, rate).unwrap();
        assert!((bs.iter().sum::<f64>() - 1.0).abs() < 1e-3, "bandstop passes DC");
        assert!(gain_at(&bs, 50.0 / rate).abs() < 0.05);
    }

    #[test]
    fn invalid_specs() {
        assert!(design_fir(&FilterSpec::lowpass(20.0), 40.0).is_err());
        assert!(design_fir(&FilterSpec::lowpass(0.0), 40.0).is_err());
        assert!(design_fir(&FilterSpec::bandpass(10.0, 5.0), 40.0).is_err());
        let h = design_fir(&FilterSpec::lowpass(4.0), 40.0).unwrap();
        assert!(matches!(
            filtfilt_channel(&vec![0.0; 3 * h.len()], &h),
            Err(SigError::TooShort { .. })
        ));
    }
}
