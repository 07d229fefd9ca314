use serde::{Deserialize, Serialize};

use super::filter::{design_fir, filtfilt, FilterSpec};
use super::{EmbeddingSeries, SigError, TimeSeries};

fn integer_ratio(x: f64, what: &str) -> Result<usize, SigError> {
    let r = x.round();
    if (x - r).abs() > 1e-6 * x.abs().max(1.0) || r < 0.0 {
        return Err(SigError::NonInteger(format!("{what} = {x} is not an integer")));
    }
    Ok(r as usize)
}

/// Integer-factor decimation with an anti-alias lowpass at 0.45·target.
pub fn resample(x: &TimeSeries, target_rate: f64) -> Result<TimeSeries, SigError> {
    if !(target_rate > 0.0) {
        return Err(SigError::InvalidRate(target_rate));
    }
    if target_rate > x.sample_rate() {
        return Err(SigError::NonInteger(format!(
            "upsampling {} → {} Hz is not supported",
            x.sample_rate(),
            target_rate
        )));
    }
    let k = integer_ratio(x.sample_rate() / target_rate, "decimation factor")?;
    if k == 1 {
        return Ok(x.clone());
    }
    let taps = design_fir(&FilterSpec::lowpass(0.45 * target_rate), x.sample_rate())?;
    let filtered = filtfilt(x, &taps)?;
    filtered.map_channels(target_rate, |ch| ch.iter().step_by(k).copied().collect())
}

/// Per-channel standardization over time. Returns the indices of constant
/// channels, which are mapped to zeros.
pub fn zscore_channels(x: &TimeSeries) -> Result<(TimeSeries, Vec<usize>), SigError> {
    if x.samples() < 2 {
        return Err(SigError::TooShort {
            samples: x.samples(),
            needed: 2,
        });
    }
    let mut constant = Vec::new();
    let mut rows = Vec::with_capacity(x.channels());
    for c in 0..x.channels() {
        let ch = x.channel(c);
        let n = ch.len() as f64;
        let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= 1e-6 * mean.abs() || sd < 1e-30 {
            constant.push(c);
            rows.push(vec![0.0; ch.len()]);
        } else {
            rows.push(ch.iter().map(|&v| ((v as f64 - mean) / sd) as f32).collect());
        }
    }
    if !constant.is_empty() {
        log::warn!("zscore: {} constant channel(s) set to zero", constant.len());
    }
    Ok((TimeSeries::from_rows(&rows, x.sample_rate())?, constant))
}

/// Pairs each neural sample with the stimulus `shift_s` earlier: drops the
/// first `n` neural samples and the last `n` embedding samples.
pub fn shift_align(
    meg: &TimeSeries,
    emb: &EmbeddingSeries,
    shift_s: f64,
) -> Result<(TimeSeries, EmbeddingSeries), SigError> {
    if meg.sample_rate() != emb.sample_rate() {
        return Err(SigError::Shape(format!(
            "rate mismatch: {} vs {} Hz",
            meg.sample_rate(),
            emb.sample_rate()
        )));
    }
    if meg.samples() != emb.samples() {
        return Err(SigError::Shape(format!(
            "length mismatch: {} vs {} samples",
            meg.samples(),
            emb.samples()
        )));
    }
    let n = integer_ratio(shift_s * meg.sample_rate(), "shift in samples")?;
    let t = meg.samples();
    if n >= t {
        return Err(SigError::TooShort {
            samples: t,
            needed: n + 1,
        });
    }
    if n == 0 {
        return Ok((meg.clone(), emb.clone()));
    }
    Ok((meg.slice(n, t)?, emb.slice(0, t - n)?))
}

/// Window starts (in samples) for windows of `duration_s` with fractional
/// `overlap`. Windows lie fully inside the series; a trailing partial
/// window is dropped.
pub fn segment_starts(
    samples: usize,
    sample_rate: f64,
    duration_s: f64,
    overlap: f64,
) -> Result<(usize, Vec<usize>), SigError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(SigError::Shape(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    let len = integer_ratio(duration_s * sample_rate, "window length in samples")?;
    let hop = integer_ratio(duration_s * (1.0 - overlap) * sample_rate, "hop in samples")?;
    if len == 0 || hop == 0 {
        return Err(SigError::Shape("window and hop must be at least one sample".into()));
    }
    if samples < len {
        return Ok((len, Vec::new()));
    }
    let count = (samples - len) / hop + 1;
    Ok((len, (0..count).map(|i| i * hop).collect()))
}

pub fn segment(x: &TimeSeries, duration_s: f64, overlap: f64) -> Result<Vec<TimeSeries>, SigError> {
    let (len, starts) = segment_starts(x.samples(), x.sample_rate(), duration_s, overlap)?;
    starts.into_iter().map(|s| x.slice(s, s + len)).collect()
}

/// The neural preprocessing chain: optional band-pass and notches, lowpass,
/// decimation to the working rate, per-channel standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub bandpass_hz: Option<[f64; 2]>,
    /// Centers of ±1 Hz notches. Notches at or above Nyquist are skipped.
    pub notch_hz: Vec<f64>,
    pub lowpass_hz: f64,
    pub target_rate: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            bandpass_hz: None,
            notch_hz: vec![50.0, 100.0, 150.0],
            lowpass_hz: 4.0,
            target_rate: 40.0,
        }
    }
}

/// Runs the full chain; returns the series and its constant channels.
pub fn preprocess(x: &TimeSeries, cfg: &PreprocessConfig) -> Result<(TimeSeries, Vec<usize>), SigError> {
    let mut cur = x.clone();
    if let Some([lo, hi]) = cfg.bandpass_hz {
        let taps = design_fir(&FilterSpec::bandpass(lo, hi), cur.sample_rate())?;
        cur = filtfilt(&cur, &taps)?;
    }
    for &f in &cfg.notch_hz {
        if f + 1.0 >= cur.sample_rate() / 2.0 {
            continue;
        }
        let spec = FilterSpec {
            transition_hz: Some(1.0),
            ..FilterSpec::bandstop(f - 1.0, f + 1.0)
        };
        cur = filtfilt(&cur, &design_fir(&spec, cur.sample_rate())?)?;
    }
    let taps = design_fir(&FilterSpec::lowpass(cfg.lowpass_hz), cur.sample_rate())?;
    cur = filtfilt(&cur, &taps)?;
    cur = resample(&cur, cfg.target_rate)?;
    zscore_channels(&cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, t: usize, rate: f64) -> TimeSeries {
        let rows: Vec<Vec<f32>> = (0..c)
            .map(|ch| (0..t).map(|i| ((i * (ch + 1)) as f32 * 0.01).sin()).collect())
            .collect();
        TimeSeries::from_rows(&rows, rate).unwrap()
    }

    #[test]
    fn resample_120_to_40() {
        let x = ramp(2, 1200, 120.0);
        let y = resample(&x, 40.0).unwrap();
        assert_eq!(y.samples(), 400);
        assert_eq!(y.sample_rate(), 40.0);
        let odd = resample(&ramp(1, 1201, 120.0), 40.0).unwrap();
        assert_eq!(odd.samples(), 401);
        assert_eq!(resample(&x, 120.0).unwrap(), x);
        assert!(resample(&x, 50.0).is_err());
    }

    #[test]
    fn resample_keeps_dc() {
        let x = TimeSeries::from_rows(&[vec![2.5f32; 1200]], 120.0).unwrap();
        let y = resample(&x, 40.0).unwrap();
        assert!(y.channel(0).iter().all(|&v| (v - 2.5).abs() < 1e-4));
    }

    #[test]
    fn zscore_properties() {
        let mut x = ramp(3, 500, 40.0);
        x.channel_mut(1).iter_mut().for_each(|v| *v = 7.0);
        let (z, constant) = zscore_channels(&x).unwrap();
        assert_eq!(constant, vec![1]);
        assert!(z.channel(1).iter().all(|&v| v == 0.0));
        for c in [0, 2] {
            let ch: Vec<f64> = z.channel(c).iter().map(|&v| v as f64).collect();
            let (m, s) = crate::numcore::mean_std(&ch);
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-5);
        }
        let (zz, _) = zscore_channels(&z).unwrap();
        assert!(zz.tensor().max_abs_diff(z.tensor()) < 1e-5);
    }

    #[test]
    fn zscore_affine_invariant() {
        let x = ramp(2, 300, 40.0);
        let scaled = x
            .map_channels(40.0, |ch| ch.iter().map(|v| 3.7 * v - 11.0).collect())
            .unwrap();
        let (a, _) = zscore_channels(&x).unwrap();
        let (b, _) = zscore_channels(&scaled).unwrap();
        assert!(a.tensor().max_abs_diff(b.tensor()) < 1e-5);
    }

    #[test]
    fn shift_alignment() {
        let meg = ramp(2, 100, 40.0);
        let emb = ramp(3, 100, 40.0);
        let (m, e) = shift_align(&meg, &emb, 0.25).unwrap();
        assert_eq!(m.samples(), 90);
        assert_eq!(e.samples(), 90);
        assert_eq!(m.at(0, 0), meg.at(0, 10));
        assert_eq!(e.at(2, 89), emb.at(2, 89));
        let (m0, e0) = shift_align(&meg, &emb, 0.0).unwrap();
        assert_eq!((m0, e0), (meg.clone(), emb.clone()));
        assert!(shift_align(&meg, &emb, 2.5).is_err());
        assert!(shift_align(&meg, &emb, 0.013).is_err());
    }

    #[test]
    fn segment_counts() {
        let (len, starts) = segment_starts(60 * 40, 40.0, 10.0, 0.8).unwrap();
        assert_eq!(len, 400);
        assert_eq!(starts.len(), 26);
        assert!(starts.iter().enumerate().all(|(i, &s)| s == i * 80));
        assert!(starts.iter().all(|&s| s + len <= 2400));
        assert_eq!(segment_starts(30 * 40, 40.0, 10.0, 0.0).unwrap().1.len(), 3);
        assert_eq!(segment_starts(399, 40.0, 10.0, 0.0).unwrap().1.len(), 0);
        let x = ramp(1, 1210, 40.0);
        let segs = segment(&x, 10.0, 0.0).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[2].channel(0), &x.channel(0)[800..1200]);
    }

    #[test]
    fn per_trial_floor_rule_reproduces_test_set_counts() {
        // Non-overlapping windows are cut per trial and the remainder is
        // dropped, so the count is Σ floor(len_i / d). Eight trials of these
        // lengths (seconds) give the published 1210 / 723 / 359 counts.
        let trials = [393.0, 419.0, 435.0, 444.0, 469.0, 480.0, 489.0, 506.0];
        let count = |d: f64| -> usize {
            trials
                .iter()
                .map(|&s| segment_starts((s * 40.0) as usize, 40.0, d, 0.0).unwrap().1.len())
                .sum()
        };
        assert_eq!((count(3.0), count(5.0), count(10.0)), (1210, 723, 359));
    }

    #[test]
    fn pipeline_is_composition_of_stages() {
        let x = ramp(3, 2400, 120.0);
        let cfg = PreprocessConfig::default();
        let (p, _) = preprocess(&x, &cfg).unwrap();
        let taps = design_fir(&FilterSpec::lowpass(4.0), 120.0).unwrap();
        // of the default notches only 50 Hz lies below Nyquist at 120 Hz
        let mut with_notch = x.clone();
        let spec = FilterSpec {
            transition_hz: Some(1.0),
            ..FilterSpec::bandstop(49.0, 51.0)
        };
        with_notch = filtfilt(&with_notch, &design_fir(&spec, 120.0).unwrap()).unwrap();
        let mut m2 = filtfilt(&with_notch, &taps).unwrap();
        m2 = resample(&m2, 40.0).unwrap();
        let (m2, _) = zscore_channels(&m2).unwrap();
        assert_eq!(p, m2);
    }
}
