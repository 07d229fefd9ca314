use super::{validate_annotations, CorpusError, WordAnnotation};
use crate::numcore::{mean_std, Tensor};
use crate::sigproc::{design_fir, filtfilt, zscore_channels, EmbeddingSeries, FilterSpec, TimeSeries};

/// Lowpass applied to rasterized embeddings, matching the neural pipeline.
pub const RASTER_LOWPASS_HZ: f64 = 4.0;

/// Sample range `[floor(t_on·rate), floor(t_off·rate))` of a word.
pub fn word_slot(w: &WordAnnotation, rate: f64) -> (usize, usize) {
    ((w.t_on * rate).floor() as usize, (w.t_off * rate).floor() as usize)
}

/// Piecewise-constant `[D, T]` series: each word's slot carries its vector,
/// gaps are zero. `vectors` is `[W, D]`, one row per annotation.
pub fn rasterize_raw(
    words: &[WordAnnotation],
    vectors: &Tensor<f32>,
    rate: f64,
    trial_len_s: f64,
) -> Result<EmbeddingSeries, CorpusError> {
    validate_annotations(words)?;
    if vectors.rows() != words.len() {
        return Err(CorpusError::CountMismatch {
            expected: words.len(),
            found: vectors.rows(),
        });
    }
    if let Some(last) = words.last() {
        if last.t_off > trial_len_s + 1e-9 {
            return Err(CorpusError::Annotation(format!(
                "word {:?} ends at {} s beyond the trial length {trial_len_s} s",
                last.token, last.t_off
            )));
        }
    }
    let d = vectors.cols();
    let t = (trial_len_s * rate).round() as usize;
    let mut out = TimeSeries::zeros(d, t, rate)?;
    for (i, w) in words.iter().enumerate() {
        let (a, b) = word_slot(w, rate);
        let b = b.min(t);
        for (k, &v) in vectors.row(i).iter().enumerate() {
            out.channel_mut(k)[a.min(b)..b].fill(v);
        }
    }
    Ok(out)
}

/// Output of [`rasterize`].
#[derive(Clone, Debug)]
pub struct Rasterized {
    /// Filtered and standardized `D × T` series.
    pub series: EmbeddingSeries,
    /// Dimensions that were constant after filtering (set to zero).
    pub constant: Vec<usize>,
    /// Per-dimension mean and standard deviation removed by the
    /// standardization.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// [`rasterize_raw`] followed by a 4 Hz zero-phase lowpass and per-dimension
/// standardization.
pub fn rasterize(
    words: &[WordAnnotation],
    vectors: &Tensor<f32>,
    rate: f64,
    trial_len_s: f64,
) -> Result<Rasterized, CorpusError> {
    let raw = rasterize_raw(words, vectors, rate, trial_len_s)?;
    let taps = design_fir(&FilterSpec::lowpass(RASTER_LOWPASS_HZ), rate)?;
    let filtered = filtfilt(&raw, &taps)?;
    let (mean, sd): (Vec<f64>, Vec<f64>) = (0..filtered.channels())
        .map(|c| {
            let ch: Vec<f64> = filtered.channel(c).iter().map(|&v| v as f64).collect();
            mean_std(&ch)
        })
        .unzip();
    let (series, constant) = zscore_channels(&filtered)?;
    Ok(Rasterized {
        series,
        constant,
        mean,
        sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(rows: &[&[f32]]) -> Tensor<f32> {
        let d = rows[0].len();
        Tensor::from_vec(&[rows.len(), d], rows.concat()).unwrap()
    }

    #[test]
    fn word_slot_samples() {
        let w = [WordAnnotation::new("a", 1.0, 1.5)];
        let s = rasterize_raw(&w, &vecs(&[&[2.0, -1.0]]), 40.0, 3.0).unwrap();
        for t in 0..s.samples() {
            let inside = (40..60).contains(&t);
            assert_eq!(s.at(0, t), if inside { 2.0 } else { 0.0 }, "t={t}");
            assert_eq!(s.at(1, t), if inside { -1.0 } else { 0.0 });
        }
    }

    #[test]
    fn whole_trial_word_is_constant() {
        let w = [WordAnnotation::new("a", 0.0, 2.0)];
        let s = rasterize_raw(&w, &vecs(&[&[0.5, 0.25]]), 40.0, 2.0).unwrap();
        assert!(s.channel(0).iter().all(|&v| v == 0.5));
        assert!(s.channel(1).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn silence_gives_zero_and_constant_dims() {
        let empty = Tensor::<f32>::zeros(&[0, 3]);
        let raw = rasterize_raw(&[], &empty, 40.0, 15.0).unwrap();
        assert!(raw.tensor().data().iter().all(|&v| v == 0.0));
        let r = rasterize(&[], &empty, 40.0, 15.0).unwrap();
        assert_eq!(r.constant, vec![0, 1, 2]);
        assert!(r.series.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjacent_words_do_not_share_samples() {
        let w = [WordAnnotation::new("a", 0.1, 0.5), WordAnnotation::new("b", 0.5, 0.9)];
        let s = rasterize_raw(&w, &vecs(&[&[1.0, 0.0], &[2.0, 0.0]]), 40.0, 1.0).unwrap();
        assert_eq!(s.at(0, 19), 1.0);
        assert_eq!(s.at(0, 20), 2.0);
        assert_eq!(s.at(0, 35), 2.0);
        assert_eq!(s.at(0, 36), 0.0);
    }

    #[test]
    fn errors() {
        let v = vecs(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let overlap = [WordAnnotation::new("a", 0.1, 0.6), WordAnnotation::new("b", 0.5, 0.9)];
        assert!(matches!(rasterize_raw(&overlap, &v, 40.0, 1.0), Err(CorpusError::Annotation(_))));
        let late = [WordAnnotation::new("a", 0.1, 0.6), WordAnnotation::new("b", 0.7, 1.9)];
        assert!(rasterize_raw(&late, &v, 40.0, 1.0).is_err());
        assert!(rasterize_raw(&late[..1], &v, 40.0, 1.0).is_err());
    }

    #[test]
    fn filtered_series_is_standardized() {
        let words: Vec<_> = (0..30)
            .map(|i| WordAnnotation::new("w", i as f64 * 0.5, i as f64 * 0.5 + 0.3))
            .collect();
        let v = Tensor::from_fn(&[30, 2], |k| ((k * 7919) % 13) as f32 - 6.0);
        let r = rasterize(&words, &v, 40.0, 16.0).unwrap();
        assert!(r.constant.is_empty());
        let s = r.series;
        for c in 0..2 {
            let ch: Vec<f64> = s.channel(c).iter().map(|&x| x as f64).collect();
            let (m, sd) = crate::numcore::mean_std(&ch);
            assert!(m.abs() < 1e-4 && (sd - 1.0).abs() < 1e-4);
        }
    }
}
