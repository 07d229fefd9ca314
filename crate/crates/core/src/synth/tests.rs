use super::*;
use crate::numcore::pearson;
use crate::ridge::{RidgeConfig, RidgeModel, RidgeTrial};

fn white_z(d: usize, t: usize, seed: u64, rate: f64) -> EmbeddingSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingSeries::new(Tensor::from_fn(&[d, t], |_| rng.sample::<f32, _>(StandardNormal)), rate).unwrap()
}

fn small(subjects: usize) -> ForwardModelConfig {
    ForwardModelConfig {
        subjects,
        channels: 6,
        embed_dim: 4,
        ..ForwardModelConfig::default()
    }
}

#[test]
fn text_timing_bounds_and_determinism() {
    let g = SourceGrammar::random(50, 2, 5, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = gen_text(&g, 100, &mut rng);
    assert_eq!(words.len(), 100);
    let mut prev_off = 0.0;
    for w in &words {
        let d = w.t_off - w.t_on;
        assert!((MIN_WORD_S..=MAX_WORD_S + 1e-12).contains(&d), "{d}");
        let gap = w.t_on - prev_off;
        assert!((0.0..=MAX_GAP_S + 1e-12).contains(&gap));
        prev_off = w.t_off;
    }
    assert!((20.0..=80.0).contains(&prev_off));
    assert_eq!(words, gen_text(&g, 100, &mut ChaCha8Rng::seed_from_u64(3)));
    assert_ne!(words, gen_text(&g, 100, &mut ChaCha8Rng::seed_from_u64(4)));
    // every transition follows the grammar
    for pair in words.windows(2) {
        let from = g.words().iter().position(|w| *w == pair[0].token).unwrap();
        assert!(g.successors(from).iter().any(|&(to, _)| g.words()[to] == pair[1].token));
    }
}

#[test]
fn grammar_shape() {
    let g = SourceGrammar::random(40, 2, 4, 9).unwrap();
    for i in 0..40 {
        let s = g.successors(i);
        assert!((2..=4).contains(&s.len()));
        assert_eq!(s[0].0, (i + 1) % 40);
        assert!(s.iter().all(|&(_, w)| (1.0..1.5).contains(&w)));
    }
    let words: std::collections::HashSet<String> = (0..2000).map(pseudo_word).collect();
    assert_eq!(words.len(), 2000);
    assert!(SourceGrammar::random(1, 1, 1, 0).is_err());
    assert!(SourceGrammar::random(10, 3, 2, 0).is_err());
}

#[test]
fn lm_source_emits_known_tokens() {
    let vocab = Vocabulary::build(&[vec!["a", "b", "c", "a", "b", "c"]], 1).unwrap();
    let ids = vocab.encode(&["a", "b", "c", "a", "b", "c"]);
    let lm = NgramLm::train(&[ids], 2, vocab.len()).unwrap();
    let src = LmSource { lm: &lm, vocab: &vocab };
    let words = gen_text(&src, 30, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(words.iter().all(|w| ["a", "b", "c"].contains(&w.token.as_str())));
}

#[test]
fn lag_kernel_shape() {
    let h = lag_kernel(16, 40.0);
    assert_eq!(h.len(), 16);
    assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let peak = (0..16).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
    assert_eq!(peak + 1, 10);
    assert_eq!(lag_kernel(0, 40.0), vec![1.0]);
}

#[test]
fn noiseless_linear_model_is_plain_mixing() {
    let cfg = ForwardModelConfig {
        alpha: 1.0,
        snr_db: f64::INFINITY,
        kernel_length_s: 0.0,
        ..small(2)
    };
    let m = ForwardModel::new(&cfg).unwrap();
    let z = white_z(4, 300, 1, 40.0);
    let x = m.simulate(&z, 1, 0).unwrap();
    let a = m.mixing(0);
    assert_eq!(m.mixing(0), m.mixing(1));
    for c in 0..6 {
        for t in 0..300 {
            let expect: f64 = (0..4).map(|k| a.at(c, k) * z.at(k, t) as f64).sum();
            assert!((x.at(c, t) as f64 - expect).abs() < 1e-5);
        }
    }
}

#[test]
fn realized_snr_and_stationarity() {
    let cfg = ForwardModelConfig {
        snr_db: 12.0,
        ..small(1)
    };
    let m = ForwardModel::new(&cfg).unwrap();
    let z = white_z(4, 2400, 2, 40.0);
    let clean = m.clean_signal(&z, 0).unwrap();
    let x = m.simulate(&z, 0, 5).unwrap();
    for (c, s) in clean.iter().enumerate() {
        let noise: Vec<f64> = s.iter().zip(x.channel(c)).map(|(&a, &b)| b as f64 - a).collect();
        let snr = 10.0 * (variance(s) / variance(&noise)).log10();
        assert!((snr - 12.0).abs() < 1.0, "channel {c}: {snr} dB");
    }
    // noise halves agree in variance (white noise, so the estimate is tight)
    let white = ForwardModelConfig { ar_rho: 0.0, ..cfg };
    let m = ForwardModel::new(&white).unwrap();
    let clean = m.clean_signal(&z, 0).unwrap();
    let x = m.simulate(&z, 0, 6).unwrap();
    for (c, s) in clean.iter().enumerate() {
        let noise: Vec<f64> = s.iter().zip(x.channel(c)).map(|(&a, &b)| b as f64 - a).collect();
        let (v1, v2) = (variance(&noise[..1200]), variance(&noise[1200..]));
        assert!((v1 / v2 - 1.0).abs() < 0.1, "{v1} vs {v2}");
    }
}

#[test]
fn streams_are_distinct() {
    let mut seen = std::collections::HashSet::new();
    for kind in [STREAM_MIXING, STREAM_TEXT, STREAM_NOISE, STREAM_GRAMMAR] {
        for s in 0..4 {
            for t in 0..4 {
                let v: u64 = stream_rng(7, kind, s, t).random();
                assert!(seen.insert(v));
            }
        }
    }
    let cfg = small(2);
    let m = ForwardModel::new(&cfg).unwrap();
    let z = white_z(4, 200, 3, 40.0);
    assert_ne!(m.simulate(&z, 0, 0).unwrap(), m.simulate(&z, 0, 1).unwrap());
    assert_eq!(m.simulate(&z, 1, 1).unwrap(), m.simulate(&z, 1, 1).unwrap());
}

fn ridge_corr(train: &[(TimeSeries, EmbeddingSeries)], test: &(TimeSeries, EmbeddingSeries), lags: i64) -> Vec<f64> {
    let cfg = RidgeConfig {
        tau1: -lags,
        tau2: lags,
        lambdas: vec![1e-2],
        folds: 2,
    };
    let trials: Vec<RidgeTrial> = train.iter().map(|(x, z)| RidgeTrial { x: x.tensor(), z: z.tensor() }).collect();
    let model = RidgeModel::fit(&trials, &cfg, 1e-2).unwrap();
    let pred = model.predict(&test.0).unwrap();
    (0..test.1.channels()).map(|k| pearson(pred.channel(k), test.1.channel(k))).collect()
}

fn pairs(m: &ForwardModel, s: usize, seeds: std::ops::Range<u64>) -> Vec<(TimeSeries, EmbeddingSeries)> {
    let d = m.config().embed_dim;
    seeds
        .map(|i| {
            let z = white_z(d, 1000, 100 + i, 40.0);
            (m.simulate(&z, s, i as usize).unwrap(), z)
        })
        .collect()
}

#[test]
fn ridge_inverts_linear_mixing() {
    // more sensors than embedding dimensions keeps the inverse well posed
    let cfg = ForwardModelConfig {
        snr_db: 20.0,
        kernel_length_s: 0.0,
        embed_dim: 8,
        ..ForwardModelConfig::default()
    };
    let m = ForwardModel::new(&cfg).unwrap();
    let own = ridge_corr(&pairs(&m, 0, 0..4), &pairs(&m, 0, 10..11)[0], 3);
    assert!(own.iter().all(|&r| r >= 0.95), "{own:?}");
}

#[test]
fn independent_subjects_do_not_transfer() {
    let cfg = ForwardModelConfig {
        alpha: 0.0,
        snr_db: 20.0,
        kernel_length_s: 0.0,
        subjects: 2,
        ..ForwardModelConfig::default()
    };
    let m = ForwardModel::new(&cfg).unwrap();
    let train = pairs(&m, 0, 0..4);
    let own = ridge_corr(&train, &pairs(&m, 0, 10..11)[0], 0);
    assert!(own.iter().sum::<f64>() / 32.0 > 0.8);
    // mean transfer correlation over dimensions
    let other = ridge_corr(&train, &pairs(&m, 1, 10..11)[0], 0);
    let mean = other.iter().sum::<f64>() / other.len() as f64;
    assert!(mean.abs() < 0.1, "{mean}: {other:?}");
}

#[test]
fn config_validation_names_the_field() {
    let bad = ForwardModelConfig {
        alpha: 1.5,
        ..ForwardModelConfig::default()
    };
    match bad.validate() {
        Err(SynthError::Config { field, .. }) => assert_eq!(field, "alpha"),
        other => panic!("{other:?}"),
    }
    assert!(ForwardModelConfig { ar_rho: 1.0, ..ForwardModelConfig::default() }.validate().is_err());
    assert!(ForwardModelConfig { subjects: 0, ..ForwardModelConfig::default() }.validate().is_err());
    assert!(serde_json::from_str::<ForwardModelConfig>(r#"{"alpah": 0.5}"#).is_err());
    let z = white_z(3, 100, 0, 40.0);
    let m = ForwardModel::new(&small(1)).unwrap();
    assert!(matches!(m.simulate(&z, 0, 0), Err(SynthError::DimensionMismatch { .. })));
}

fn tiny_dataset() -> DatasetConfig {
    DatasetConfig {
        forward: ForwardModelConfig {
            subjects: 2,
            channels: 6,
            embed_dim: 4,
            seed: 11,
            ..ForwardModelConfig::default()
        },
        trials_per_subject: 5,
        words_per_trial: 60,
        vocab_size: 30,
        ..DatasetConfig::default()
    }
}

#[test]
fn dataset_split_shapes_and_files() {
    let cfg = tiny_dataset();
    let ds = generate_dataset(&cfg).unwrap();
    assert_eq!(ds.trials.len(), 10);
    assert_eq!(ds.split(Split::Test).count(), 2);
    assert!(ds.split(Split::Test).all(|t| t.index == 4));
    for t in &ds.trials {
        assert_eq!(t.meg.channels(), 6);
        assert_eq!(t.meg.samples(), (t.duration_s * 40.0).round() as usize);
        assert_eq!(t.vectors.shape(), &[60, 4]);
        assert!(t.ids.iter().all(|&i| i != crate::corpus::UNK_ID));
    }
    // distinct text for every trial
    assert_ne!(ds.trials[0].words, ds.trials[5].words);
    assert_eq!(DatasetConfig::default().test_trials(), 4);

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = write_dataset(&ds, &a.path().join("nested/out")).unwrap();
    write_dataset(&generate_dataset(&cfg).unwrap(), b.path()).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    let m = read_manifest(b.path()).unwrap();
    for e in &m.trials {
        let da = std::fs::read(a.path().join("nested/out").join(&e.meg.path)).unwrap();
        let db = std::fs::read(b.path().join(&e.meg.path)).unwrap();
        assert_eq!(da, db);
    }
    let back = load_dataset(b.path()).unwrap();
    assert_eq!(back, ds);

    let victim = b.path().join(&m.trials[3].words.path);
    let mut text = std::fs::read_to_string(&victim).unwrap();
    text.push('\n');
    std::fs::write(&victim, text).unwrap();
    assert!(matches!(load_dataset(b.path()), Err(SynthError::Checksum(_))));
}

#[test]
fn dataset_config_rejects_single_trial() {
    let cfg = DatasetConfig {
        trials_per_subject: 1,
        ..tiny_dataset()
    };
    assert!(matches!(generate_dataset(&cfg), Err(SynthError::Config { field: "trials_per_subject", .. })));
}
