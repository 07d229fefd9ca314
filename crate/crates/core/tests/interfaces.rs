//! File interfaces through the public API: NTS1 series, TSV annotations and
//! decodes, checkpoints, and the dataset manifest.

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semdec_core::corpus::{parse_annotations_tsv, write_annotations_tsv, Vocabulary, WordAnnotation};
use semdec_core::cwer::{load_model, save_model, CwerConfig, CwerModel};
use semdec_core::decoder::{parse_decoded_tsv, write_decoded_tsv, Decoded};
use semdec_core::numcore::Tensor;
use semdec_core::sigproc::TimeSeries;
use semdec_core::synth::{generate_dataset, load_dataset, read_manifest, write_dataset, DatasetConfig, MANIFEST_FILE};

fn series(c: usize, t: usize, rate: f64) -> TimeSeries {
    TimeSeries::new(Tensor::from_fn(&[c, t], |k| ((k * 37) % 101) as f32 / 7.0 - 5.0), rate).unwrap()
}

#[test]
fn nts1_layout_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.nts");
    let x = series(3, 50, 40.0);
    x.write_nts(&p).unwrap();
    let bytes = fs::read(&p).unwrap();
    assert_eq!(&bytes[0..4], b"NTS1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 50);
    assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 40.0);
    assert_eq!(bytes.len(), 28 + 4 * 150);
    // channel-major samples
    assert_eq!(f32::from_le_bytes(bytes[28 + 4 * 50..28 + 4 * 51].try_into().unwrap()), x.at(1, 0));
    assert_eq!(TimeSeries::read_nts(&p).unwrap(), x);

    fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
    assert!(TimeSeries::read_nts(&p).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&p, bad).unwrap();
    assert!(TimeSeries::read_nts(&p).is_err());
}

#[test]
fn tsv_round_trips() {
    let words = vec![
        WordAnnotation::new("alpha", 0.0, 0.25),
        WordAnnotation::new("beta", 0.3, 0.75),
        WordAnnotation::new("gamma", 0.75, 1.125),
    ];
    let text = write_annotations_tsv(&words);
    assert_eq!(text.lines().count(), 3);
    assert_eq!(parse_annotations_tsv(&text).unwrap(), words);
    assert!(parse_annotations_tsv("alpha\t0.5\n").is_err());
    assert!(parse_annotations_tsv("alpha\t0.5\t0.2\n").is_err());

    let vocab = Vocabulary::build(&[vec!["alpha", "beta", "gamma"]], 1).unwrap();
    let decoded = Decoded {
        words: vec![vocab.id("gamma"), vocab.id("alpha"), vocab.id("beta")],
        scores: vec![0.5, -0.25, 0.125],
        cumulative: 0.375,
        fallback_steps: vec![],
    };
    let timings: Vec<(f64, f64)> = words.iter().map(|w| (w.t_on, w.t_off)).collect();
    let (back, scores) = parse_decoded_tsv(&write_decoded_tsv(&decoded, &timings, &vocab)).unwrap();
    assert_eq!(back.iter().map(|w| w.token.as_str()).collect::<Vec<_>>(), ["gamma", "alpha", "beta"]);
    assert_eq!(back.iter().map(|w| (w.t_on, w.t_off)).collect::<Vec<_>>(), timings);
    assert_eq!(scores, decoded.scores);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    let cfg = CwerConfig {
        hidden1: 6,
        hidden2: 4,
        n_blocks: 1,
        kernel: 3,
        ..CwerConfig::new(5, 4, 2)
    };
    let model = CwerModel::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    save_model(&model, &p).unwrap();
    let back = load_model(&p, Some(&cfg)).unwrap();
    let x = series(5, 60, 40.0);
    for s in 0..2 {
        assert_eq!(back.reconstruct(&x, s).unwrap(), model.reconstruct(&x, s).unwrap());
    }
    let other = CwerConfig { hidden1: 8, ..cfg };
    assert!(load_model(&p, Some(&other)).is_err());

    let mut bytes = fs::read(&p).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(&p, &bytes).unwrap();
    assert!(load_model(&p, None).is_err());
}

#[test]
fn dataset_manifest_round_trip_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = DatasetConfig::default();
    cfg.forward.subjects = 2;
    cfg.forward.channels = 6;
    cfg.forward.embed_dim = 4;
    cfg.trials_per_subject = 3;
    cfg.words_per_trial = 30;
    cfg.vocab_size = 40;
    let ds = generate_dataset(&cfg).unwrap();
    let path = write_dataset(&ds, dir.path()).unwrap();
    assert_eq!(path, dir.path().join(MANIFEST_FILE));

    let m = read_manifest(dir.path()).unwrap();
    assert_eq!(m.config, cfg);
    assert_eq!(m.trials.len(), 6);
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.vocab, ds.vocab);
    for (a, b) in back.trials.iter().zip(&ds.trials) {
        assert_eq!(a.words, b.words);
        assert_eq!(a.meg, b.meg);
        assert_eq!(a.split, b.split);
    }

    let json = fs::read_to_string(&path).unwrap();
    let first = json.find(".nts").map(|i| &json[..i + 4]).unwrap();
    let name = &first[first.rfind('"').unwrap() + 1..];
    let victim = dir.path().join(name);
    let mut bytes = fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x10;
    fs::write(&victim, bytes).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}
