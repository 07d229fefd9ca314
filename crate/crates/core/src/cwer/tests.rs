use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{from_bytes, to_bytes};
use super::*;
use crate::numcore::{GradCheck, GradTape, NormalizedSeries, Var};

fn tiny(mode: SubjectMode) -> CwerConfig {
    CwerConfig {
        hidden1: 8,
        hidden2: 6,
        n_blocks: 2,
        kernel: 3,
        mode,
        ..CwerConfig::new(5, 4, 3)
    }
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

fn set_identity(model: &mut CwerModel) {
    for m in &mut model.nets[0].subject {
        let d = m.rows();
        *m = Tensor::eye(d);
    }
}

#[test]
fn shape_contract() {
    let cfg = CwerConfig {
        hidden1: 16,
        hidden2: 16,
        ..CwerConfig::new(32, 12, 2)
    };
    let model = CwerModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let x = rand_tensor(&[32, 400], 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(model.forward(&x, 1, false, &mut rng).unwrap().shape(), &[12, 400]);
    assert_eq!(model.forward(&x, 1, true, &mut rng).unwrap().shape(), &[12, 400]);
    for t in [1, 7, 33] {
        let x = rand_tensor(&[32, t], t as u64);
        assert_eq!(model.forward(&x, 0, false, &mut rng).unwrap().shape(), &[12, t]);
    }
    let bad = rand_tensor(&[31, 50], 3);
    assert!(matches!(
        model.forward(&bad, 0, false, &mut rng),
        Err(CwerError::ChannelMismatch { expected: 32, found: 31 })
    ));
    assert!(matches!(
        model.forward(&x, 2, false, &mut rng),
        Err(CwerError::UnknownSubject { .. })
    ));
}

#[test]
fn identity_subject_layers_agree_and_match_no_subject_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = CwerModel::init(tiny(SubjectMode::SubjectLayer), &mut rng).unwrap();
    set_identity(&mut model);
    let x = rand_tensor(&[5, 60], 5);
    let outs: Vec<Tensor<f32>> = (0..3).map(|s| model.forward(&x, s, false, &mut rng).unwrap()).collect();
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
    let mut plain = model.clone();
    plain.config.mode = SubjectMode::NoSubjectLayer;
    plain.nets[0].subject.clear();
    assert_eq!(plain.forward(&x, 1, false, &mut rng).unwrap(), outs[1]);
}

#[test]
fn zero_input_zero_biases_give_zero_output() {
    let model = CwerModel::init(tiny(SubjectMode::SubjectLayer), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let x = Tensor::zeros(&[5, 40]);
    let z = model.forward(&x, 2, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn eval_is_deterministic_and_training_is_seeded() {
    let model = CwerModel::init(tiny(SubjectMode::SubjectLayer), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let x = rand_tensor(&[5, 50], 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = model.forward(&x, 0, false, &mut rng).unwrap();
    let b = model.forward(&x, 0, false, &mut rng).unwrap();
    assert_eq!(a, b);
    let ts = TimeSeries::new(x.clone(), 40.0).unwrap();
    assert_eq!(model.reconstruct(&ts, 0).unwrap().tensor(), &a);
    let t1 = model.forward(&x, 0, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let t2 = model.forward(&x, 0, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(t1, t2);
    assert_ne!(t1, a);
}

#[test]
fn negatives_exclude_positive_and_are_distinct() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        assert_eq!(sample_negatives(2, 0, 1, &mut rng).unwrap(), vec![1]);
        assert_eq!(sample_negatives(2, 1, 1, &mut rng).unwrap(), vec![0]);
    }
    for pos in [0, 17, 99] {
        let mut negs = sample_negatives(100, pos, 60, &mut rng).unwrap();
        assert!(!negs.contains(&pos));
        negs.sort();
        negs.dedup();
        assert_eq!(negs.len(), 60);
    }
    assert!(matches!(sample_negatives(10, 0, 10, &mut rng), Err(CwerError::TooFewSegments { .. })));
}

#[test]
fn negatives_are_uniform() {
    // Single draws from 100 segments: each other index has p = 1/99.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 10_000;
    let mut counts = [0usize; 100];
    for _ in 0..draws {
        counts[sample_negatives(100, 42, 1, &mut rng).unwrap()[0]] += 1;
    }
    assert_eq!(counts[42], 0);
    let p = 1.0 / 99.0;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    // 3σ per cell; allow the handful of excursions expected over 99 cells.
    let outside = counts
        .iter()
        .enumerate()
        .filter(|&(i, &c)| i != 42 && (c as f64 - mean).abs() > 3.0 * sd)
        .count();
    assert!(outside <= 2, "{outside} cells outside 3σ");
    assert!(counts.iter().enumerate().all(|(i, &c)| i == 42 || (c as f64 - mean).abs() < 5.0 * sd));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    for mode in [SubjectMode::SubjectLayer, SubjectMode::NoSubjectLayer, SubjectMode::PerSubjectModel] {
        let model = CwerModel::init(tiny(mode), &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let bytes = to_bytes(&model);
        assert_eq!(&bytes[..4], b"CWER");
        let back = from_bytes(&bytes, Some(&model.config)).unwrap();
        assert_eq!(back, model);
        assert_eq!(to_bytes(&back), bytes);
        let mut bad = bytes.clone();
        bad[bytes.len() / 2] ^= 0x10;
        assert!(matches!(from_bytes(&bad, None), Err(CwerError::Checksum)));
    }
    let no_subj = CwerModel::init(tiny(SubjectMode::NoSubjectLayer), &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
    let err = from_bytes(&to_bytes(&no_subj), Some(&tiny(SubjectMode::SubjectLayer))).unwrap_err();
    assert!(matches!(err, CwerError::ConfigMismatch { .. }));
    assert!(matches!(from_bytes(b"NOPE0000", None), Err(CwerError::Format(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cwer");
    save_model(&no_subj, &path).unwrap();
    assert_eq!(load_model(&path, None).unwrap(), no_subj);
}

fn planted_segments(n: usize, steps: usize, seed: u64) -> Vec<Segment> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = rand_tensor(&[4, 4], 0xabc);
    (0..n)
        .map(|i| {
            let z = Tensor::from_fn(&[4, steps], |_| rng.random_range(-1.0f32..1.0));
            let mut x = Tensor::zeros(&[4, steps]);
            crate::numcore::Real::gemm(x.as_mat_mut(), mix.as_mat(), z.as_mat(), false);
            Segment { x, z, subject: i % 2 }
        })
        .collect()
}

fn planted_config(mode: SubjectMode) -> CwerConfig {
    CwerConfig {
        hidden1: 16,
        hidden2: 16,
        n_blocks: 1,
        kernel: 3,
        dropout: 0.0,
        mode,
        ..CwerConfig::new(4, 4, 2)
    }
}

#[test]
fn planted_linear_problem_beats_half_chance() {
    let train_set = planted_segments(64, 20, 1);
    let held = planted_segments(32, 20, 2);
    let tcfg = TrainConfig {
        lr: 3e-3,
        batch: 8,
        n_contrast: 16,
        tau: 0.1,
        patience: 5,
        max_epochs: 50,
        seed: 3,
    };
    let (_, report) = train(&planted_config(SubjectMode::SubjectLayer), &train_set, &held, &tcfg).unwrap();
    let best = report.nets[0].heldout_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    let chance = (16f64).ln();
    assert!(best < chance / 2.0, "best heldout {best}, chance {chance}, {report:?}");
}

#[test]
fn training_is_reproducible() {
    let train_set = planted_segments(24, 12, 4);
    let held = planted_segments(8, 12, 5);
    let tcfg = TrainConfig {
        lr: 1e-3,
        batch: 4,
        n_contrast: 8,
        max_epochs: 3,
        seed: 6,
        ..TrainConfig::default()
    };
    let mut cfg = planted_config(SubjectMode::PerSubjectModel);
    cfg.dropout = 0.3;
    let (m1, r1) = train(&cfg, &train_set, &held, &tcfg).unwrap();
    let (m2, r2) = train(&cfg, &train_set, &held, &tcfg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    assert_eq!(r1.nets.len(), 2);
    let too_few = TrainConfig {
        n_contrast: 64,
        ..tcfg
    };
    assert!(matches!(train(&cfg, &train_set, &held, &too_few), Err(CwerError::TooFewSegments { .. })));
}

fn batch_loss(net: &CwerParams, segs: &[Segment], cands: &[Vec<&NormalizedSeries>], tau: f64) -> f64 {
    segs.iter()
        .zip(cands)
        .map(|(s, c)| {
            sample_loss_grad::<ChaCha8Rng>(net, &s.x, s.subject, c, tau, None).unwrap().0
        })
        .sum()
}

#[test]
fn small_step_descends_and_touches_only_active_subject() {
    let cfg = planted_config(SubjectMode::SubjectLayer);
    let mut model = CwerModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let segs: Vec<Segment> = planted_segments(8, 16, 8).into_iter().map(|s| Segment { subject: 1, ..s }).collect();
    let norm: Vec<NormalizedSeries> = segs.iter().map(|s| NormalizedSeries::new(&s.z)).collect();
    let cands: Vec<Vec<&NormalizedSeries>> = (0..segs.len())
        .map(|i| (0..segs.len()).map(|j| &norm[(i + j) % segs.len()]).collect())
        .collect();
    let before = batch_loss(&model.nets[0], &segs, &cands, 0.1);

    let mut acc = model.nets[0].map(|t| Tensor::zeros(t.shape()));
    for (s, c) in segs.iter().zip(&cands) {
        let (_, g) = sample_loss_grad::<ChaCha8Rng>(&model.nets[0], &s.x, s.subject, c, 0.1, None).unwrap();
        assert!(g.subject[0].is_none() && g.subject[1].is_some());
        for (a, g) in acc.params_mut().into_iter().zip(g.named()) {
            if let Some(g) = g.1 {
                a.add_assign(g);
            }
        }
    }
    let old = model.nets[0].clone();
    let refs: Vec<&Tensor<f32>> = model.nets[0].named().into_iter().map(|(_, t)| t).collect();
    let mut adam = crate::numcore::AdamState::with_lr(&refs, 1e-6);
    let grads: Vec<&Tensor<f32>> = acc.named().into_iter().map(|(_, t)| t).collect();
    adam.step(&mut model.nets[0].params_mut(), &grads).unwrap();
    let after = batch_loss(&model.nets[0], &segs, &cands, 0.1);
    assert!(after < before, "loss {before} -> {after}");
    assert_eq!(model.nets[0].subject[0], old.subject[0]);
    assert_ne!(model.nets[0].subject[1], old.subject[1]);
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let cfg = CwerConfig {
        hidden1: 4,
        hidden2: 3,
        n_blocks: 2,
        kernel: 3,
        ..CwerConfig::new(3, 4, 2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let net: CwerNet<Tensor<f64>> = CwerNet::init(&cfg, &mut rng);
    let mut net = net;
    // Nonzero biases so every path carries signal.
    for p in net.params_mut() {
        if p.shape().len() == 1 {
            *p = rand_tensor(p.shape(), p.len() as u64).cast();
        }
    }
    let x: Tensor<f64> = rand_tensor(&[3, 10], 15).cast();
    let cands: Vec<NormalizedSeries> = (0..4).map(|i| NormalizedSeries::new(&rand_tensor(&[4, 10], 20 + i))).collect();
    let mut point: Vec<Tensor<f64>> = net.named().into_iter().map(|(_, t)| t.clone()).collect();
    point.push(x);
    let template = net.clone();
    let report = GradCheck {
        max_entries: Some(400),
        ..GradCheck::default()
    }
    .run(
        |tape: &mut GradTape<f64>, vars: &[Var]| {
            let mut it = vars.iter();
            let handles = template.map(|_| *it.next().unwrap());
            let input = *it.next().unwrap();
            let out = forward_with::<f64, _, ChaCha8Rng>(tape, &handles, &input, 1, None)
                .map_err(|e| match e {
                    CwerError::Num(n) => n,
                    other => panic!("{other}"),
                })?;
            let refs: Vec<&NormalizedSeries> = cands.iter().collect();
            tape.infonce(out, &refs, 0.5)
        },
        &point,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}
