use super::*;
use crate::corpus::EmbeddingTable;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.sample::<f32, _>(StandardNormal))
}

#[test]
fn rank_accuracy_endpoints_and_affinity() {
    for m in 2..100 {
        assert_eq!(rank_accuracy(1, m), 1.0);
        assert_eq!(rank_accuracy(m, m), 0.0);
    }
    for r in 1..=10 {
        assert!((rank_accuracy(r, 10) - (10 - r) as f64 / 9.0).abs() < 1e-15);
    }
}

#[test]
fn oracle_retrieval_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth: Vec<Tensor<f32>> = (0..40).map(|_| noise(&mut rng, &[4, 30])).collect();
    let s = segment_retrieval(&truth, &truth).unwrap();
    assert!(s.results.iter().all(|r| r.rank == 1 && r.candidates == 40));
    assert_eq!((s.top10_accuracy, s.rank_accuracy), (1.0, 1.0));
}

#[test]
fn random_retrieval_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth: Vec<Tensor<f32>> = (0..600).map(|_| noise(&mut rng, &[3, 20])).collect();
    let recon: Vec<Tensor<f32>> = (0..600).map(|_| noise(&mut rng, &[3, 20])).collect();
    let s = segment_retrieval(&recon, &truth).unwrap();
    assert!((s.rank_accuracy - 0.5).abs() < 0.03, "{}", s.rank_accuracy);
    let by_rank = s.results.iter().filter(|r| r.rank <= 10).count() as f64 / 600.0;
    assert_eq!(s.top10_accuracy, by_rank);
}

#[test]
fn ties_count_against_the_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth: Vec<Tensor<f32>> = (0..12).map(|_| noise(&mut rng, &[2, 10])).collect();
    let flat = vec![Tensor::full(&[2, 10], 1.0f32); 12];
    let s = segment_retrieval(&flat, &truth).unwrap();
    assert!(s.results.iter().all(|r| r.rank == 12 && !r.top10));
    assert_eq!(s.rank_accuracy, 0.0);
}

#[test]
fn retrieval_errors() {
    let one = vec![Tensor::<f32>::zeros(&[2, 5])];
    assert!(matches!(segment_retrieval(&one, &one), Err(EvalError::TooFewCandidates(1))));
    let a = vec![Tensor::<f32>::zeros(&[2, 5]), Tensor::zeros(&[2, 5])];
    let b = vec![Tensor::<f32>::zeros(&[2, 5]), Tensor::zeros(&[2, 6])];
    assert!(matches!(segment_retrieval(&a, &b), Err(EvalError::Shape(_))));
}

#[test]
fn retrieval_by_duration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials: Vec<EmbeddingSeries> = (0..3)
        .map(|_| EmbeddingSeries::new(noise(&mut rng, &[4, 40 * 65]), 40.0).unwrap())
        .collect();
    let rows = retrieval_by_duration(&trials, &trials, &[3.0, 5.0, 10.0]).unwrap();
    assert_eq!(rows.iter().map(|r| r.segments).collect::<Vec<_>>(), vec![63, 39, 18]);
    for r in &rows {
        assert_eq!((r.top10_accuracy, r.rank_accuracy), (1.0, 1.0));
    }
    assert!((rows[0].chance_top10 - 10.0 / 63.0).abs() < 1e-15);
    let text = render_retrieval_text(&rows);
    assert_eq!(text.lines().count(), 4);
}

/// Orthogonal unit vectors with id 0 zero.
fn basis(v: usize) -> EmbeddingTable {
    EmbeddingTable::from_tensor(Tensor::from_fn(&[v, v], |i| {
        let (r, c) = (i / v, i % v);
        if r == c && r != 0 {
            1.0
        } else {
            0.0
        }
    }))
    .unwrap()
}

#[test]
fn builtin_scorer_cases() {
    let t = basis(6);
    assert_eq!(builtin_scorer(&[1, 2, 3], &[3, 1, 2], &t), 1.0);
    assert_eq!(builtin_scorer(&[1, 2], &[3, 4], &t), 0.0);
    assert!((builtin_scorer(&[1, 2], &[1, 3], &t) - 0.5).abs() < 1e-12);
    assert_eq!(builtin_scorer(&[], &[1], &t), 0.0);
    assert_eq!(builtin_scorer(&[1], &[], &t), 0.0);
    // negative cosines clamp to zero
    let neg = EmbeddingTable::from_tensor(Tensor::from_vec(&[3, 2], vec![0.0, 0.0, 1.0, 0.0, -1.0, 0.0]).unwrap()).unwrap();
    assert_eq!(builtin_scorer(&[1], &[2], &neg), 0.0);
}

proptest! {
    #[test]
    fn builtin_scorer_symmetric_and_monotone(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 12;
        let t = EmbeddingTable::from_tensor(Tensor::from_fn(&[v, 5], |_| rng.random_range(-1.0f32..1.0))).unwrap();
        let a: Vec<u32> = (0..n).map(|_| rng.random_range(1..v as u32)).collect();
        let b: Vec<u32> = (0..n).map(|_| rng.random_range(1..v as u32)).collect();
        let s = builtin_scorer(&a, &b, &t);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - builtin_scorer(&b, &a, &t)).abs() < 1e-12);
        // a word present in both sides matches itself with cosine 1
        let w = rng.random_range(1..v as u32);
        let (mut a2, mut b2) = (a.clone(), b.clone());
        a2.push(w);
        b2.push(w);
        prop_assert!(builtin_scorer(&a2, &b2, &t) >= s - 1e-12);
    }
}

#[test]
fn windows_cover_every_second() {
    let t = basis(5);
    let scorer = BuiltinScorer { table: &t };
    let words: Vec<(u32, f64)> = (0..100).map(|i| ((i % 4 + 1) as u32, i as f64 * 0.59)).collect();
    let w = window_similarity(&words, &words, 60.0, DEFAULT_WINDOW_S, DEFAULT_STRIDE_S, &scorer).unwrap();
    assert_eq!(w.len(), 60);
    assert!(w.iter().all(|&s| s == 1.0));
    assert_eq!(window_similarity(&words, &words, 59.5, 20.0, 1.0, &scorer).unwrap().len(), 60);
    assert!(matches!(window_similarity(&words, &[], 60.0, 20.0, 1.0, &scorer), Err(EvalError::EmptyTrial(_))));
    assert!(window_similarity(&words, &words, 0.0, 20.0, 1.0, &scorer).is_err());
    // an edge window only sees words after zero
    let edge = window_similarity(&[(1, 0.0)], &[(1, 0.0), (2, 9.0), (3, 10.5)], 11.0, 20.0, 1.0, &scorer).unwrap();
    assert!((edge[0] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn permutation_pvalue_cases() {
    let nulls: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
    assert_eq!(permutation_pvalue(2.0, &nulls, PValueMode::AddOne).unwrap(), 1.0 / 501.0);
    assert_eq!(permutation_pvalue(2.0, &nulls, PValueMode::Raw).unwrap(), 0.0);
    let mid = permutation_pvalue(0.5, &nulls, PValueMode::AddOne).unwrap();
    assert!((mid - 0.5).abs() < 0.01);
    assert!(matches!(permutation_pvalue(0.0, &[], PValueMode::AddOne), Err(EvalError::EmptyNulls(_))));
}

#[test]
fn pvalues_are_super_uniform_under_the_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hits = 0;
    for _ in 0..1000 {
        let nulls: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let real: f64 = rng.random();
        if permutation_pvalue(real, &nulls, PValueMode::AddOne).unwrap() < SIGNIFICANCE_LEVEL {
            hits += 1;
        }
    }
    assert!(hits as f64 / 1000.0 <= 0.07, "{hits}");
}

fn trial(id: &str, nulls: usize, rng: &mut ChaCha8Rng) -> TrialInput {
    let truth: Vec<(u32, f64)> = (0..40).map(|i| (rng.random_range(1..5), i as f64 * 0.6)).collect();
    TrialInput {
        id: id.into(),
        trial_len_s: 24.0,
        decoded: truth.clone(),
        nulls: (0..nulls)
            .map(|_| truth.iter().map(|&(w, t)| (if rng.random_bool(0.5) { w } else { rng.random_range(5..10) }, t)).collect())
            .collect(),
        truth,
    }
}

#[test]
fn sequence_evaluation_and_score_exchange() {
    let t = basis(10);
    let scorer = BuiltinScorer { table: &t };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let trials = vec![trial("t0", MIN_NULLS, &mut rng), trial("t1", MIN_NULLS, &mut rng)];
    let scores = WindowScores::compute(&trials, &scorer, 20.0, 1.0).unwrap();
    assert_eq!(scores.units.len(), 2 * (MIN_NULLS + 1));
    let rep = evaluate_sequences(&trials, &scores, "builtin", PValueMode::AddOne, 20.0, 1.0).unwrap();
    assert_eq!(rep.trials.len(), 2);
    assert_eq!(rep.trial_accuracy, 100.0);
    assert!(rep.mean_score == 1.0 && rep.mean_null_score < 0.9);
    assert!(rep.trials.iter().all(|r| r.window_scores.len() == 24 && r.window_p.len() == 24));
    let json = serde_json::to_string(&rep).unwrap();
    assert_eq!(serde_json::from_str::<SequenceReport>(&json).unwrap(), rep);
    assert!(render_sequence_text(&rep).contains("trial acc %"));
    let svg = render_score_svg(&rep.trials[0], 1.0, SIGNIFICANCE_LEVEL);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    let text = export_window_scores(&scores, 1.0);
    let back = import_window_scores(&text, 1.0).unwrap();
    assert_eq!(back, scores);
    let again = evaluate_sequences(&trials, &back, "external", PValueMode::AddOne, 20.0, 1.0).unwrap();
    assert_eq!(again.trials, rep.trials);

    let dropped: String = text.lines().filter(|l| !l.starts_with("t1\t7\t")).map(|l| format!("{l}\n")).collect();
    let gappy = import_window_scores(&dropped, 1.0).unwrap();
    match evaluate_sequences(&trials, &gappy, "external", PValueMode::AddOne, 20.0, 1.0) {
        Err(EvalError::MissingScores(g)) => assert_eq!(g, vec!["t1@7".to_string()]),
        other => panic!("expected gap error, got {other:?}"),
    }
    let dup = format!("{text}t0\t3\t0.5\n");
    assert!(matches!(import_window_scores(&dup, 1.0), Err(EvalError::Format(_))));
    assert!(import_window_scores("t0\t0.5\t1\n", 1.0).is_err());
}

#[test]
fn sequence_evaluation_needs_enough_nulls() {
    let t = basis(10);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = vec![trial("t0", 10, &mut rng)];
    let scores = WindowScores::compute(&trials, &BuiltinScorer { table: &t }, 20.0, 1.0).unwrap();
    assert!(matches!(
        evaluate_sequences(&trials, &scores, "builtin", PValueMode::AddOne, 20.0, 1.0),
        Err(EvalError::EmptyNulls(_))
    ));
}
