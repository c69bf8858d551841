use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use Tier::*;

#[test]
fn regression_fixtures() {
    assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
    let t = [1.0, 3.0, 2.0, 6.0];
    assert_eq!(mse(&t, &t).unwrap(), 0.0);
    assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
    assert!(r_squared(&[3.0; 4], &t).unwrap().abs() < 1e-15);
    assert_eq!(
        r_squared(&[1.0, 2.0], &[2.0, 2.0]),
        Err(EvalError::ConstantTruth)
    );
    assert_eq!(mse(&[1.0], &[1.0, 2.0]), Err(EvalError::Length(1, 2)));
    assert!(mse(&[], &[]).is_err());
}

#[test]
fn correlation_fixtures() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert!((spearman(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    assert!((spearman(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
    let exp: Vec<f64> = a.iter().map(|x| x.exp()).collect();
    assert!((spearman(&a, &exp).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(pearson(&a, &[2.0; 4]), Err(EvalError::ZeroVariance));
    assert!(matches!(
        spearman(&[1.0], &[1.0]),
        Err(EvalError::TooShort { .. })
    ));
}

#[test]
fn ties_get_fractional_ranks() {
    assert_eq!(
        fractional_ranks(&[10.0, 20.0, 10.0, 30.0]),
        vec![1.5, 3.0, 1.5, 4.0]
    );
    // Hand value: ranks a = (1.5,1.5,3,4), b = (1,2,3,4).
    let rho = spearman(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let (ma, mb) = (2.5, 2.5);
    let ra = [1.5, 1.5, 3.0, 4.0];
    let rb = [1.0, 2.0, 3.0, 4.0];
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    assert!((rho - cov / (va * vb).sqrt()).abs() < 1e-12);
}

fn family(id: &str, scores: Vec<f64>, reference: usize) -> ScoredFamily {
    let n = scores.len();
    ScoredFamily {
        molecule_id: id.into(),
        candidate_ids: (0..n).map(|i| format!("{id}#{i}")).collect(),
        keys: (0..n as u64).collect(),
        scores,
        reference_index: Some(reference),
    }
}

#[test]
fn ranking_fixtures() {
    let perfect = family("a", vec![3.0, 0.0, 1.5], 1);
    let report = topk_ranking(&[perfect], 20).unwrap();
    assert_eq!(report.hit_at(1), 1.0);
    assert_eq!(report.families[0].reference_rank, 1);
    assert_eq!(report.families[0].candidate_ids, vec!["a#1", "a#2", "a#0"]);

    let mut scores: Vec<f64> = (0..21).map(f64::from).collect();
    scores[0] = 100.0;
    let last = family("b", scores, 0);
    let report = topk_ranking(&[last], 20).unwrap();
    assert_eq!(report.hit_at(20), 0.0);
    assert_eq!(report.families[0].reference_rank, 21);
}

#[test]
fn ranking_ties_use_key() {
    let mut fam = family("t", vec![1.0, 1.0, 2.0], 1);
    assert_eq!(
        topk_ranking(&[fam.clone()], 3).unwrap().families[0].reference_rank,
        2
    );
    fam.keys = vec![9, 3, 0];
    assert_eq!(
        topk_ranking(&[fam], 3).unwrap().families[0].reference_rank,
        1
    );
}

#[test]
fn ranking_errors() {
    let mut fam = family("x", vec![1.0, 2.0], 0);
    fam.reference_index = None;
    assert_eq!(
        topk_ranking(&[fam], 5),
        Err(EvalError::NoReference("x".into()))
    );
    let tiny = family("y", vec![1.0], 0);
    assert_eq!(
        topk_ranking(&[tiny], 5),
        Err(EvalError::TooFewCandidates("y".into()))
    );
}

#[test]
fn random_scores_hit_one_in_ten() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let families: Vec<ScoredFamily> = (0..1000)
        .map(|f| {
            family(
                &format!("m{f}"),
                (0..10).map(|_| rng.random::<f64>()).collect(),
                rng.random_range(0..10),
            )
        })
        .collect();
    let report = topk_ranking(&families, 20).unwrap();
    let sd = (0.1f64 * 0.9 / 1000.0).sqrt();
    assert!(
        (report.hit_at(1) - 0.1).abs() < 3.0 * sd,
        "{}",
        report.hit_at(1)
    );
    assert_eq!(report.hit_at(10), 1.0);
    assert_eq!(report.hit_at(20), 1.0);
}

#[test]
fn classification_perfect() {
    let t = [Good, Bad, Plausible, Plausible];
    let r = classification_report(&t, &t).unwrap();
    assert_eq!(r.accuracy, 1.0);
    for c in &r.classes {
        assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
    }
    assert_eq!(r.confusion, [[1, 0, 0], [0, 2, 0], [0, 0, 1]]);
}

#[test]
fn classification_all_bad() {
    let truth = [Good, Good, Plausible, Plausible, Bad, Bad];
    let r = classification_report(&[Bad; 6], &truth).unwrap();
    let bad = r.classes.iter().find(|c| c.tier == Bad).unwrap();
    assert_eq!(bad.recall, 1.0);
    assert!((bad.precision - 1.0 / 3.0).abs() < 1e-12);
    for c in r.classes.iter().filter(|c| c.tier != Bad) {
        assert_eq!((c.precision, c.recall), (0.0, 0.0));
        assert!(c.no_predictions);
    }
}

#[test]
fn classification_hand_fixture() {
    // truth:  G G P P B B
    // pred:   G P P B B B
    let truth = [Good, Good, Plausible, Plausible, Bad, Bad];
    let pred = [Good, Plausible, Plausible, Bad, Bad, Bad];
    let r = classification_report(&pred, &truth).unwrap();
    assert_eq!(r.confusion, [[1, 1, 0], [0, 1, 1], [0, 0, 2]]);
    assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-12);
    let get = |t: Tier| *r.classes.iter().find(|c| c.tier == t).unwrap();
    let g = get(Good);
    assert_eq!((g.precision, g.recall), (1.0, 0.5));
    assert!((g.f1 - 2.0 / 3.0).abs() < 1e-12);
    let p = get(Plausible);
    assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
    let b = get(Bad);
    assert!((b.precision - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(b.recall, 1.0);
    assert!((b.f1 - 0.8).abs() < 1e-12);
    assert!(r
        .confusion_csv()
        .starts_with("true\\predicted,Good,Plausible,Bad\n"));
}

#[test]
fn kfold_constant_values() {
    let folds = stratified_kfold(&[2.0; 23], 5, 4, 1).unwrap();
    assert!(folds.collapsed);
    assert!(folds.strata.iter().all(|&s| s == 0));
    let sizes = folds.fold_sizes();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
}

#[test]
fn kfold_120_routes_five_folds() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values: Vec<f64> = (0..120).map(|_| rng.random_range(0.0..10.0)).collect();
    let folds = stratified_kfold(&values, 5, 5, 3).unwrap();
    assert_eq!(folds.fold_sizes(), vec![24; 5]);
    assert!(!folds.collapsed);
    for f in 0..5 {
        let (train, test) = folds.split(f);
        assert_eq!(train.len() + test.len(), 120);
    }
}

#[test]
fn kfold_errors() {
    assert!(stratified_kfold(&[1.0, 2.0], 5, 2, 0).is_err());
    assert!(stratified_kfold(&[1.0, 2.0, 3.0], 1, 2, 0).is_err());
    assert!(stratified_kfold(&[1.0, 2.0, 3.0], 2, 0, 0).is_err());
}

#[test]
fn kfold_labels_pass_through() {
    let labels = [1u8, 1, 2, 2, 2, 5, 5, 5, 5, 5];
    let folds = stratified_kfold_labels(&labels, 2, 0).unwrap();
    assert_eq!(folds.strata, vec![0, 0, 1, 1, 1, 2, 2, 2, 2, 2]);
}

#[test]
fn snapshot_selection() {
    assert_eq!(
        select_best_snapshot(&[(1, 0.1), (2, 0.2), (3, 0.3)]),
        Some(3)
    );
    assert_eq!(
        select_best_snapshot(&[(1, 0.1), (3, 0.5), (5, 0.2), (7, 0.5)]),
        Some(3)
    );
    assert_eq!(select_best_snapshot(&[(4, -0.2)]), Some(4));
    assert_eq!(
        select_best_snapshot(&[(1, f64::NAN), (2, 0.1), (3, f64::NAN)]),
        Some(2)
    );
    assert_eq!(select_best_snapshot(&[]), None);
}

fn monotone(x: f64, kind: u8) -> f64 {
    match kind % 3 {
        0 => x.exp(),
        1 => x * x * x + 2.0 * x,
        _ => 3.0 * x - 7.0,
    }
}

proptest! {
    #[test]
    fn spearman_monotone_invariant(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40),
        kind in any::<u8>(),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(rho) = spearman(&a, &b) {
            let ta: Vec<f64> = a.iter().map(|&x| monotone(x, kind)).collect();
            let rho2 = spearman(&ta, &b).unwrap();
            prop_assert!((rho - rho2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&rho));
        }
    }

    #[test]
    fn hit_rate_nondecreasing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let families: Vec<ScoredFamily> = (0..20)
            .map(|f| {
                let n = rng.random_range(2..30);
                family(&format!("m{f}"), (0..n).map(|_| rng.random_range(0.0..3.0f64).round()).collect(), rng.random_range(0..n))
            })
            .collect();
        let report = topk_ranking(&families, 20).unwrap();
        for w in report.hit_rate.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        prop_assert!(report.hit_rate.iter().all(|h| (0.0..=1.0).contains(h)));
    }

    #[test]
    fn confusion_rows_match_truth(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60)) {
        let pred: Vec<Tier> = pairs.iter().map(|p| Tier::ALL[p.0]).collect();
        let truth: Vec<Tier> = pairs.iter().map(|p| Tier::ALL[p.1]).collect();
        let r = classification_report(&pred, &truth).unwrap();
        for (i, t) in Tier::ALL.iter().enumerate() {
            prop_assert_eq!(r.confusion[i].iter().sum::<usize>(), truth.iter().filter(|x| *x == t).count());
        }
        let diag: usize = (0..3).map(|i| r.confusion[i][i]).sum();
        prop_assert!((r.accuracy - diag as f64 / pred.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn kfold_partitions_and_balances(seed in any::<u64>(), n in 10usize..300, k in 2usize..8, bins in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0f64).round()).collect();
        prop_assume!(n >= k);
        let folds = stratified_kfold(&values, k, bins, seed).unwrap();
        prop_assert_eq!(folds.assignment.len(), n);
        prop_assert!(folds.assignment.iter().all(|&f| f < k));
        let mut seen = vec![false; n];
        for f in 0..k {
            for i in folds.split(f).1 {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        let n_strata = folds.strata.iter().max().unwrap() + 1;
        for s in 0..n_strata {
            let size = folds.strata.iter().filter(|&&x| x == s).count() as f64;
            for f in 0..k {
                let count = (0..n).filter(|&i| folds.strata[i] == s && folds.assignment[i] == f).count() as f64;
                prop_assert!((count - size / k as f64).abs() <= 1.0);
            }
        }
    }
}
