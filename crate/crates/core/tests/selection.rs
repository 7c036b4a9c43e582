use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use t2g_core::forest::ForestParams;
use t2g_core::selection::{
    fold_ranges, kfold_cv, param_f64, random_search, rfe, trial_log_csv, ParamSpec, Ranker,
    SearchSpace,
};

/// 10 informative columns then 10 noise columns.
fn informative_data(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let signal: f64 = (0..10).map(|j| (1.0 + 0.2 * j as f64) * row[j]).sum();
        y.push(signal + noise.sample(&mut rng));
        x.push(row);
    }
    (x, y)
}

#[test]
fn rfe_keeps_informative_columns() {
    let (x, y) = informative_data(42, 600);
    let ols = rfe(&x, &y, 10, &Ranker::Ols, 1).unwrap();
    assert_eq!(ols, (0..10).collect::<Vec<_>>());
    let params = ForestParams { n_estimators: 40, max_depth: 8, seed: 42, ..Default::default() };
    let kept = rfe(&x, &y, 10, &Ranker::Forest(params), 2).unwrap();
    let hits = kept.iter().filter(|&&j| j < 10).count();
    assert!(hits >= 8, "{kept:?}");
}

#[test]
fn search_picks_the_closest_sample() {
    let space = SearchSpace {
        params: vec![ParamSpec::Real { name: "x".into(), low: 0.0, high: 20.0 }],
    };
    let y = vec![0.0; 10];
    // predictions of |x - 7| give every fold that MAE
    let out = random_search(&space, 12, &y, 5, 9, |p, _, va| {
        Ok(vec![(param_f64(p, "x")? - 7.0).abs(); va.len()])
    })
    .unwrap();
    let mut best = (f64::INFINITY, 0);
    for t in 0..12 {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(t);
        let x: f64 = rng.random_range(0.0..20.0);
        assert_eq!(param_f64(&out.trials[t as usize].params, "x").unwrap(), x);
        if (x - 7.0).abs() < best.0 {
            best = ((x - 7.0).abs(), t as usize);
        }
    }
    assert_eq!(out.best, best.1);
    assert_eq!(out.best_trial().scores.mean_mae, best.0);
    assert_eq!(trial_log_csv(&out.trials).lines().count(), 13);
}

proptest! {
    #[test]
    fn folds_partition_rows(n in 2usize..500, k in 2usize..10) {
        prop_assume!(k <= n);
        let folds = fold_ranges(n, k).unwrap();
        prop_assert_eq!(folds.len(), k);
        prop_assert_eq!(folds[0].start, 0);
        prop_assert_eq!(folds[k - 1].end, n);
        for w in folds.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(w[0].len() >= w[1].len());
            prop_assert!(w[0].len() - w[1].len() <= 1);
        }
    }

    #[test]
    fn cv_sees_every_row_once(y in prop::collection::vec(-5.0f64..5.0, 5..80), k in 2usize..5) {
        let mut seen = vec![0; y.len()];
        let s = kfold_cv(&y, k, |tr, va| {
            assert_eq!(tr.len() + va.len(), y.len());
            for &i in va {
                seen[i] += 1;
            }
            Ok(va.iter().map(|&i| y[i] + 1.0).collect())
        })
        .unwrap();
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert!((s.mean_mae - 1.0).abs() < 1e-12);
    }
}
