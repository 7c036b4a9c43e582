use proptest::prelude::*;
use t2g_core::evaluation::{compute_metrics, split_point};

/// Per-sample loop over rounded predictions.
fn brute(preds: &[f64], truths: &[f64]) -> (f64, f64, f64, f64) {
    let n = truths.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut eh = 0.0;
    let mut nm = 0.0;
    for i in 0..truths.len() {
        let p = preds[i];
        let r = if p >= 0.0 { (p + 0.5).floor() } else { -((-p + 0.5).floor()) };
        let e = (r - truths[i]).abs();
        abs += e;
        sq += e * e;
        if e == 0.0 {
            eh += 1.0;
        }
        if e <= 2.0 {
            nm += 1.0;
        }
    }
    (abs / n, (sq / n).sqrt(), 100.0 * eh / n, 100.0 * nm / n)
}

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..300).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..150.0, n),
            prop::collection::vec((0u32..120).prop_map(f64::from), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_per_sample_loop((preds, truths) in pairs()) {
        let r = compute_metrics(&preds, &truths, None).unwrap();
        let (mae, rmse, eh, nm) = brute(&preds, &truths);
        prop_assert!((r.mae_s - mae).abs() <= 1e-12 * mae.max(1.0));
        prop_assert!((r.rmse_s - rmse).abs() <= 1e-12 * rmse.max(1.0));
        prop_assert_eq!(r.eh_pct, eh);
        prop_assert_eq!(r.nm_pct, nm);
        prop_assert!(r.mae_s <= r.rmse_s + 1e-12);
        prop_assert!(r.eh_pct <= r.nm_pct);
    }

    #[test]
    fn joint_integer_shift_is_invisible((preds, truths) in pairs(), c in -50i32..50) {
        let c = f64::from(c);
        let a = compute_metrics(&preds, &truths, None).unwrap();
        let sp: Vec<f64> = preds.iter().map(|p| p + c).collect();
        let st: Vec<f64> = truths.iter().map(|t| t + c).collect();
        let b = compute_metrics(&sp, &st, None).unwrap();
        prop_assert_eq!(a.eh_pct, b.eh_pct);
        prop_assert_eq!(a.nm_pct, b.nm_pct);
        prop_assert!((a.mae_s - b.mae_s).abs() < 1e-9);
    }

    #[test]
    fn deltas_against_baseline((preds, truths) in pairs(), bias in 1u32..10) {
        let base_preds: Vec<f64> = truths.iter().map(|t| t + f64::from(bias)).collect();
        let base = compute_metrics(&base_preds, &truths, None).unwrap();
        let r = compute_metrics(&preds, &truths, Some(&base)).unwrap();
        let d = r.deltas.unwrap();
        prop_assert!((d.d_mae_pct.unwrap() - (r.mae_s - base.mae_s) / base.mae_s * 100.0).abs() < 1e-9);
        prop_assert_eq!(d.d_eh, r.eh_pct - base.eh_pct);
        prop_assert_eq!(d.d_nm, r.nm_pct - base.nm_pct);
    }

    #[test]
    fn split_keeps_both_sides(n in 2usize..5000, frac in 0.05f64..0.95) {
        if let Ok(k) = split_point(n, frac) {
            prop_assert!(k >= 1 && k < n);
            prop_assert!(k as f64 >= frac * n as f64);
            prop_assert!(((k - 1) as f64) < frac * n as f64);
        }
    }
}
