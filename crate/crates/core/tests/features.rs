use std::collections::BTreeMap;

use proptest::prelude::*;
use t2g_core::features::{build_dataset, clock_features, dataset_schema};
use t2g_core::telegram::{DeviceCatalog, StateSeries};

const T0: i64 = 1_546_819_200;

fn catalog() -> DeviceCatalog {
    DeviceCatalog {
        signals: vec!["S1".into(), "S2".into()],
        detectors: vec!["D1".into(), "D2".into(), "D3".into()],
        ..Default::default()
    }
}

/// Runs of random length so that cycles and long occupations both occur.
fn runs(max_len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec((0u8..=1, 1usize..12), 1..60).prop_map(move |rs| {
        let mut v: Vec<u8> = rs
            .into_iter()
            .flat_map(|(s, n)| std::iter::repeat_n(s, n))
            .collect();
        v.truncate(max_len);
        v
    })
}

fn padded(mut v: Vec<u8>, len: usize) -> Vec<u8> {
    v.resize(len, 0);
    v
}

/// Length of the occupied run through `k`, clipped to `lo..hi`.
fn run_through(d: &[u8], k: usize, lo: usize, hi: usize) -> usize {
    let mut a = k;
    while a > lo && d[a - 1] == 1 {
        a -= 1;
    }
    let mut b = k;
    while b + 1 < hi && d[b + 1] == 1 {
        b += 1;
    }
    b - a + 1
}

/// Every row of the dataset recomputed second by second on 0-based vectors.
fn oracle_rows(series: &[Vec<u8>; 5], p: usize, t0: i64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let s = &series[0];
    let mut starts = Vec::new();
    for i in 1..s.len() {
        if s[i - 1] == 1 && s[i] == 0 {
            starts.push(i);
        }
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for c in 0..starts.len().saturating_sub(2) {
        let (lo, hi) = (starts[c], starts[c + 1]);
        let mut row = Vec::new();
        for sig in &series[..2] {
            let red = (lo..hi).filter(|&k| sig[k] == 0).count();
            row.push(red as f64);
            row.push((hi - lo - red) as f64);
        }
        let dets = &series[2..];
        for d in dets {
            let mut qr = 0.0;
            let mut qg = 0.0;
            for k in lo + 1..hi {
                if d[k - 1] == 1 && d[k] == 0 {
                    if s[k] == 0 {
                        qr += 1.0;
                    } else {
                        qg += 1.0;
                    }
                }
            }
            row.push(qr);
            row.push(qg);
        }
        for d in dets {
            let occupied = (lo..hi).filter(|&k| d[k] == 1).count();
            row.push(occupied as f64 / (hi - lo) as f64);
        }
        for d in dets {
            let mut gap = hi - lo;
            for k in lo..hi {
                if d[k] == 1 {
                    gap = hi - 1 - k;
                }
            }
            row.push(gap as f64);
        }
        for d in dets {
            let long = |k: usize| d[k] == 1 && run_through(d, k, lo, hi) > p;
            let qi = (lo..hi).any(|k| long(k) && s[k] == 0);
            let ci = (lo..hi).any(|k| long(k) && s[k] == 1);
            row.push(f64::from(u8::from(qi)));
            row.push(f64::from(u8::from(ci)));
        }
        let ts = t0 + lo as i64;
        // T0 is a Monday midnight
        let weekday = (ts - T0) / 86_400 % 7;
        row.push(weekday as f64);
        row.push((ts % 86_400 / 3600) as f64);
        row.push((ts % 3600 / 60) as f64);
        row.push((ts % 60) as f64);
        rows.push(row);
        targets.push((starts[c + 1]..starts[c + 2]).filter(|&k| s[k] == 0).count() as f64);
    }
    (rows, targets)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dataset_matches_brute_force(
        raw in prop::array::uniform5(runs(200)),
        p in 1u32..8,
        shift in 0i64..200_000,
    ) {
        let len = raw.iter().map(Vec::len).max().unwrap();
        let series: [Vec<u8>; 5] = raw.map(|v| padded(v, len));
        let cat = catalog();
        let t0 = T0 + shift;
        let map: BTreeMap<String, StateSeries> = cat
            .devices()
            .zip(&series)
            .map(|(id, v)| (id.clone(), StateSeries { device_id: id.clone(), t0, values: v.clone() }))
            .collect();
        let (rows, targets) = oracle_rows(&series, p as usize, t0);
        match build_dataset("S1", &map, &cat, p, 0) {
            Ok(m) => {
                prop_assert_eq!(m.schema, dataset_schema("S1", &cat, p, 0));
                prop_assert_eq!(&m.rows, &rows);
                prop_assert_eq!(&m.targets, &targets);
                prop_assert!(m.rows.iter().all(|r| r.len() == 2 * 2 + 3 * 6 + 4));
            }
            Err(_) => prop_assert!(rows.is_empty()),
        }
    }

    #[test]
    fn clock_matches_civil_arithmetic(ts in 0i64..4_000_000_000, offset in -43_200i64..50_400) {
        let (d, h, m, s) = clock_features(ts, offset);
        let local = ts + offset;
        prop_assert_eq!(u64::from(h) * 3600 + u64::from(m) * 60 + u64::from(s), local.rem_euclid(86_400) as u64);
        // 2019-01-07 was a Monday
        prop_assert_eq!(i64::from(d), (local - T0).div_euclid(86_400).rem_euclid(7));
    }
}
