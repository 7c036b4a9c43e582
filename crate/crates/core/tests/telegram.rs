use proptest::prelude::*;
use t2g_core::telegram::{
    clean, emit_changes, parse_log, rasterize, segment_cycles, write_log, DeviceCatalog,
    StateSeries, Telegram, Window,
};

fn catalog() -> DeviceCatalog {
    DeviceCatalog {
        signals: vec!["S1".into(), "S2".into()],
        detectors: vec!["D1".into()],
        ..Default::default()
    }
}

fn series_strategy() -> impl Strategy<Value = StateSeries> {
    (-1_000_000i64..2_000_000_000, prop::collection::vec(0u8..=1, 1..300)).prop_map(
        |(t0, values)| StateSeries {
            device_id: "S1".into(),
            t0,
            values,
        },
    )
}

/// Ordered telegrams over known and unknown devices with many repeats.
fn stream_strategy() -> impl Strategy<Value = Vec<Telegram>> {
    prop::collection::vec((0i64..3, 0usize..4, 0u8..=1), 0..200).prop_map(|steps| {
        let ids = ["S1", "S2", "D1", "X9"];
        let mut t = 1_000;
        steps
            .into_iter()
            .map(|(dt, dev, state)| {
                t += dt;
                Telegram::new(t, ids[dev], state)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn rasterize_inverts_emit_changes(s in series_strategy()) {
        let cat = DeviceCatalog { signals: vec!["S1".into()], ..Default::default() };
        let back = rasterize(&emit_changes(&s), &cat, Window::new(s.t0, s.len())).unwrap();
        prop_assert_eq!(&back["S1"], &s);
    }

    #[test]
    fn emitted_telegrams_alternate(s in series_strategy()) {
        let tg = emit_changes(&s);
        let mut prev = 0;
        for t in &tg {
            prop_assert_ne!(t.state, prev);
            prev = t.state;
        }
    }

    #[test]
    fn clean_is_idempotent(stream in stream_strategy()) {
        let cat = catalog();
        let once = clean(&stream, &cat);
        prop_assert_eq!(clean(&once, &cat), once.clone());
        prop_assert!(once.iter().all(|t| t.device_id != "X9"));
        for id in ["S1", "S2", "D1"] {
            let states: Vec<u8> = once.iter().filter(|t| t.device_id == id).map(|t| t.state).collect();
            prop_assert!(states.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn clean_preserves_rasterized_states(stream in stream_strategy()) {
        let cat = catalog();
        let window = Window::new(1_000, 700);
        let raw = rasterize(&stream, &cat, window).unwrap();
        let cleaned = rasterize(&clean(&stream, &cat), &cat, window).unwrap();
        prop_assert_eq!(raw, cleaned);
    }

    #[test]
    fn log_text_round_trip(stream in stream_strategy()) {
        prop_assert_eq!(parse_log(&write_log(&stream)).unwrap(), stream);
    }

    #[test]
    fn cycles_tile_between_first_and_last_onset(s in series_strategy()) {
        let cycles = segment_cycles(&s);
        for (n, c) in cycles.iter().enumerate() {
            prop_assert_eq!(c.index, n + 1);
            prop_assert_eq!(c.red_s + c.green_s, c.len() as u32);
            let v = s.slice(c).unwrap();
            prop_assert_eq!(v[0], 0);
            prop_assert_eq!(s.values[c.start_k - 2], 1);
            prop_assert_eq!(*v.last().unwrap(), 1);
            if n > 0 {
                prop_assert_eq!(cycles[n - 1].end_k + 1, c.start_k);
            }
        }
        let onsets = (1..s.len()).filter(|&i| s.values[i - 1] == 1 && s.values[i] == 0).count();
        prop_assert_eq!(cycles.len(), onsets.saturating_sub(1));
    }
}
