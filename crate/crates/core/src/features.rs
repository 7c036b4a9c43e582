//! Per-cycle feature engineering.
//!
//! Every row describes one cycle of a target signal: red and green seconds
//! of all signals inside the cycle window, per-detector flows split by the
//! target's phase, occupancy, time since the last detection, queue and
//! congestion indicators, and the clock at the cycle start. The target is the
//! red duration of the following cycle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::telegram::{segment_cycles, Cycle, DeviceCatalog, StateSeries};

pub const DEFAULT_P_THRESHOLD_S: u32 = 5;
pub const TARGET_COLUMN: &str = "T2G";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    RedS,
    GreenS,
    QR,
    QG,
    Occupancy,
    LastGap,
    Qi,
    Ci,
    Day,
    Hour,
    Minute,
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    /// Device the column is computed from; `None` for clock columns.
    pub source: Option<String>,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub target_signal: String,
    pub columns: Vec<Column>,
    /// Name of the target column.
    pub target: String,
    pub p_threshold_s: u32,
    /// Fixed offset of the civil clock used for the clock columns.
    #[serde(default)]
    pub utc_offset_s: i64,
}

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for c in &self.columns {
            if !names.insert(c.name.as_str()) || c.name == self.target {
                return Err(Error::Schema(format!("duplicate column {}", c.name)));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Column holding the target signal's own red seconds.
    pub fn target_red_column(&self) -> Option<usize> {
        self.columns.iter().position(|c| {
            c.kind == FeatureKind::RedS && c.source.as_deref() == Some(&self.target_signal)
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Same schema restricted to `keep` (indices into `columns`).
    pub fn select(&self, keep: &[usize]) -> FeatureSchema {
        FeatureSchema {
            columns: keep.iter().map(|&i| self.columns[i].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Tabular per-cycle dataset of one target signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    pub rows: Vec<Vec<f64>>,
    /// Next-cycle red seconds.
    pub targets: Vec<f64>,
    /// Cycle number of each row.
    pub cycle_index: Vec<usize>,
    /// Timestamp of each cycle's first second.
    pub cycle_start: Vec<i64>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.columns.len()
    }

    pub fn select_columns(&self, keep: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            schema: self.schema.select(keep),
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&i| r[i]).collect())
                .collect(),
            ..self.clone()
        }
    }

    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        FeatureMatrix {
            schema: self.schema.clone(),
            rows: self.rows[range.clone()].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            cycle_index: self.cycle_index[range.clone()].to_vec(),
            cycle_start: self.cycle_start[range].to_vec(),
        }
    }

    /// CSV with header `cycle,start_ts,<columns>,<target>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cycle,start_ts");
        for c in &self.schema.columns {
            s.push(',');
            s.push_str(&c.name);
        }
        s.push(',');
        s.push_str(&self.schema.target);
        s.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            s.push_str(&format!("{},{}", self.cycle_index[i], self.cycle_start[i]));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push_str(&format!(",{}\n", self.targets[i]));
        }
        s
    }

    /// Parse CSV written by [`FeatureMatrix::to_csv`] against its schema sidecar.
    pub fn from_csv(text: &str, schema: FeatureSchema) -> Result<FeatureMatrix> {
        schema.validate()?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::TooFewRows("feature CSV is empty".into()))?;
        let mut expected = vec!["cycle", "start_ts"];
        expected.extend(schema.names());
        expected.push(&schema.target);
        let got: Vec<&str> = header.split(',').map(str::trim).collect();
        if got != expected {
            return Err(Error::Schema("CSV header does not match schema".into()));
        }
        let width = expected.len();
        let mut m = FeatureMatrix {
            schema,
            rows: Vec::new(),
            targets: Vec::new(),
            cycle_index: Vec::new(),
            cycle_start: Vec::new(),
        };
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {width} fields, found {}", fields.len()),
                });
            }
            let bad = |what: &str| Error::Parse {
                line: i + 1,
                msg: format!("invalid {what}"),
            };
            m.cycle_index.push(fields[0].parse().map_err(|_| bad("cycle"))?);
            m.cycle_start.push(fields[1].parse().map_err(|_| bad("start_ts"))?);
            let mut values = Vec::with_capacity(width - 2);
            for f in &fields[2..] {
                let v: f64 = f.parse().map_err(|_| bad("value"))?;
                if !v.is_finite() {
                    return Err(bad("non-finite value"));
                }
                values.push(v);
            }
            m.targets.push(values.pop().unwrap());
            m.rows.push(values);
        }
        Ok(m)
    }
}

/// Red and green seconds of `series` inside the cycle window.
pub fn phase_durations(series: &StateSeries, cycle: &Cycle) -> Result<(u32, u32)> {
    Ok(durations(series.slice(cycle)?))
}

/// Falling edges of the detector while the signal is red and green.
///
/// An edge is counted at second `k` when `d(k-1) = 1` and `d(k) = 0`, with
/// both seconds inside the cycle, and attributed to the signal state at `k`.
pub fn phase_flows(
    detector: &StateSeries,
    signal: &StateSeries,
    cycle: &Cycle,
) -> Result<(u32, u32)> {
    check_aligned(detector, signal)?;
    Ok(flows(detector.slice(cycle)?, signal.slice(cycle)?))
}

/// Share of the cycle's seconds the detector is occupied.
pub fn occupancy(detector: &StateSeries, cycle: &Cycle) -> Result<f64> {
    Ok(occupancy_of(detector.slice(cycle)?))
}

/// Seconds from the last occupied second to the end of the cycle; the cycle
/// length when the detector is never occupied.
pub fn last_detection_gap(detector: &StateSeries, cycle: &Cycle) -> Result<u32> {
    Ok(last_gap(detector.slice(cycle)?))
}

/// Queue (red) and congestion (green) indicators: 1 when an occupation run
/// longer than `p_threshold_s` overlaps the respective phase. Runs are clipped
/// to the cycle.
pub fn queue_congestion(
    detector: &StateSeries,
    signal: &StateSeries,
    cycle: &Cycle,
    p_threshold_s: u32,
) -> Result<(u8, u8)> {
    if p_threshold_s == 0 {
        return Err(Error::InvalidParam("p_threshold_s must be at least 1".into()));
    }
    check_aligned(detector, signal)?;
    Ok(indicators(
        detector.slice(cycle)?,
        signal.slice(cycle)?,
        p_threshold_s,
    ))
}

/// Day of week (Monday = 0), hour, minute and second of `timestamp` on a
/// civil clock at fixed `utc_offset_s`.
pub fn clock_features(timestamp: i64, utc_offset_s: i64) -> (u32, u32, u32, u32) {
    let local = timestamp + utc_offset_s;
    let days = local.div_euclid(86_400);
    let secs = local.rem_euclid(86_400);
    // 1970-01-01 was a Thursday.
    let day = (days + 3).rem_euclid(7) as u32;
    (
        day,
        (secs / 3600) as u32,
        (secs % 3600 / 60) as u32,
        (secs % 60) as u32,
    )
}

/// Build the dataset of `target` from rasterized series of every catalog
/// device.
pub fn build_dataset(
    target: &str,
    series: &BTreeMap<String, StateSeries>,
    catalog: &DeviceCatalog,
    p_threshold_s: u32,
    utc_offset_s: i64,
) -> Result<FeatureMatrix> {
    if !catalog.is_signal(target) {
        return Err(Error::Schema(format!("{target} is not a signal of the catalog")));
    }
    if p_threshold_s == 0 {
        return Err(Error::InvalidParam("p_threshold_s must be at least 1".into()));
    }
    let get = |id: &String| {
        series
            .get(id)
            .ok_or_else(|| Error::Schema(format!("no state series for device {id}")))
    };
    let target_series = get(&target.to_string())?;
    for id in catalog.devices() {
        check_aligned(get(id)?, target_series)?;
    }
    let schema = dataset_schema(target, catalog, p_threshold_s, utc_offset_s);
    let cycles = segment_cycles(target_series);
    if cycles.len() < 2 {
        return Err(Error::TooFewRows(format!(
            "signal {target} has {} complete cycles, need at least 2",
            cycles.len()
        )));
    }

    let signals: Vec<&StateSeries> = catalog.signals.iter().map(|s| &series[s]).collect();
    let detectors: Vec<&StateSeries> = catalog.detectors.iter().map(|d| &series[d]).collect();
    let mut m = FeatureMatrix {
        schema,
        rows: Vec::with_capacity(cycles.len() - 1),
        targets: Vec::with_capacity(cycles.len() - 1),
        cycle_index: Vec::with_capacity(cycles.len() - 1),
        cycle_start: Vec::with_capacity(cycles.len() - 1),
    };
    for pair in cycles.windows(2) {
        let (c, next) = (&pair[0], &pair[1]);
        let s_i = target_series.slice(c)?;
        let mut row = Vec::with_capacity(m.schema.columns.len());
        for s in &signals {
            let (r, g) = durations(s.slice(c)?);
            row.extend([r as f64, g as f64]);
        }
        let det: Vec<&[u8]> = detectors
            .iter()
            .map(|d| d.slice(c))
            .collect::<Result<_>>()?;
        for d in &det {
            let (qr, qg) = flows(d, s_i);
            row.extend([qr as f64, qg as f64]);
        }
        row.extend(det.iter().map(|d| occupancy_of(d)));
        row.extend(det.iter().map(|d| last_gap(d) as f64));
        for d in &det {
            let (qi, ci) = indicators(d, s_i, p_threshold_s);
            row.extend([qi as f64, ci as f64]);
        }
        let start_ts = target_series.t0 + c.start_k as i64 - 1;
        let (day, hour, minute, second) = clock_features(start_ts, utc_offset_s);
        row.extend([day, hour, minute, second].map(f64::from));

        m.rows.push(row);
        m.targets.push(next.red_s as f64);
        m.cycle_index.push(c.index);
        m.cycle_start.push(start_ts);
    }
    Ok(m)
}

/// Column layout produced by [`build_dataset`].
pub fn dataset_schema(
    target: &str,
    catalog: &DeviceCatalog,
    p_threshold_s: u32,
    utc_offset_s: i64,
) -> FeatureSchema {
    let mut columns = Vec::new();
    let mut push = |name: String, source: Option<&String>, kind| {
        columns.push(Column {
            name,
            source: source.cloned(),
            kind,
        })
    };
    for s in &catalog.signals {
        push(format!("r_{s}"), Some(s), FeatureKind::RedS);
        push(format!("g_{s}"), Some(s), FeatureKind::GreenS);
    }
    for d in &catalog.detectors {
        push(format!("qR_{d}"), Some(d), FeatureKind::QR);
        push(format!("qG_{d}"), Some(d), FeatureKind::QG);
    }
    for d in &catalog.detectors {
        push(format!("o_{d}"), Some(d), FeatureKind::Occupancy);
    }
    for d in &catalog.detectors {
        push(format!("l_{d}"), Some(d), FeatureKind::LastGap);
    }
    for d in &catalog.detectors {
        push(format!("QI_{d}"), Some(d), FeatureKind::Qi);
        push(format!("CI_{d}"), Some(d), FeatureKind::Ci);
    }
    push("D".into(), None, FeatureKind::Day);
    push("H".into(), None, FeatureKind::Hour);
    push("M".into(), None, FeatureKind::Minute);
    push("Sec".into(), None, FeatureKind::Second);
    FeatureSchema {
        target_signal: target.to_string(),
        columns,
        target: TARGET_COLUMN.into(),
        p_threshold_s,
        utc_offset_s,
    }
}

fn check_aligned(a: &StateSeries, b: &StateSeries) -> Result<()> {
    if a.t0 != b.t0 || a.len() != b.len() {
        return Err(Error::Shape {
            expected: b.len(),
            got: a.len(),
        });
    }
    Ok(())
}

fn durations(s: &[u8]) -> (u32, u32) {
    let green = s.iter().filter(|&&v| v == 1).count() as u32;
    (s.len() as u32 - green, green)
}

fn flows(d: &[u8], s: &[u8]) -> (u32, u32) {
    let (mut red, mut green) = (0, 0);
    for k in 1..d.len() {
        if d[k - 1] == 1 && d[k] == 0 {
            if s[k] == 0 {
                red += 1;
            } else {
                green += 1;
            }
        }
    }
    (red, green)
}

fn occupancy_of(d: &[u8]) -> f64 {
    d.iter().map(|&v| v as u32).sum::<u32>() as f64 / d.len() as f64
}

fn last_gap(d: &[u8]) -> u32 {
    match d.iter().rposition(|&v| v == 1) {
        Some(pos) => (d.len() - (pos + 1)) as u32,
        None => d.len() as u32,
    }
}

fn indicators(d: &[u8], s: &[u8], p: u32) -> (u8, u8) {
    let (mut qi, mut ci) = (0u8, 0u8);
    let mut k = 0;
    while k < d.len() {
        if d[k] == 0 {
            k += 1;
            continue;
        }
        let start = k;
        while k < d.len() && d[k] == 1 {
            k += 1;
        }
        if (k - start) as u32 > p {
            let phase = &s[start..k];
            qi |= u8::from(phase.contains(&0));
            ci |= u8::from(phase.contains(&1));
        }
    }
    (qi, ci)
}
