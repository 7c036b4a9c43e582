//! Telegram ingestion.
//!
//! A telegram is the event a field device emits whenever its binary state
//! changes. This module parses `timestamp,device_id,state` logs, removes
//! telegrams that carry no information, reconstructs dense 1 Hz state series
//! and cuts signal series into red-onset-to-red-onset cycles.
//!
//! Window indices `k` are 1-based throughout: `k = 1` is the second at the
//! window start.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One device state change.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Telegram {
    pub timestamp: i64,
    pub device_id: String,
    pub state: u8,
}

impl Telegram {
    pub fn new(timestamp: i64, device_id: impl Into<String>, state: u8) -> Self {
        Self {
            timestamp,
            device_id: device_id.into(),
            state,
        }
    }
}

/// The devices of one intersection.
///
/// Signal and detector order is significant: it fixes feature column order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceCatalog {
    pub signals: Vec<String>,
    pub detectors: Vec<String>,
    /// Detector id to the signal ids it actuates.
    #[serde(default)]
    pub detector_to_signal: BTreeMap<String, Vec<String>>,
    /// Detectors that only see transit vehicles.
    #[serde(default)]
    pub transit_devices: Vec<String>,
}

impl DeviceCatalog {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.signals.iter().chain(&self.detectors) {
            if id.is_empty() || id.contains(',') {
                return Err(Error::Catalog(format!("invalid device id {id:?}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Catalog(format!("device {id} listed twice")));
            }
        }
        for (det, sigs) in &self.detector_to_signal {
            if !self.is_detector(det) {
                return Err(Error::Catalog(format!("mapping key {det} is not a detector")));
            }
            if let Some(s) = sigs.iter().find(|s| !self.is_signal(s)) {
                return Err(Error::Catalog(format!("detector {det} maps to unknown signal {s}")));
            }
        }
        if let Some(t) = self.transit_devices.iter().find(|t| !self.is_detector(t)) {
            return Err(Error::Catalog(format!("transit device {t} is not a detector")));
        }
        Ok(())
    }

    pub fn is_signal(&self, id: &str) -> bool {
        self.signals.iter().any(|s| s == id)
    }

    pub fn is_detector(&self, id: &str) -> bool {
        self.detectors.iter().any(|d| d == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.is_signal(id) || self.is_detector(id)
    }

    /// Signals followed by detectors.
    pub fn devices(&self) -> impl Iterator<Item = &String> {
        self.signals.iter().chain(&self.detectors)
    }

    /// Signals actuated only by transit detectors.
    pub fn transit_signals(&self) -> Vec<String> {
        self.signals
            .iter()
            .filter(|s| {
                let mut feeders = self
                    .detector_to_signal
                    .iter()
                    .filter(|(_, sigs)| sigs.contains(s))
                    .map(|(d, _)| d)
                    .peekable();
                feeders.peek().is_some()
                    && feeders.all(|d| self.transit_devices.contains(d))
            })
            .cloned()
            .collect()
    }
}

/// Dense 1 Hz binary state of one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSeries {
    pub device_id: String,
    /// Timestamp of `values[0]`.
    pub t0: i64,
    pub values: Vec<u8>,
}

impl StateSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// State at 1-based window index `k`.
    pub fn at(&self, k: usize) -> u8 {
        self.values[k - 1]
    }

    /// Values of the cycle's seconds.
    pub fn slice(&self, cycle: &Cycle) -> Result<&[u8]> {
        cycle.check_bounds(self.len())?;
        Ok(&self.values[cycle.start_k - 1..cycle.end_k])
    }
}

/// Observation window: `len` seconds starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub len: usize,
}

impl Window {
    pub fn new(start: i64, len: usize) -> Self {
        Self { start, len }
    }

    /// Last covered timestamp.
    pub fn end(&self) -> i64 {
        self.start + self.len as i64 - 1
    }

    /// Smallest window covering every telegram.
    pub fn covering(telegrams: &[Telegram]) -> Option<Self> {
        let lo = telegrams.iter().map(|t| t.timestamp).min()?;
        let hi = telegrams.iter().map(|t| t.timestamp).max()?;
        Some(Self::new(lo, (hi - lo + 1) as usize))
    }
}

/// One red-onset-to-red-onset interval of a signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cycle {
    pub signal_id: String,
    /// 1-based cycle number.
    pub index: usize,
    /// First second (1-based, inclusive).
    pub start_k: usize,
    /// Last second (1-based, inclusive).
    pub end_k: usize,
    pub red_s: u32,
    pub green_s: u32,
}

impl Cycle {
    pub fn len(&self) -> usize {
        self.end_k + 1 - self.start_k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub(crate) fn check_bounds(&self, series_len: usize) -> Result<()> {
        if self.start_k == 0 || self.end_k < self.start_k || self.end_k > series_len {
            return Err(Error::CycleRange {
                start_k: self.start_k,
                end_k: self.end_k,
                len: series_len,
            });
        }
        Ok(())
    }
}

/// Parse a telegram log.
///
/// The first non-blank line is treated as a header when its first field is
/// not an integer. Blank lines are skipped.
pub fn parse_log(text: &str) -> Result<Vec<Telegram>> {
    let mut out = Vec::new();
    let mut first = true;
    let mut previous: Option<i64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if first {
            first = false;
            if fields[0].parse::<i64>().is_err() {
                continue;
            }
        }
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let timestamp: i64 = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("timestamp {:?} is not an integer", fields[0]),
        })?;
        if timestamp < 0 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("negative timestamp {timestamp}"),
            });
        }
        if fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty device id".into(),
            });
        }
        let state = match fields[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("state {other:?} is not 0 or 1"),
                })
            }
        };
        if let Some(prev) = previous {
            if timestamp < prev {
                return Err(Error::Ordering {
                    line: line_no,
                    timestamp,
                    previous: prev,
                });
            }
        }
        previous = Some(timestamp);
        out.push(Telegram::new(timestamp, fields[1], state));
    }
    Ok(out)
}

/// Render telegrams in the log format, with header.
pub fn write_log(telegrams: &[Telegram]) -> String {
    let mut s = String::from("timestamp,device_id,state\n");
    for t in telegrams {
        s.push_str(&format!("{},{},{}\n", t.timestamp, t.device_id, t.state));
    }
    s
}

/// Drop telegrams for unknown devices and telegrams that repeat the device's
/// last retained state (periodic clock telegrams included).
pub fn clean(telegrams: &[Telegram], catalog: &DeviceCatalog) -> Vec<Telegram> {
    let mut last: HashMap<&str, u8> = HashMap::new();
    let mut out = Vec::with_capacity(telegrams.len());
    for t in telegrams {
        if !catalog.contains(&t.device_id) {
            continue;
        }
        if last.get(t.device_id.as_str()) == Some(&t.state) {
            continue;
        }
        last.insert(&t.device_id, t.state);
        out.push(t.clone());
    }
    out
}

/// Dense per-second states for every catalog device over `window`.
///
/// A device holds state 0 until its first telegram.
pub fn rasterize(
    telegrams: &[Telegram],
    catalog: &DeviceCatalog,
    window: Window,
) -> Result<BTreeMap<String, StateSeries>> {
    let mut changes: HashMap<&str, Vec<(usize, u8)>> = HashMap::new();
    for t in telegrams {
        if t.timestamp < window.start || t.timestamp > window.end() {
            return Err(Error::Window {
                start: window.start,
                end: window.end(),
                timestamp: t.timestamp,
            });
        }
        if catalog.contains(&t.device_id) {
            changes
                .entry(t.device_id.as_str())
                .or_default()
                .push(((t.timestamp - window.start) as usize, t.state));
        }
    }
    let mut out = BTreeMap::new();
    for id in catalog.devices() {
        let mut values = vec![0u8; window.len];
        if let Some(events) = changes.get(id.as_str()) {
            let mut state = 0u8;
            let mut pos = 0usize;
            for &(offset, new_state) in events {
                values[pos..offset].fill(state);
                pos = offset;
                state = new_state;
            }
            values[pos..].fill(state);
        }
        out.insert(
            id.clone(),
            StateSeries {
                device_id: id.clone(),
                t0: window.start,
                values,
            },
        );
    }
    Ok(out)
}

/// Telegrams reproducing `series` under [`rasterize`]: one per state change,
/// taking the pre-window state as 0.
pub fn emit_changes(series: &StateSeries) -> Vec<Telegram> {
    let mut prev = 0u8;
    let mut out = Vec::new();
    for (offset, &v) in series.values.iter().enumerate() {
        if v != prev {
            out.push(Telegram::new(series.t0 + offset as i64, &series.device_id, v));
            prev = v;
        }
    }
    out
}

/// Cut a signal series into complete cycles.
///
/// A cycle starts at a green-to-red transition and ends the second before the
/// next one. Seconds before the first observed transition and after the last
/// one are discarded.
pub fn segment_cycles(series: &StateSeries) -> Vec<Cycle> {
    let v = &series.values;
    let onsets: Vec<usize> = (1..v.len())
        .filter(|&i| v[i - 1] == 1 && v[i] == 0)
        .map(|i| i + 1)
        .collect();
    onsets
        .windows(2)
        .enumerate()
        .map(|(n, w)| {
            let (start_k, end_k) = (w[0], w[1] - 1);
            let green = v[start_k - 1..end_k].iter().filter(|&&s| s == 1).count() as u32;
            Cycle {
                signal_id: series.device_id.clone(),
                index: n + 1,
                start_k,
                end_k,
                red_s: (end_k + 1 - start_k) as u32 - green,
                green_s: green,
            }
        })
        .collect()
}

/// Cycles as CSV (`signal_id,n,start_k,red_s,green_s`).
pub fn write_cycles_csv(cycles: &[Cycle]) -> String {
    let mut s = String::from("signal_id,n,start_k,red_s,green_s\n");
    for c in cycles {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            c.signal_id, c.index, c.start_k, c.red_s, c.green_s
        ));
    }
    s
}
