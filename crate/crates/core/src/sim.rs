//! Fully-actuated intersection simulator.
//!
//! A discrete 1 Hz event loop drives a ring of regular phases with minimum
//! recall, gap-out extension and max-green truncation. Transit-only phases
//! are inserted on request at the next legal switch point. Device state
//! changes are emitted as telegrams, so the output feeds straight into
//! [`crate::telegram`].
//!
//! Controller rules, per green interval of phase `p` starting at second `t0`:
//!
//! * vehicles that called `p` during its red discharge one per
//!   `saturation_headway_s` from `t0`; each discharge is an actuation, and
//!   vehicles arriving while the queue discharges join it;
//! * a vehicle reaching one of `p`'s detectors while `p` is green and its
//!   queue is empty is an actuation;
//! * green lasts at least `min_green`; afterwards it continues into the next
//!   second while the queue is non-empty or the time since the last actuation
//!   stays below `extension_gap`, and never beyond `max_green`;
//! * a regular phase that has served `min_green` ends as soon as a transit
//!   call is pending. Each pending transit phase is then served once, after
//!   which the ring resumes with the regular phase following the interrupted
//!   one.
//!
//! Signals leaving green turn red immediately; signals entering green wait
//! `intergreen_s` plus whatever their minimum red still requires. Transit
//! vehicles are seen by their detector `transit_lead_s` before they call
//! their phase.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with the run seed;
//! each detector draws from its own stream (stream id = detector position in
//! the catalog), so results are platform independent.

use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telegram::{Cycle, DeviceCatalog, Telegram, Window};

/// Default start of simulated time: Monday 2019-01-07 00:00:00 UTC.
pub const DEFAULT_EPOCH: i64 = 1_546_819_200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDef {
    pub name: String,
    /// Signals green while this phase is active.
    pub signals: Vec<String>,
    pub min_green: u32,
    pub max_green: u32,
    pub extension_gap: u32,
    /// Served only when a transit vehicle calls it.
    #[serde(default)]
    pub transit_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub catalog: DeviceCatalog,
    /// Regular phases run in list order; transit phases are skipped unless called.
    pub phases: Vec<PhaseDef>,
    /// Minimum red per signal, seconds.
    #[serde(default)]
    pub base_red: BTreeMap<String, u32>,
    /// Poisson arrival rate per detector, vehicles per hour.
    #[serde(default)]
    pub arrival_rate: BTreeMap<String, f64>,
    /// Optional 24 multipliers applied to `arrival_rate` by UTC hour.
    #[serde(default)]
    pub hourly_demand: Vec<f64>,
    /// Seconds a passing vehicle holds its detector.
    pub detector_occupation_s: u32,
    /// Mean exponential inter-arrival of transit vehicles per transit detector;
    /// `None` disables transit.
    #[serde(default)]
    pub transit_headway_s: Option<f64>,
    #[serde(default = "default_transit_occupation")]
    pub transit_occupation_s: u32,
    /// Seconds between a transit detection and the resulting phase call.
    #[serde(default)]
    pub transit_lead_s: u32,
    /// Transit detector id to the transit phase it calls.
    #[serde(default)]
    pub priority_rule: BTreeMap<String, String>,
    /// Upper bound on any red of a regular-phase signal.
    pub max_red_cap: u32,
    #[serde(default = "default_intergreen")]
    pub intergreen_s: u32,
    #[serde(default = "default_saturation_headway")]
    pub saturation_headway_s: u32,
    #[serde(default = "default_epoch")]
    pub epoch_start: i64,
}

fn default_transit_occupation() -> u32 {
    6
}
fn default_intergreen() -> u32 {
    3
}
fn default_saturation_headway() -> u32 {
    2
}
fn default_epoch() -> i64 {
    DEFAULT_EPOCH
}

/// Output of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub seed: u64,
    pub horizon_s: usize,
    pub window: Window,
    pub telegrams: Vec<Telegram>,
    /// Complete cycles per signal, derived from controller switching events.
    pub ground_truth_cycles: BTreeMap<String, Vec<Cycle>>,
}

impl SimRun {
    pub fn all_cycles(&self) -> Vec<Cycle> {
        self.ground_truth_cycles.values().flatten().cloned().collect()
    }
}

impl SimConfig {
    pub fn transit_enabled(&self) -> bool {
        self.transit_headway_s.is_some() && !self.catalog.transit_devices.is_empty()
    }

    fn regular_phases(&self) -> impl Iterator<Item = &PhaseDef> {
        self.phases.iter().filter(|p| !p.transit_only)
    }

    /// Longest possible red of a regular-phase signal.
    ///
    /// Between two services of a signal every other regular phase may run to
    /// max green, and every switch point may insert each transit phase once.
    pub fn worst_case_red(&self, signal: &str) -> u32 {
        let regular: Vec<&PhaseDef> = self.regular_phases().collect();
        let n_regular = regular.len() as u32;
        let others: u32 = regular
            .iter()
            .filter(|p| !p.signals.iter().any(|s| s == signal))
            .map(|p| p.max_green)
            .sum();
        let transit: Vec<&PhaseDef> = if self.transit_enabled() {
            self.phases.iter().filter(|p| p.transit_only).collect()
        } else {
            Vec::new()
        };
        let transit_sum: u32 = transit.iter().map(|p| p.max_green).sum();
        let max_base = self.base_red.values().copied().max().unwrap_or(0);
        let clearance = self.intergreen_s.max(max_base);
        let switches = n_regular + n_regular * transit.len() as u32;
        others + n_regular * transit_sum + switches * clearance
    }
}

/// Every violated config invariant, with a message. Empty means valid.
pub fn validate_config(config: &SimConfig) -> Vec<String> {
    let mut v = Vec::new();
    let cat = &config.catalog;
    if let Err(e) = cat.validate() {
        v.push(e.to_string());
    }
    if config.phases.is_empty() {
        v.push("no phases defined".into());
    }
    if config.regular_phases().next().is_none() {
        v.push("at least one regular phase is required".into());
    }
    let mut names = std::collections::BTreeSet::new();
    for p in &config.phases {
        if !names.insert(p.name.as_str()) {
            v.push(format!("phase name {} is not unique", p.name));
        }
        if p.signals.is_empty() {
            v.push(format!("phase {} has no signals", p.name));
        }
        for s in &p.signals {
            if !cat.is_signal(s) {
                v.push(format!("phase {} references unknown signal {s}", p.name));
            }
        }
        if p.min_green == 0 {
            v.push(format!("phase {}: min_green must be at least 1", p.name));
        }
        if p.min_green > p.max_green {
            v.push(format!(
                "phase {}: min_green={} > max_green={}",
                p.name, p.min_green, p.max_green
            ));
        }
        if p.extension_gap == 0 {
            v.push(format!("phase {}: extension_gap must be at least 1", p.name));
        }
    }
    for s in &cat.signals {
        let regular = config.regular_phases().any(|p| p.signals.contains(s));
        let transit = config
            .phases
            .iter()
            .any(|p| p.transit_only && p.signals.contains(s));
        if !regular && !transit {
            v.push(format!("signal {s} is not served by any phase"));
        }
        if regular && transit {
            v.push(format!("signal {s} is in both a regular and a transit phase"));
        }
    }
    for (d, rate) in &config.arrival_rate {
        if !cat.is_detector(d) {
            v.push(format!("arrival rate for unknown detector {d}"));
        }
        if !rate.is_finite() || *rate < 0.0 {
            v.push(format!("arrival rate of {d} must be finite and >= 0, got {rate}"));
        }
    }
    if !config.hourly_demand.is_empty() {
        if config.hourly_demand.len() != 24 {
            v.push(format!(
                "hourly_demand needs 24 entries, got {}",
                config.hourly_demand.len()
            ));
        }
        if config.hourly_demand.iter().any(|f| !f.is_finite() || *f < 0.0) {
            v.push("hourly_demand factors must be finite and >= 0".into());
        }
    }
    if config.detector_occupation_s == 0 {
        v.push("detector_occupation_s must be at least 1".into());
    }
    if config.transit_occupation_s == 0 {
        v.push("transit_occupation_s must be at least 1".into());
    }
    if config.saturation_headway_s == 0 {
        v.push("saturation_headway_s must be at least 1".into());
    }
    if config.intergreen_s == 0 {
        v.push("intergreen_s must be at least 1".into());
    }
    if let Some(h) = config.transit_headway_s {
        if !h.is_finite() || h <= 0.0 {
            v.push(format!("transit_headway_s must be positive, got {h}"));
        }
    }
    for (d, phase) in &config.priority_rule {
        if !cat.transit_devices.contains(d) {
            v.push(format!("priority rule key {d} is not a transit detector"));
        }
        match config.phases.iter().find(|p| &p.name == phase) {
            None => v.push(format!("priority rule for {d} names unknown phase {phase}")),
            Some(p) if !p.transit_only => {
                v.push(format!("priority rule for {d} names regular phase {phase}"))
            }
            _ => {}
        }
    }
    if config.transit_enabled() {
        for d in &cat.transit_devices {
            if !config.priority_rule.contains_key(d) {
                v.push(format!("transit detector {d} has no priority rule"));
            }
        }
    }
    if v.is_empty() {
        for s in &cat.signals {
            if config.regular_phases().any(|p| p.signals.contains(s)) {
                let worst = config.worst_case_red(s);
                if worst > config.max_red_cap {
                    v.push(format!(
                        "max_red_cap={} is below the worst-case red {worst} of signal {s}",
                        config.max_red_cap
                    ));
                }
            }
        }
    }
    v
}

/// Two regular phases, four signals, four detectors, no transit.
pub fn cross_basic() -> SimConfig {
    let ids = |p: &str| (1..=4).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let catalog = DeviceCatalog {
        signals: ids("S"),
        detectors: ids("D"),
        detector_to_signal: (1..=4)
            .map(|i| (format!("D{i}"), vec![format!("S{i}")]))
            .collect(),
        transit_devices: Vec::new(),
    };
    let phase = |name: &str, sigs: [&str; 2]| PhaseDef {
        name: name.into(),
        signals: sigs.iter().map(|s| s.to_string()).collect(),
        min_green: 10,
        max_green: 40,
        extension_gap: 3,
        transit_only: false,
    };
    SimConfig {
        arrival_rate: catalog
            .detectors
            .iter()
            .map(|d| (d.clone(), 360.0))
            .collect(),
        catalog,
        phases: vec![phase("NS", ["S1", "S2"]), phase("EW", ["S3", "S4"])],
        base_red: BTreeMap::new(),
        hourly_demand: Vec::new(),
        detector_occupation_s: 1,
        transit_headway_s: None,
        transit_occupation_s: default_transit_occupation(),
        transit_lead_s: 0,
        priority_rule: BTreeMap::new(),
        max_red_cap: 60,
        intergreen_s: 3,
        saturation_headway_s: 2,
        epoch_start: DEFAULT_EPOCH,
    }
}

/// Ten signals and five detectors around a tram corridor.
///
/// S1..S8 are vehicle, cyclist and pedestrian signals in three regular
/// phases; S9 and S10 are tram signals that only turn green when a tram
/// detected on D1 (north) or D5 (south) calls them.
pub fn zurich_like() -> SimConfig {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let catalog = DeviceCatalog {
        signals: (1..=10).map(|i| format!("S{i}")).collect(),
        detectors: (1..=5).map(|i| format!("D{i}")).collect(),
        detector_to_signal: BTreeMap::from([
            ("D1".into(), s(&["S9"])),
            ("D2".into(), s(&["S2"])),
            ("D3".into(), s(&["S3", "S4"])),
            ("D4".into(), s(&["S5", "S6"])),
            ("D5".into(), s(&["S10"])),
        ]),
        transit_devices: s(&["D1", "D5"]),
    };
    let phase = |name: &str, sigs: &[&str], min: u32, max: u32, transit: bool| PhaseDef {
        name: name.into(),
        signals: s(sigs),
        min_green: min,
        max_green: max,
        extension_gap: 2,
        transit_only: transit,
    };
    SimConfig {
        catalog,
        phases: vec![
            phase("A", &["S1", "S2", "S7"], 10, 30, false),
            phase("B", &["S3", "S4", "S8"], 10, 30, false),
            phase("C", &["S5", "S6"], 8, 25, false),
            phase("TN", &["S9"], 8, 20, true),
            phase("TS", &["S10"], 8, 20, true),
        ],
        base_red: BTreeMap::new(),
        arrival_rate: BTreeMap::from([
            ("D2".into(), 170.0),
            ("D3".into(), 190.0),
            ("D4".into(), 150.0),
        ]),
        hourly_demand: vec![
            0.2, 0.15, 0.1, 0.1, 0.15, 0.3, 0.7, 1.2, 1.4, 1.1, 0.9, 0.9, 1.0, 1.0, 0.9, 1.0,
            1.2, 1.4, 1.3, 1.0, 0.8, 0.6, 0.45, 0.3,
        ],
        detector_occupation_s: 1,
        transit_headway_s: Some(240.0),
        transit_occupation_s: 6,
        // shortest regular red: a tram detected in one cycle calls into the next red
        transit_lead_s: 27,
        priority_rule: BTreeMap::from([("D1".into(), "TN".into()), ("D5".into(), "TS".into())]),
        max_red_cap: 240,
        intergreen_s: 3,
        saturation_headway_s: 2,
        epoch_start: DEFAULT_EPOCH,
    }
}

/// Built-in scenario by name.
pub fn scenario(name: &str) -> Option<SimConfig> {
    match name {
        "cross_basic" => Some(cross_basic()),
        "zurich_like" => Some(zurich_like()),
        _ => None,
    }
}

enum Mode {
    Green {
        phase: usize,
        start: i64,
        last_act: Option<i64>,
        queued: u32,
        next_discharge: i64,
    },
    Clearance {
        next: usize,
        green_at: i64,
    },
}

struct Controller<'a> {
    cfg: &'a SimConfig,
    phase_signals: Vec<Vec<usize>>,
    ring: Vec<usize>,
    ring_pos: usize,
    /// Calls waiting for each phase.
    calls: Vec<u32>,
    served_since_regular: Vec<bool>,
    mode: Mode,
    signal_state: Vec<u8>,
    red_since: Vec<i64>,
    red_onsets: Vec<Vec<i64>>,
    green_onsets: Vec<Vec<i64>>,
}

impl<'a> Controller<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let cat = &cfg.catalog;
        let index = |s: &String| cat.signals.iter().position(|x| x == s).unwrap();
        let phase_signals: Vec<Vec<usize>> = cfg
            .phases
            .iter()
            .map(|p| p.signals.iter().map(index).collect())
            .collect();
        let ring: Vec<usize> = (0..cfg.phases.len())
            .filter(|&p| !cfg.phases[p].transit_only)
            .collect();
        let n_sig = cat.signals.len();
        Self {
            mode: Mode::Clearance {
                next: ring[0],
                green_at: cfg.intergreen_s as i64,
            },
            cfg,
            phase_signals,
            ring_pos: ring.len() - 1,
            ring,
            calls: vec![0; cfg.phases.len()],
            served_since_regular: vec![false; cfg.phases.len()],
            signal_state: vec![0; n_sig],
            red_since: vec![0; n_sig],
            red_onsets: vec![Vec::new(); n_sig],
            green_onsets: vec![Vec::new(); n_sig],
        }
    }

    /// A vehicle for `phase` reached its detector (or called it) at `t`.
    fn actuate(&mut self, phase: usize, t: i64) {
        match &mut self.mode {
            Mode::Green {
                phase: p,
                last_act,
                queued,
                ..
            } if *p == phase => {
                if *queued > 0 {
                    *queued += 1;
                } else {
                    *last_act = Some(t);
                }
            }
            _ => self.calls[phase] += 1,
        }
    }

    fn pending_transit(&self, current: usize) -> Option<usize> {
        (0..self.cfg.phases.len()).find(|&p| {
            self.cfg.phases[p].transit_only
                && p != current
                && self.calls[p] > 0
                && !self.served_since_regular[p]
        })
    }

    /// Advance the state machine for second `t` (before states are recorded).
    fn begin_second(&mut self, t: i64) {
        match self.mode {
            Mode::Clearance { next, green_at } if green_at == t => {
                for &s in &self.phase_signals[next] {
                    if self.signal_state[s] == 0 {
                        self.signal_state[s] = 1;
                        self.green_onsets[s].push(t);
                    }
                }
                if self.cfg.phases[next].transit_only {
                    self.served_since_regular[next] = true;
                } else {
                    self.ring_pos = self.ring.iter().position(|&p| p == next).unwrap();
                    self.served_since_regular.fill(false);
                }
                let queued = std::mem::take(&mut self.calls[next]);
                self.mode = Mode::Green {
                    phase: next,
                    start: t,
                    last_act: None,
                    queued,
                    next_discharge: t,
                };
            }
            _ => {}
        }
        let headway = self.cfg.saturation_headway_s as i64;
        if let Mode::Green {
            last_act,
            queued,
            next_discharge,
            ..
        } = &mut self.mode
        {
            if *queued > 0 && *next_discharge == t {
                *queued -= 1;
                *last_act = Some(t);
                *next_discharge = t + headway;
            }
        }
    }

    /// Decide at the end of second `t` whether green continues into `t + 1`.
    fn end_second(&mut self, t: i64) {
        let Mode::Green {
            phase,
            start,
            last_act,
            queued,
            ..
        } = self.mode
        else {
            return;
        };
        let def = &self.cfg.phases[phase];
        let elapsed = (t - start + 1) as u32;
        let keep = if elapsed < def.min_green {
            true
        } else if elapsed >= def.max_green {
            false
        } else if !def.transit_only && self.pending_transit(phase).is_some() {
            false
        } else {
            queued > 0 || last_act.is_some_and(|a| t + 1 - a < def.extension_gap as i64)
        };
        if keep {
            return;
        }
        self.calls[phase] += queued;
        let next = self
            .pending_transit(phase)
            .unwrap_or(self.ring[(self.ring_pos + 1) % self.ring.len()]);
        let leaving: Vec<usize> = self.phase_signals[phase]
            .iter()
            .copied()
            .filter(|s| !self.phase_signals[next].contains(s))
            .collect();
        for s in leaving {
            self.signal_state[s] = 0;
            self.red_since[s] = t + 1;
            self.red_onsets[s].push(t + 1);
        }
        let mut green_at = t + 1 + self.cfg.intergreen_s as i64;
        for &s in &self.phase_signals[next] {
            if self.signal_state[s] == 0 {
                let id = &self.cfg.catalog.signals[s];
                let min_red = self.cfg.base_red.get(id).copied().unwrap_or(0) as i64;
                green_at = green_at.max(self.red_since[s] + min_red);
            }
        }
        self.mode = Mode::Clearance { next, green_at };
    }
}

/// Run the controller for `horizon_s` seconds.
pub fn simulate(config: &SimConfig, horizon_s: usize, seed: u64) -> Result<SimRun> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let cat = &config.catalog;
    let n_sig = cat.signals.len();
    let n_det = cat.detectors.len();

    // Phases each detector calls.
    let det_phases: Vec<Vec<usize>> = cat
        .detectors
        .iter()
        .map(|d| {
            if cat.transit_devices.contains(d) {
                return config
                    .priority_rule
                    .get(d)
                    .and_then(|name| config.phases.iter().position(|p| &p.name == name))
                    .into_iter()
                    .collect();
            }
            let sigs = cat.detector_to_signal.get(d).cloned().unwrap_or_default();
            (0..config.phases.len())
                .filter(|&p| {
                    !config.phases[p].transit_only
                        && config.phases[p].signals.iter().any(|s| sigs.contains(s))
                })
                .collect()
        })
        .collect();

    let mut rngs: Vec<ChaCha8Rng> = (0..n_det)
        .map(|d| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(d as u64);
            r
        })
        .collect();
    let is_transit: Vec<bool> = cat
        .detectors
        .iter()
        .map(|d| cat.transit_devices.contains(d))
        .collect();
    let tram_gap = config
        .transit_headway_s
        .filter(|_| config.transit_enabled())
        .map(|h| Exp::new(1.0 / h).expect("validated headway"));
    let mut next_tram: Vec<Option<f64>> = (0..n_det)
        .map(|d| match (&tram_gap, is_transit[d]) {
            (Some(exp), true) => Some(exp.sample(&mut rngs[d])),
            _ => None,
        })
        .collect();
    let rates: Vec<f64> = cat
        .detectors
        .iter()
        .map(|d| config.arrival_rate.get(d).copied().unwrap_or(0.0) / 3600.0)
        .collect();

    let mut ctl = Controller::new(config);
    let mut busy_until = vec![i64::MIN; n_det];
    let mut scheduled_calls: VecDeque<(i64, usize)> = VecDeque::new();
    let mut prev = vec![0u8; n_sig + n_det];
    let mut telegrams = Vec::new();

    for t in 0..horizon_s as i64 {
        let hour = ((config.epoch_start + t).rem_euclid(86_400) / 3600) as usize;
        let factor = config.hourly_demand.get(hour).copied().unwrap_or(1.0);
        ctl.begin_second(t);

        for d in 0..n_det {
            if is_transit[d] {
                while let Some(at) = next_tram[d] {
                    if at.ceil() as i64 > t {
                        break;
                    }
                    busy_until[d] = busy_until[d].max(t + config.transit_occupation_s as i64);
                    for &p in &det_phases[d] {
                        scheduled_calls.push_back((t + config.transit_lead_s as i64, p));
                    }
                    let gap = tram_gap.as_ref().unwrap().sample(&mut rngs[d]);
                    next_tram[d] = Some(at + gap.max(1.0));
                }
                continue;
            }
            let lambda = rates[d] * factor;
            if lambda <= 0.0 {
                continue;
            }
            let n = Poisson::new(lambda).expect("positive rate").sample(&mut rngs[d]) as u32;
            if n == 0 {
                continue;
            }
            busy_until[d] = busy_until[d].max(t + config.detector_occupation_s as i64);
            for _ in 0..n {
                for &p in &det_phases[d] {
                    ctl.actuate(p, t);
                }
            }
        }
        while scheduled_calls.front().is_some_and(|&(at, _)| at <= t) {
            let (_, p) = scheduled_calls.pop_front().unwrap();
            ctl.actuate(p, t);
        }

        for (i, id) in cat.devices().enumerate() {
            let v = if i < n_sig {
                ctl.signal_state[i]
            } else {
                u8::from(busy_until[i - n_sig] > t)
            };
            if v != prev[i] {
                telegrams.push(Telegram::new(config.epoch_start + t, id, v));
                prev[i] = v;
            }
        }
        ctl.end_second(t);
    }

    let mut ground_truth_cycles = BTreeMap::new();
    for (s, id) in cat.signals.iter().enumerate() {
        let reds = &ctl.red_onsets[s];
        let greens = &ctl.green_onsets[s];
        let horizon = horizon_s as i64;
        let cycles: Vec<Cycle> = reds
            .windows(2)
            .filter(|w| w[1] < horizon)
            .enumerate()
            .map(|(n, w)| {
                let g = *greens
                    .iter()
                    .find(|&&g| g > w[0] && g < w[1])
                    .expect("one green onset between red onsets");
                Cycle {
                    signal_id: id.clone(),
                    index: n + 1,
                    start_k: w[0] as usize + 1,
                    end_k: w[1] as usize,
                    red_s: (g - w[0]) as u32,
                    green_s: (w[1] - g) as u32,
                }
            })
            .collect();
        ground_truth_cycles.insert(id.clone(), cycles);
    }

    Ok(SimRun {
        seed,
        horizon_s,
        window: Window::new(config.epoch_start, horizon_s),
        telegrams,
        ground_truth_cycles,
    })
}
