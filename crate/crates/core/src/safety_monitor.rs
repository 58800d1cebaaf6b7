//! Non-AI safety cage around the SOC estimator.
//!
//! Detects the four classic sensor failure modes (out-of-range, offset,
//! stuck-in-range, oscillation) and arbitrates between the AI estimate and a
//! coulomb-counting fallback. The monitor only sees raw sensor samples, the
//! emitted estimate stream and its own coulomb reference; it never touches
//! model internals.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery_sim::{coulomb_step, BatteryConfig, SensorSample, SimError};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("window of {got} samples, need at least {need}")]
    WindowTooShort { need: usize, got: usize },
    #[error("window lengths differ: {0} values vs {1} currents")]
    WindowMismatch(usize, usize),
    #[error("invalid monitor configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Battery(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub voltage_range_v: (f64, f64),
    pub temperature_range_c: (f64, f64),
    /// Largest plausible |dSOC/dt| between consecutive estimates, 1/s.
    pub soc_rate_limit_per_s: f64,
    pub stuck_window: usize,
    pub stuck_epsilon: f64,
    /// Mean |current| above which a flat signal is suspicious, A.
    pub stuck_activity_floor_a: f64,
    pub osc_window: usize,
    pub osc_signchange_threshold: usize,
    /// Largest accepted |soc_est - soc_coulomb|.
    pub correlation_tolerance: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            voltage_range_v: (2.5, 4.3),
            temperature_range_c: (-20.0, 60.0),
            soc_rate_limit_per_s: 5e-4,
            stuck_window: 50,
            stuck_epsilon: 1e-4,
            stuck_activity_floor_a: 0.1,
            osc_window: 16,
            osc_signchange_threshold: 8,
            correlation_tolerance: 0.05,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        let bad = |m: &str| Err(MonitorError::InvalidConfig(m.to_string()));
        let (vlo, vhi) = self.voltage_range_v;
        let (tlo, thi) = self.temperature_range_c;
        if !(vlo < vhi) || !(tlo < thi) {
            return bad("ranges must be non-degenerate");
        }
        if !(self.soc_rate_limit_per_s > 0.0 && self.stuck_epsilon > 0.0 && self.correlation_tolerance > 0.0) {
            return bad("thresholds must be positive");
        }
        if !(self.stuck_activity_floor_a >= 0.0) {
            return bad("activity floor must be non-negative");
        }
        if self.stuck_window < 2 {
            return bad("stuck_window must be at least 2");
        }
        if self.osc_window < 4 {
            return bad("osc_window must be at least 4");
        }
        if self.osc_signchange_threshold == 0 || self.osc_signchange_threshold > self.osc_window - 2 {
            return bad("osc_signchange_threshold must be in 1..=osc_window-2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureMode {
    OutOfRange,
    Offset,
    StuckInRange,
    Oscillation,
}

impl FailureMode {
    pub const ALL: [FailureMode; 4] = [
        FailureMode::OutOfRange,
        FailureMode::Offset,
        FailureMode::StuckInRange,
        FailureMode::Oscillation,
    ];

    fn bit(self) -> u8 {
        1 << self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FailureMode::OutOfRange => "OutOfRange",
            FailureMode::Offset => "Offset",
            FailureMode::StuckInRange => "StuckInRange",
            FailureMode::Oscillation => "Oscillation",
        }
    }
}

/// Set of detected failure modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Detections(u8);

impl Detections {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn insert(&mut self, mode: FailureMode) {
        self.0 |= mode.bit();
    }

    pub fn extend(&mut self, modes: impl IntoIterator<Item = FailureMode>) {
        for m in modes {
            self.insert(m);
        }
    }

    pub fn union(self, other: Detections) -> Detections {
        Detections(self.0 | other.0)
    }

    pub fn contains(self, mode: FailureMode) -> bool {
        self.0 & mode.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = FailureMode> {
        FailureMode::ALL.into_iter().filter(move |m| self.contains(*m))
    }
}

impl FromIterator<FailureMode> for Detections {
    fn from_iter<I: IntoIterator<Item = FailureMode>>(iter: I) -> Self {
        let mut d = Detections::empty();
        d.extend(iter);
        d
    }
}

/// `|`-separated mode names, empty when nothing was detected.
impl fmt::Display for Detections {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(FailureMode::as_str).collect();
        f.write_str(&names.join("|"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Inhibit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SocSource {
    AiEstimator,
    CoulombFallback,
    HoldLast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorVerdict {
    pub step: usize,
    pub status: Status,
    pub detected: Detections,
    /// AI estimate in force at this step, if one has been produced yet.
    pub soc_ai: Option<f64>,
    pub soc_out: f64,
    pub source: SocSource,
}

/// Voltage or temperature outside the closed configured range. NaN readings
/// are out of range.
pub fn check_range(sample: &SensorSample, config: &MonitorConfig) -> Option<FailureMode> {
    let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    if inside(sample.voltage_v, config.voltage_range_v) && inside(sample.temperature_c, config.temperature_range_c) {
        None
    } else {
        Some(FailureMode::OutOfRange)
    }
}

/// Flat signal while the battery is under load. Uses the last
/// `stuck_window` entries of `values` and the matching `currents`.
pub fn check_stuck(values: &[f64], currents: &[f64], config: &MonitorConfig) -> Result<Option<FailureMode>, MonitorError> {
    let n = config.stuck_window;
    if values.len() != currents.len() {
        return Err(MonitorError::WindowMismatch(values.len(), currents.len()));
    }
    if values.len() < n {
        return Err(MonitorError::WindowTooShort {
            need: n,
            got: values.len(),
        });
    }
    let values = &values[values.len() - n..];
    let currents = &currents[currents.len() - n..];
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let activity = currents.iter().map(|i| i.abs()).sum::<f64>() / n as f64;
    if hi - lo < config.stuck_epsilon && activity > config.stuck_activity_floor_a {
        Ok(Some(FailureMode::StuckInRange))
    } else {
        Ok(None)
    }
}

/// Many reversals of direction with a visible amplitude. Uses the last
/// `osc_window` entries of `values`.
pub fn check_oscillation(values: &[f64], config: &MonitorConfig) -> Result<Option<FailureMode>, MonitorError> {
    let n = config.osc_window;
    if values.len() < n {
        return Err(MonitorError::WindowTooShort {
            need: n,
            got: values.len(),
        });
    }
    let values = &values[values.len() - n..];
    let mut changes = 0;
    let mut last_sign = 0.0;
    for pair in values.windows(2) {
        let d = pair[1] - pair[0];
        if d == 0.0 {
            continue;
        }
        let s = d.signum();
        if last_sign != 0.0 && s != last_sign {
            changes += 1;
        }
        last_sign = s;
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if changes >= config.osc_signchange_threshold && hi - lo > config.stuck_epsilon {
        Ok(Some(FailureMode::Oscillation))
    } else {
        Ok(None)
    }
}

/// Estimate disagrees with the coulomb-counting reference.
pub fn check_rationality(soc_est: f64, soc_reference: f64, config: &MonitorConfig) -> Option<FailureMode> {
    if (soc_est - soc_reference).abs() <= config.correlation_tolerance {
        None
    } else {
        Some(FailureMode::Offset)
    }
}

/// Estimate moved faster than any plausible load could drain or charge.
pub fn check_rate(previous: f64, current: f64, elapsed_s: f64, config: &MonitorConfig) -> Option<FailureMode> {
    let allowed = config.soc_rate_limit_per_s * elapsed_s + config.correlation_tolerance;
    if (current - previous).abs() <= allowed {
        None
    } else {
        Some(FailureMode::Offset)
    }
}

/// Chooses the emitted SOC. A detection inhibits the AI estimate and emits
/// the coulomb fallback, or the last emitted value when no fallback exists.
/// Before the first AI estimate the fallback is emitted with `Pass`.
pub fn arbitrate(
    step: usize,
    soc_ai: Option<f64>,
    detected: Detections,
    fallback_soc: Option<f64>,
    last_emitted: f64,
) -> MonitorVerdict {
    let (status, source, soc_out) = match (detected.is_empty(), soc_ai, fallback_soc) {
        (true, Some(ai), _) => (Status::Pass, SocSource::AiEstimator, ai),
        (true, None, Some(fb)) => (Status::Pass, SocSource::CoulombFallback, fb),
        (true, None, None) => (Status::Pass, SocSource::HoldLast, last_emitted),
        (false, _, Some(fb)) => (Status::Inhibit, SocSource::CoulombFallback, fb),
        (false, _, None) => (Status::Inhibit, SocSource::HoldLast, last_emitted),
    };
    MonitorVerdict {
        step,
        status,
        detected,
        soc_ai,
        soc_out: soc_out.clamp(0.0, 1.0),
        source,
    }
}

/// Stateful monitor for one battery stream.
#[derive(Debug, Clone)]
pub struct SafetyMonitor {
    config: MonitorConfig,
    battery: BatteryConfig,
    coulomb_soc: Option<f64>,
    last_emitted: f64,
    voltages: VecDeque<f64>,
    currents: VecDeque<f64>,
    estimates: VecDeque<f64>,
    estimate_activity: VecDeque<f64>,
    abs_current_since_estimate: (f64, usize),
    last_estimate: Option<(usize, f64)>,
    estimate_detections: Detections,
}

impl SafetyMonitor {
    pub fn new(config: MonitorConfig, battery: BatteryConfig, initial_soc: f64) -> Result<Self, MonitorError> {
        config.validate()?;
        battery.validate()?;
        if !(0.0..=1.0).contains(&initial_soc) {
            return Err(MonitorError::InvalidConfig(format!("initial SOC {initial_soc} outside [0, 1]")));
        }
        Ok(Self {
            config,
            battery,
            coulomb_soc: Some(initial_soc),
            last_emitted: initial_soc,
            voltages: VecDeque::new(),
            currents: VecDeque::new(),
            estimates: VecDeque::new(),
            estimate_activity: VecDeque::new(),
            abs_current_since_estimate: (0.0, 0),
            last_estimate: None,
            estimate_detections: Detections::empty(),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    /// Coulomb-counted SOC at the start of the next sample.
    pub fn coulomb_reference(&self) -> Option<f64> {
        self.coulomb_soc
    }

    /// Processes one raw sample, plus a fresh AI estimate if the estimator
    /// produced one at this step. Between estimates the last one stays in
    /// force, together with whatever was detected when it arrived.
    pub fn step(&mut self, step: usize, raw: &SensorSample, estimate: Option<f64>) -> MonitorVerdict {
        let cfg = &self.config;
        let mut detected = Detections::empty();
        detected.extend(check_range(raw, cfg));

        push_bounded(&mut self.voltages, raw.voltage_v, cfg.stuck_window);
        push_bounded(&mut self.currents, raw.current_a, cfg.stuck_window);
        if self.voltages.len() == cfg.stuck_window {
            let (v, i) = (self.voltages.make_contiguous().to_vec(), self.currents.make_contiguous());
            detected.extend(check_stuck(&v, i, cfg).ok().flatten());
        }

        let reference = self.coulomb_soc;
        let (sum, count) = &mut self.abs_current_since_estimate;
        if raw.current_a.is_finite() {
            *sum += raw.current_a.abs();
        }
        *count += 1;

        if let Some(est) = estimate {
            self.assess_estimate(step, est, reference);
        }
        detected = detected.union(self.estimate_detections);

        let verdict = arbitrate(
            step,
            self.last_estimate.map(|(_, e)| e),
            detected,
            reference,
            self.last_emitted,
        );
        self.last_emitted = verdict.soc_out;

        self.coulomb_soc = match self.coulomb_soc {
            Some(soc) if raw.current_a.is_finite() => Some(coulomb_step(soc, raw.current_a, &self.battery)),
            _ => None,
        };
        verdict
    }

    fn assess_estimate(&mut self, step: usize, est: f64, reference: Option<f64>) {
        let cfg = &self.config;
        let mut d = Detections::empty();
        if !(0.0..=1.0).contains(&est) {
            d.insert(FailureMode::OutOfRange);
        }
        if let Some(r) = reference {
            d.extend(check_rationality(est, r, cfg));
        }
        if let Some((prev_step, prev)) = self.last_estimate {
            let elapsed = (step - prev_step) as f64 * self.battery.sample_period_s;
            d.extend(check_rate(prev, est, elapsed, cfg));
        }

        let (sum, count) = self.abs_current_since_estimate;
        let activity = if count > 0 { sum / count as f64 } else { 0.0 };
        self.abs_current_since_estimate = (0.0, 0);
        let keep = cfg.stuck_window.max(cfg.osc_window);
        push_bounded(&mut self.estimates, est, keep);
        push_bounded(&mut self.estimate_activity, activity, keep);
        let values = self.estimates.make_contiguous().to_vec();
        let activity = self.estimate_activity.make_contiguous();
        if values.len() >= cfg.stuck_window {
            d.extend(check_stuck(&values, activity, cfg).ok().flatten());
        }
        if values.len() >= cfg.osc_window {
            d.extend(check_oscillation(&values, cfg).ok().flatten());
        }

        self.last_estimate = Some((step, est));
        self.estimate_detections = d;
    }
}

fn push_bounded(q: &mut VecDeque<f64>, v: f64, cap: usize) {
    if q.len() == cap {
        q.pop_front();
    }
    q.push_back(v);
}

/// Runs a fresh monitor over a whole trace. `estimates` holds
/// `(step, soc_est)` pairs in increasing step order.
pub fn monitor_run(
    config: &MonitorConfig,
    battery: &BatteryConfig,
    initial_soc: f64,
    samples: &[SensorSample],
    estimates: &[(usize, f64)],
) -> Result<Vec<MonitorVerdict>, MonitorError> {
    let mut monitor = SafetyMonitor::new(config.clone(), battery.clone(), initial_soc)?;
    let mut next = estimates.iter().peekable();
    Ok(samples
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let est = next.next_if(|(step, _)| *step == k).map(|&(_, e)| e);
            monitor.step(k, s, est)
        })
        .collect())
}

pub const VERDICT_CSV_HEADER: [&str; 6] = ["step", "status", "detected", "soc_ai", "soc_out", "source"];

pub fn write_verdict_log<W: Write>(verdicts: &[MonitorVerdict], writer: W) -> Result<(), MonitorError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| MonitorError::Io(e.into());
    w.write_record(VERDICT_CSV_HEADER).map_err(io)?;
    for v in verdicts {
        w.write_record([
            v.step.to_string(),
            format!("{:?}", v.status),
            v.detected.to_string(),
            v.soc_ai.map(|s| s.to_string()).unwrap_or_default(),
            v.soc_out.to_string(),
            format!("{:?}", v.source),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
