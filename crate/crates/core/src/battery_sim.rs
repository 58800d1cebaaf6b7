//! Synthetic lithium-ion discharge traces with coulomb-counted ground truth.
//!
//! The simulator is an open-circuit-voltage source in series with a fixed
//! internal resistance, plus a first-order thermal node heated by I²R losses.
//! SOC is integrated by coulomb counting; [`coulomb_count`] shares the exact
//! recurrence so it reproduces `soc_truth` bit for bit.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_CSV_HEADER: [&str; 5] = ["t_s", "voltage_V", "current_A", "temperature_C", "soc_truth"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("load profile is empty")]
    EmptyLoadProfile,
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("initial SOC {0} outside [0, 1]")]
    InitialSocOutOfRange(f64),
    #[error("invalid battery configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid OCV curve: {0}")]
    InvalidOcv(String),
    #[error("trace CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Piecewise-linear open-circuit voltage as a function of SOC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcvCurve {
    points: Vec<(f64, f64)>,
}

impl OcvCurve {
    /// Builds a curve from `(soc, volts)` knots. The knots must cover
    /// `[0, 1]` and be strictly increasing in both coordinates.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if points.len() < 2 {
            return Err(SimError::InvalidOcv("need at least two knots".into()));
        }
        if points.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
            return Err(SimError::InvalidOcv("non-finite knot".into()));
        }
        if points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(SimError::InvalidOcv("knots must span SOC 0 to 1".into()));
        }
        for pair in points.windows(2) {
            if pair[1].0 <= pair[0].0 || pair[1].1 <= pair[0].1 {
                return Err(SimError::InvalidOcv("curve must be strictly increasing".into()));
            }
        }
        Ok(Self { points })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Voltage at rest for the given SOC; SOC outside `[0, 1]` is clamped.
    pub fn voltage(&self, soc: f64) -> f64 {
        let soc = soc.clamp(0.0, 1.0);
        let seg = self
            .points
            .windows(2)
            .find(|p| soc <= p[1].0)
            .unwrap_or(&self.points[self.points.len() - 2..]);
        let (s0, v0) = seg[0];
        let (s1, v1) = seg[1];
        if soc == s0 {
            return v0;
        }
        if soc == s1 {
            return v1;
        }
        v0 + (soc - s0) * (v1 - v0) / (s1 - s0)
    }
}

impl Default for OcvCurve {
    fn default() -> Self {
        Self {
            points: vec![(0.0, 3.0), (0.1, 3.4), (0.9, 4.0), (1.0, 4.2)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub capacity_ah: f64,
    pub internal_resistance_ohm: f64,
    pub ocv_curve: OcvCurve,
    pub ambient_temp_c: f64,
    /// Temperature rise per joule dissipated, °C/(W·s).
    pub thermal_coeff: f64,
    /// Newtonian cooling rate towards ambient, 1/s.
    pub cooling_coeff: f64,
    pub sample_period_s: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            capacity_ah: 3.0,
            internal_resistance_ohm: 0.05,
            ocv_curve: OcvCurve::default(),
            ambient_temp_c: 25.0,
            thermal_coeff: 0.04,
            cooling_coeff: 1.0 / 600.0,
            sample_period_s: 1.0,
        }
    }
}

impl BatteryConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let finite = [
            self.capacity_ah,
            self.internal_resistance_ohm,
            self.ambient_temp_c,
            self.thermal_coeff,
            self.cooling_coeff,
            self.sample_period_s,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite("battery configuration"));
        }
        if self.capacity_ah <= 0.0 {
            return Err(SimError::InvalidConfig("capacity_ah must be positive".into()));
        }
        if self.sample_period_s <= 0.0 {
            return Err(SimError::InvalidConfig("sample_period_s must be positive".into()));
        }
        if self.internal_resistance_ohm < 0.0 || self.thermal_coeff < 0.0 || self.cooling_coeff < 0.0 {
            return Err(SimError::InvalidConfig(
                "resistance and thermal coefficients must be non-negative".into(),
            ));
        }
        // cooling_coeff * dt > 1 would overshoot ambient every step
        if self.cooling_coeff * self.sample_period_s > 1.0 {
            return Err(SimError::InvalidConfig("cooling_coeff * sample_period_s exceeds 1".into()));
        }
        Ok(())
    }

    /// SOC lost over one sample period at the given current.
    fn soc_delta(&self, current_a: f64) -> f64 {
        current_a * self.sample_period_s / (3600.0 * self.capacity_ah)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub t_s: f64,
    pub voltage_v: f64,
    /// Discharge positive.
    pub current_a: f64,
    pub temperature_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DischargeTrace {
    pub samples: Vec<SensorSample>,
    /// SOC at the start of each sample interval.
    pub soc_truth: Vec<f64>,
    /// SOC after the final sample interval has been integrated.
    pub end_soc: f64,
    pub config: BatteryConfig,
}

/// One coulomb-counting step. Shared by the simulator and [`coulomb_count`].
#[inline]
pub fn coulomb_step(soc: f64, current_a: f64, config: &BatteryConfig) -> f64 {
    (soc - config.soc_delta(current_a)).clamp(0.0, 1.0)
}

pub fn simulate_discharge(
    config: &BatteryConfig,
    load_profile: &[f64],
    initial_soc: f64,
) -> Result<DischargeTrace, SimError> {
    config.validate()?;
    if load_profile.is_empty() {
        return Err(SimError::EmptyLoadProfile);
    }
    if !initial_soc.is_finite() {
        return Err(SimError::NonFinite("initial SOC"));
    }
    if !(0.0..=1.0).contains(&initial_soc) {
        return Err(SimError::InitialSocOutOfRange(initial_soc));
    }
    if load_profile.iter().any(|i| !i.is_finite()) {
        return Err(SimError::NonFinite("load current"));
    }

    let dt = config.sample_period_s;
    let r = config.internal_resistance_ohm;
    let mut samples = Vec::with_capacity(load_profile.len());
    let mut soc_truth = Vec::with_capacity(load_profile.len());
    let mut soc = initial_soc;
    let mut temp = config.ambient_temp_c;

    for (k, &current) in load_profile.iter().enumerate() {
        samples.push(SensorSample {
            t_s: k as f64 * dt,
            voltage_v: config.ocv_curve.voltage(soc) - current * r,
            current_a: current,
            temperature_c: temp,
        });
        soc_truth.push(soc);

        let heat = config.thermal_coeff * current * current * r * dt;
        let cooling = config.cooling_coeff * (temp - config.ambient_temp_c) * dt;
        temp = temp + heat - cooling;
        soc = coulomb_step(soc, current, config);
        if soc == 0.0 && current > 0.0 {
            break;
        }
    }

    Ok(DischargeTrace {
        samples,
        soc_truth,
        end_soc: soc,
        config: config.clone(),
    })
}

/// Coulomb-counted SOC for a current prefix. Returns `currents.len() + 1`
/// values: the initial SOC followed by the SOC after each interval.
pub fn coulomb_count(currents: &[f64], initial_soc: f64, config: &BatteryConfig) -> Result<Vec<f64>, SimError> {
    config.validate()?;
    if !initial_soc.is_finite() || currents.iter().any(|i| !i.is_finite()) {
        return Err(SimError::NonFinite("coulomb counting input"));
    }
    if !(0.0..=1.0).contains(&initial_soc) {
        return Err(SimError::InitialSocOutOfRange(initial_soc));
    }
    let mut out = Vec::with_capacity(currents.len() + 1);
    let mut soc = initial_soc;
    out.push(soc);
    for &i in currents {
        soc = coulomb_step(soc, i, config);
        out.push(soc);
    }
    Ok(out)
}

/// Random sequence of constant-current pulses between 0.5 A and 3 A, long
/// enough to drain a full cell of the given capacity at the lowest rate.
pub fn mixed_pulse_profile(seed: u64, config: &BatteryConfig) -> Vec<f64> {
    const MIN_A: f64 = 0.5;
    const MAX_A: f64 = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (config.capacity_ah * 3600.0 / (MIN_A * config.sample_period_s)).ceil() as usize + 1;
    let mut profile = Vec::with_capacity(steps);
    while profile.len() < steps {
        let amps = rng.gen_range(MIN_A..=MAX_A);
        let secs: f64 = rng.gen_range(20.0..240.0);
        let n = ((secs / config.sample_period_s).round() as usize).max(1);
        profile.extend(std::iter::repeat_n(amps, n));
    }
    profile.truncate(steps);
    profile
}

/// Ambient temperatures of the six default training cycles. The spread puts a
/// 25 °C cycle in the upper half of the fitted temperature range.
pub const TRAINING_AMBIENTS_C: [f64; 6] = [10.0, 15.0, 20.0, 25.0, 25.0, 25.0];

/// The six default training cycles, each a full discharge from SOC 1.
pub fn training_cycles(seed: u64) -> Vec<DischargeTrace> {
    TRAINING_AMBIENTS_C
        .iter()
        .enumerate()
        .map(|(i, &ambient)| {
            let config = BatteryConfig {
                ambient_temp_c: ambient,
                ..BatteryConfig::default()
            };
            let profile = mixed_pulse_profile(seed.wrapping_mul(31).wrapping_add(i as u64), &config);
            simulate_discharge(&config, &profile, 1.0).expect("default configuration is valid")
        })
        .collect()
}

/// A 25 °C cycle drawn from a load stream disjoint from [`training_cycles`].
pub fn holdout_cycle(seed: u64) -> DischargeTrace {
    let config = BatteryConfig::default();
    let profile = mixed_pulse_profile(seed ^ 0x9E37_79B9_7F4A_7C15, &config);
    simulate_discharge(&config, &profile, 1.0).expect("default configuration is valid")
}

impl DischargeTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn currents(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.current_a).collect()
    }

    /// Writes the trace as CSV using shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| SimError::Csv(e.to_string());
        w.write_record(TRACE_CSV_HEADER).map_err(csv_err)?;
        for (s, soc) in self.samples.iter().zip(&self.soc_truth) {
            w.write_record([
                s.t_s.to_string(),
                s.voltage_v.to_string(),
                s.current_a.to_string(),
                s.temperature_c.to_string(),
                soc.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`DischargeTrace::write_csv`]. The CSV does
    /// not carry the battery parameters, so the caller supplies them; the end
    /// SOC is recomputed from the last row.
    pub fn read_csv<R: Read>(reader: R, config: BatteryConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(|e| SimError::Csv(e.to_string()))?;
        if headers.iter().ne(TRACE_CSV_HEADER.iter().copied()) {
            return Err(SimError::Csv(format!("unexpected header {:?}", headers)));
        }
        let mut samples = Vec::new();
        let mut soc_truth = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Csv(e.to_string()))?;
            let field = |i: usize| -> Result<f64, SimError> {
                rec.get(i)
                    .ok_or_else(|| SimError::Csv(format!("row {}: missing column {}", line + 1, i)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| SimError::Csv(format!("row {}: {}", line + 1, e)))
            };
            samples.push(SensorSample {
                t_s: field(0)?,
                voltage_v: field(1)?,
                current_a: field(2)?,
                temperature_c: field(3)?,
            });
            soc_truth.push(field(4)?);
        }
        let end_soc = match (samples.last(), soc_truth.last()) {
            (Some(s), Some(&soc)) => coulomb_step(soc, s.current_a, &config),
            _ => return Err(SimError::Csv("trace has no rows".into())),
        };
        Ok(Self {
            samples,
            soc_truth,
            end_soc,
            config,
        })
    }
}
