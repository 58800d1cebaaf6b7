//! Min/max normalization and non-overlapping windowing of discharge traces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery_sim::{DischargeTrace, SensorSample};

/// One normalized time step: `[voltage, current, temperature]`.
pub type Frame = [f64; 3];

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("no traces to fit bounds on")]
    NoTraces,
    #[error("channel {0} is degenerate (max == min)")]
    DegenerateChannel(Channel),
    #[error("channel {0} has non-finite samples")]
    NonFinite(Channel),
    #[error("trace of {len} steps is shorter than the window length {window}")]
    TraceTooShort { len: usize, window: usize },
    #[error("window length must be at least 1")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Voltage,
    Current,
    Temperature,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Voltage, Channel::Current, Channel::Temperature];

    /// Column of this channel in a [`Frame`].
    pub fn index(self) -> usize {
        match self {
            Channel::Voltage => 0,
            Channel::Current => 1,
            Channel::Temperature => 2,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Channel::Voltage => "V",
            Channel::Current => "I",
            Channel::Temperature => "T",
        }
    }

    fn raw(self, s: &SensorSample) -> f64 {
        match self {
            Channel::Voltage => s.voltage_v,
            Channel::Current => s.current_a,
            Channel::Temperature => s.temperature_c,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "V" | "VOLTAGE" => Ok(Channel::Voltage),
            "I" | "CURRENT" => Ok(Channel::Current),
            "T" | "TEMPERATURE" => Ok(Channel::Temperature),
            other => Err(format!("unknown channel '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelBounds {
    pub min: f64,
    pub max: f64,
}

impl ChannelBounds {
    fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Per-channel physical bounds, indexed like a [`Frame`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub channels: [ChannelBounds; 3],
}

impl NormalizationBounds {
    pub fn new(voltage: (f64, f64), current: (f64, f64), temperature: (f64, f64)) -> Result<Self, DatasetError> {
        let b = Self {
            channels: [voltage, current, temperature].map(|(min, max)| ChannelBounds { min, max }),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for ch in Channel::ALL {
            let b = self.get(ch);
            if !b.min.is_finite() || !b.max.is_finite() {
                return Err(DatasetError::NonFinite(ch));
            }
            if b.max <= b.min {
                return Err(DatasetError::DegenerateChannel(ch));
            }
        }
        Ok(())
    }

    pub fn get(&self, ch: Channel) -> ChannelBounds {
        self.channels[ch.index()]
    }

    pub fn normalize_value(&self, ch: Channel, raw: f64) -> f64 {
        let b = self.get(ch);
        ((raw - b.min) / b.span()).clamp(0.0, 1.0)
    }

    /// Maps a normalized value back to physical units. No clamping, so
    /// faulted values far outside `[0, 1]` map to implausible raw readings.
    pub fn denormalize_value(&self, ch: Channel, x: f64) -> f64 {
        let b = self.get(ch);
        b.min + x * b.span()
    }
}

pub fn fit_bounds(traces: &[DischargeTrace]) -> Result<NormalizationBounds, DatasetError> {
    if traces.iter().all(|t| t.is_empty()) {
        return Err(DatasetError::NoTraces);
    }
    let mut channels = [ChannelBounds {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    }; 3];
    for s in traces.iter().flat_map(|t| &t.samples) {
        for ch in Channel::ALL {
            let v = ch.raw(s);
            if !v.is_finite() {
                return Err(DatasetError::NonFinite(ch));
            }
            let b = &mut channels[ch.index()];
            b.min = b.min.min(v);
            b.max = b.max.max(v);
        }
    }
    let bounds = NormalizationBounds { channels };
    bounds.validate()?;
    Ok(bounds)
}

pub fn normalize(sample: &SensorSample, bounds: &NormalizationBounds) -> Frame {
    Channel::ALL.map(|ch| bounds.normalize_value(ch, ch.raw(sample)))
}

/// Inverse of [`normalize`] for the three sensor channels (time is not kept).
pub fn denormalize(frame: &Frame, bounds: &NormalizationBounds) -> (f64, f64, f64) {
    (
        bounds.denormalize_value(Channel::Voltage, frame[0]),
        bounds.denormalize_value(Channel::Current, frame[1]),
        bounds.denormalize_value(Channel::Temperature, frame[2]),
    )
}

pub fn normalize_trace(trace: &DischargeTrace, bounds: &NormalizationBounds) -> Vec<Frame> {
    trace.samples.iter().map(|s| normalize(s, bounds)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputWindow {
    /// `N` rows of `[V, I, T]`, oldest first.
    pub frames: Vec<Frame>,
    /// Exclusive end index in the source trace; the window covers
    /// `end_step - N .. end_step`.
    pub end_step: usize,
}

impl InputWindow {
    /// Index of the last sample the window covers.
    pub fn last_step(&self) -> usize {
        self.end_step - 1
    }
}

/// Non-overlapping windows ending at `N, 2N, 3N, ...`; a trailing remainder
/// shorter than `N` is dropped.
pub fn windows_from_frames(frames: &[Frame], window: usize) -> Result<Vec<InputWindow>, DatasetError> {
    if window == 0 {
        return Err(DatasetError::ZeroWindow);
    }
    if frames.len() < window {
        return Err(DatasetError::TraceTooShort {
            len: frames.len(),
            window,
        });
    }
    Ok(frames
        .chunks_exact(window)
        .enumerate()
        .map(|(k, chunk)| InputWindow {
            frames: chunk.to_vec(),
            end_step: (k + 1) * window,
        })
        .collect())
}

pub fn make_windows(
    trace: &DischargeTrace,
    bounds: &NormalizationBounds,
    window: usize,
) -> Result<Vec<InputWindow>, DatasetError> {
    windows_from_frames(&normalize_trace(trace, bounds), window)
}

/// Windows paired with the ground-truth SOC at each window's last sample.
pub fn labelled_windows(
    trace: &DischargeTrace,
    bounds: &NormalizationBounds,
    window: usize,
) -> Result<Vec<(InputWindow, f64)>, DatasetError> {
    Ok(make_windows(trace, bounds, window)?
        .into_iter()
        .map(|w| {
            let soc = trace.soc_truth[w.last_step()];
            (w, soc)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery_sim::{simulate_discharge, BatteryConfig};
    use proptest::prelude::*;

    fn bounds() -> NormalizationBounds {
        NormalizationBounds::new((3.0, 4.2), (0.0, 3.0), (20.0, 40.0)).unwrap()
    }

    fn sample(v: f64, i: f64, t: f64) -> SensorSample {
        SensorSample {
            t_s: 0.0,
            voltage_v: v,
            current_a: i,
            temperature_c: t,
        }
    }

    fn trace_from(samples: Vec<SensorSample>) -> DischargeTrace {
        let n = samples.len();
        DischargeTrace {
            samples,
            soc_truth: vec![0.5; n],
            end_soc: 0.5,
            config: BatteryConfig::default(),
        }
    }

    #[test]
    fn fit_bounds_min_max() {
        let a = trace_from(vec![sample(3.0, 1.0, 25.0), sample(4.2, 2.0, 26.0)]);
        let b = fit_bounds(std::slice::from_ref(&a)).unwrap();
        assert_eq!(b.get(Channel::Voltage), ChannelBounds { min: 3.0, max: 4.2 });

        let c = trace_from(vec![sample(2.9, 0.5, 27.0), sample(4.0, 1.5, 25.5)]);
        let b = fit_bounds(&[a, c]).unwrap();
        assert_eq!(b.get(Channel::Voltage), ChannelBounds { min: 2.9, max: 4.2 });
        assert_eq!(b.get(Channel::Current), ChannelBounds { min: 0.5, max: 2.0 });
        assert_eq!(b.get(Channel::Temperature), ChannelBounds { min: 25.0, max: 27.0 });
    }

    #[test]
    fn fit_bounds_degenerate_and_empty() {
        let t = trace_from(vec![sample(3.0, 1.0, 25.0), sample(4.2, 2.0, 25.0)]);
        assert_eq!(fit_bounds(&[t]), Err(DatasetError::DegenerateChannel(Channel::Temperature)));
        assert_eq!(fit_bounds(&[]), Err(DatasetError::NoTraces));
    }

    #[test]
    fn normalize_examples() {
        let b = bounds();
        assert_eq!(normalize(&sample(3.0, 0.0, 20.0), &b), [0.0, 0.0, 0.0]);
        assert_eq!(normalize(&sample(3.6, 1.5, 30.0), &b), [0.5, 0.5, 0.5]);
        // 4.2 - 3.0 rounds to 1.2000000000000002, so the stored value sits
        // two ulps under 0.75 (0x3FE7FFFFFFFFFFFE) with the same exponent.
        let x = normalize(&sample(3.9, 0.0, 20.0), &b)[0];
        assert_eq!(x.to_bits(), 0x3FE7_FFFF_FFFF_FFFE);
        assert!((x - 0.75).abs() <= 2.0 * f64::EPSILON / 2.0);
        assert_eq!(crate::fault_injector::read_bit(x, 11), Ok(1));
        assert_eq!(crate::fault_injector::read_bit(x, 12), Ok(0));
        // clamping
        assert_eq!(normalize(&sample(5.0, -1.0, 20.0), &b), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn window_counts() {
        let b = bounds();
        let mk = |n: usize| trace_from(vec![sample(3.5, 1.0, 25.0); n]);
        let w = make_windows(&mk(900), &b, 300).unwrap();
        assert_eq!(w.iter().map(|w| w.end_step).collect::<Vec<_>>(), vec![300, 600, 900]);
        assert!(w.iter().all(|w| w.frames.len() == 300));
        assert_eq!(
            make_windows(&mk(299), &b, 300),
            Err(DatasetError::TraceTooShort { len: 299, window: 300 })
        );
        assert_eq!(make_windows(&mk(301), &b, 300).unwrap().len(), 1);
    }

    #[test]
    fn windows_preserve_order() {
        let cfg = BatteryConfig::default();
        let trace = simulate_discharge(&cfg, &(0..40).map(|k| 0.5 + k as f64 * 0.05).collect::<Vec<_>>(), 1.0).unwrap();
        let b = bounds();
        let frames = normalize_trace(&trace, &b);
        let w = windows_from_frames(&frames, 8).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w[2].frames[..], frames[16..24]);
        assert_eq!(w[2].last_step(), 23);
    }

    proptest! {
        #[test]
        fn window_count_is_floor(len in 1usize..2000, n in 1usize..400) {
            let frames = vec![[0.5; 3]; len];
            match windows_from_frames(&frames, n) {
                Ok(w) => prop_assert_eq!(w.len(), len / n),
                Err(DatasetError::TraceTooShort { .. }) => prop_assert!(len < n),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn normalize_round_trip(v in 3.0f64..=4.2, i in 0.0f64..=3.0, t in 20.0f64..=40.0) {
            let b = bounds();
            let (v2, i2, t2) = denormalize(&normalize(&sample(v, i, t), &b), &b);
            for (x, y) in [(v, v2), (i, i2), (t, t2)] {
                let ulp = f64::from_bits(x.abs().to_bits() + 1) - x.abs();
                prop_assert!((x - y).abs() <= ulp.max(f64::EPSILON * 4.0), "{x} vs {y}");
            }
        }

        #[test]
        fn normalize_is_monotone(a in 2.0f64..5.0, d in 0.0f64..1.0) {
            let b = bounds();
            let lo = b.normalize_value(Channel::Voltage, a);
            let hi = b.normalize_value(Channel::Voltage, a + d);
            prop_assert!(lo <= hi);
            prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }
}
