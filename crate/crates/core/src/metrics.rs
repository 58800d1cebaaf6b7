//! Deviation metrics between a fault-free run and a faulted run.

use thiserror::Error;

use crate::battery_sim::DischargeTrace;
use crate::estimator::Prediction;
use crate::fault_injector::{CorruptedSeries, FaultSpec};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("prediction schedules differ at index {index}: step {baseline} vs {faulty}")]
    ScheduleMismatch { index: usize, baseline: usize, faulty: usize },
    #[error("prediction end step {0} outside trace")]
    StepOutsideTrace(usize),
}

/// Root mean squared error. Pairs that are bit-identical contribute zero;
/// any other pair whose difference is not finite makes the result `+inf`.
///
/// Squares are scaled by the largest absolute difference so that huge
/// faulted values do not overflow the sum.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| if x.to_bits() == y.to_bits() { 0.0 } else { (x - y).abs() })
        .collect();
    Ok(scaled_rms(&diffs))
}

fn scaled_rms(diffs: &[f64]) -> f64 {
    if diffs.iter().any(|d| !d.is_finite()) {
        return f64::INFINITY;
    }
    let scale = diffs.iter().fold(0.0f64, |m, &d| m.max(d));
    if scale == 0.0 {
        return 0.0;
    }
    let mean_sq = diffs.iter().map(|d| (d / scale) * (d / scale)).sum::<f64>() / diffs.len() as f64;
    scale * mean_sq.sqrt()
}

/// RMSE between original and corrupted values of the faulted channel.
pub fn data_rmse(series: &CorruptedSeries<'_>) -> f64 {
    let (orig, corr): (Vec<f64>, Vec<f64>) = series.channel_pairs().unzip();
    rmse(&orig, &corr).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub fault: FaultSpec,
    /// RMSE of clamped SOC estimates, faulted vs fault-free.
    pub rmse_pred: f64,
    /// RMSE of the faulted normalized channel, corrupted vs original.
    pub rmse_data: f64,
    /// `(soc_truth at the prediction's last step, |Δ soc_est|)` per prediction.
    pub abs_dev: Vec<(f64, f64)>,
    pub max_abs_dev: f64,
    pub n_predictions: usize,
    /// RMSE of the faulted estimates against ground truth.
    pub rmse_truth: f64,
}

pub fn compare_runs(
    baseline: &[Prediction],
    faulty: &[Prediction],
    trace: &DischargeTrace,
    data: &CorruptedSeries<'_>,
) -> Result<DeviationReport, MetricsError> {
    if baseline.len() != faulty.len() {
        return Err(MetricsError::LengthMismatch(baseline.len(), faulty.len()));
    }
    if baseline.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut abs_dev = Vec::with_capacity(baseline.len());
    let mut truth = Vec::with_capacity(baseline.len());
    for (index, (b, f)) in baseline.iter().zip(faulty).enumerate() {
        if b.end_step != f.end_step {
            return Err(MetricsError::ScheduleMismatch {
                index,
                baseline: b.end_step,
                faulty: f.end_step,
            });
        }
        let soc = *trace
            .soc_truth
            .get(b.end_step.wrapping_sub(1))
            .ok_or(MetricsError::StepOutsideTrace(b.end_step))?;
        let dev = if b.soc_est.to_bits() == f.soc_est.to_bits() {
            0.0
        } else {
            let d = (b.soc_est - f.soc_est).abs();
            if d.is_finite() { d } else { f64::INFINITY }
        };
        abs_dev.push((soc, dev));
        truth.push(soc);
    }
    let base_est: Vec<f64> = baseline.iter().map(|p| p.soc_est).collect();
    let fault_est: Vec<f64> = faulty.iter().map(|p| p.soc_est).collect();
    let max_abs_dev = abs_dev.iter().fold(0.0f64, |m, &(_, d)| m.max(d));
    Ok(DeviationReport {
        fault: data.fault,
        rmse_pred: rmse(&base_est, &fault_est)?,
        rmse_data: data_rmse(data),
        max_abs_dev,
        n_predictions: abs_dev.len(),
        abs_dev,
        rmse_truth: rmse(&fault_est, &truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery_sim::{simulate_discharge, BatteryConfig};
    use crate::dataset::{Channel, Frame};
    use crate::fault_injector::{corrupt_series, FaultMode};
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.1, 0.2], &[0.1, 0.2]), Ok(0.0));
        let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((r - 3.53553).abs() < 1e-5);
        assert_eq!(rmse(&[1.0], &[4.0]), Ok(3.0));
        assert_eq!(rmse(&[1.0], &[4.0, 2.0]), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(rmse(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn rmse_handles_extremes() {
        let huge = 1e300;
        let r = rmse(&[huge, huge], &[0.0, 0.0]).unwrap();
        assert!((r / huge - 1.0).abs() < 1e-15);
        assert_eq!(rmse(&[f64::NAN], &[0.5]), Ok(f64::INFINITY));
        assert_eq!(rmse(&[f64::NAN], &[f64::NAN]), Ok(0.0));
    }

    fn pred(end_step: usize, soc: f64) -> Prediction {
        Prediction {
            end_step,
            soc_raw: soc,
            soc_est: soc,
        }
    }

    fn setup() -> (DischargeTrace, Vec<Frame>) {
        let trace = simulate_discharge(&BatteryConfig::default(), &[1.0; 20], 1.0).unwrap();
        let frames = vec![[0.6, 0.7, 0.8]; 20];
        (trace, frames)
    }

    #[test]
    fn compare_runs_hand_values() {
        let (trace, frames) = setup();
        let data = corrupt_series(&frames, FaultSpec::new(Channel::Voltage, 13, FaultMode::StuckAt1).unwrap());
        let base = [pred(10, 0.9), pred(20, 0.5)];
        let faulty = [pred(10, 0.8), pred(20, 0.5)];
        let r = compare_runs(&base, &faulty, &trace, &data).unwrap();
        assert!((r.abs_dev[0].1 - 0.1).abs() < 1e-15);
        assert_eq!(r.abs_dev[1].1, 0.0);
        assert_eq!(r.abs_dev[0].0, trace.soc_truth[9]);
        assert!((r.rmse_pred - 0.005f64.sqrt()).abs() < 1e-15);
        assert!((r.rmse_pred - 0.07071).abs() < 1e-5);
        assert_eq!(r.n_predictions, 2);
        assert!(r.max_abs_dev >= r.rmse_pred / (r.n_predictions as f64).sqrt());
        // 0.6 = 1.2 * 2^-1, first fraction bit is 0 so SA1 adds 2^-2
        assert!((r.rmse_data - 0.25).abs() < 1e-15);
    }

    #[test]
    fn identity_fault_gives_zero() {
        let (trace, frames) = setup();
        let data = corrupt_series(&frames, FaultSpec::new(Channel::Voltage, 4, FaultMode::StuckAt1).unwrap());
        let base = [pred(10, 0.9), pred(20, 0.5)];
        let r = compare_runs(&base, &base, &trace, &data).unwrap();
        assert_eq!((r.rmse_pred, r.rmse_data, r.max_abs_dev), (0.0, 0.0, 0.0));
    }

    #[test]
    fn schedule_mismatch() {
        let (trace, frames) = setup();
        let data = corrupt_series(&frames, FaultSpec::new(Channel::Voltage, 4, FaultMode::StuckAt1).unwrap());
        let err = compare_runs(&[pred(10, 0.9)], &[pred(20, 0.9)], &trace, &data).unwrap_err();
        assert!(matches!(err, MetricsError::ScheduleMismatch { .. }));
        assert!(compare_runs(&[pred(10, 0.9)], &[], &trace, &data).is_err());
    }

    proptest! {
        #[test]
        fn rmse_properties(
            pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50),
            c in -100.0f64..100.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = rmse(&a, &b).unwrap();
            prop_assert!(r >= 0.0);
            prop_assert_eq!(r, rmse(&b, &a).unwrap());
            prop_assert_eq!(r == 0.0, a == b);
            let ca: Vec<f64> = a.iter().map(|x| c * x).collect();
            let cb: Vec<f64> = b.iter().map(|x| c * x).collect();
            let scaled = rmse(&ca, &cb).unwrap();
            prop_assert!((scaled - c.abs() * r).abs() <= 1e-9 * (1.0 + c.abs() * r));
            let max = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(max + 1e-12 >= r / (a.len() as f64).sqrt());
        }
    }
}
