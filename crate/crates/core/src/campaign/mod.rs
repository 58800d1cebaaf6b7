//! End-to-end fault-injection campaigns.
//!
//! A campaign runs the estimator once over the clean trace, then once per
//! [`FaultSpec`] over a corrupted copy of the normalized inputs, compares the
//! two, and optionally replays each run through the [`SafetyMonitor`].
//! Experiments are independent and run on a worker pool; results are always
//! returned in sweep order.
//!
//! [`SafetyMonitor`]: crate::safety_monitor::SafetyMonitor

mod plot;
mod report;

pub use plot::{render_absdev_heatmap, render_bit_scatter, render_plots, Metric};
pub use report::{
    absdev_rows, campaign_rows, emit_reports, rerender, read_absdev_csv, read_campaign_csv, write_absdev_csv, write_baseline_csv, write_campaign_csv,
    AbsDevRow, CampaignCsvRow, ReportFiles, CAMPAIGN_CSV_HEADER,
};

use std::fs::File;
use std::io::BufReader;
use std::ops::RangeInclusive;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery_sim::{holdout_cycle, training_cycles, BatteryConfig, DischargeTrace, SimError};
use crate::dataset::{fit_bounds, labelled_windows, normalize_trace, windows_from_frames, Channel, DatasetError, Frame};
use crate::estimator::{
    load_model, train, LstmModel, ModelError, Prediction, TrainConfig, TrainError, TrainReport, DEFAULT_HIDDEN,
    DEFAULT_WINDOW,
};
use crate::fault_injector::{corrupt_series, enumerate_campaign, FaultError, FaultMode, FaultSpec};
use crate::metrics::{compare_runs, rmse, DeviationReport, MetricsError};
use crate::safety_monitor::{monitor_run, Detections, MonitorConfig, MonitorError, MonitorVerdict, Status};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("campaign produced no results")]
    EmptyCampaign,
    #[error("no model available: {0}")]
    MissingModel(String),
    #[error("invalid campaign configuration: {0}")]
    Config(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters used when no model file is given: plain
/// mini-batch gradient descent with gradient-norm clipping at 1.
pub fn default_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

/// Trains an estimator on the six default synthetic cycles.
pub fn train_default_model(
    seed: u64,
    hidden: usize,
    window: usize,
    config: &TrainConfig,
) -> Result<(LstmModel, TrainReport), CampaignError> {
    let cycles = training_cycles(seed);
    train_on_traces(&cycles, seed, hidden, window, config)
}

pub fn train_on_traces(
    traces: &[DischargeTrace],
    seed: u64,
    hidden: usize,
    window: usize,
    config: &TrainConfig,
) -> Result<(LstmModel, TrainReport), CampaignError> {
    let bounds = fit_bounds(traces)?;
    let mut data = Vec::new();
    for t in traces {
        data.extend(labelled_windows(t, &bounds, window)?);
    }
    let init = LstmModel::random(hidden, window, bounds, seed)?;
    Ok(train(&init, &data, config)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    /// The default 25 °C hold-out cycle for the campaign seed.
    Simulate,
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Train {
        hidden: usize,
        window: usize,
        #[serde(default)]
        train: Option<TrainConfig>,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub channels: Vec<Channel>,
    pub bits: (u32, u32),
    pub modes: Vec<FaultMode>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            channels: Channel::ALL.to_vec(),
            bits: (3, 64),
            modes: FaultMode::STUCK_AT.to_vec(),
        }
    }
}

impl SweepConfig {
    pub fn bit_range(&self) -> RangeInclusive<u32> {
        self.bits.0..=self.bits.1
    }

    pub fn enumerate(&self) -> Result<Vec<FaultSpec>, FaultError> {
        enumerate_campaign(&self.channels, self.bit_range(), &self.modes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub trace: TraceSource,
    /// Battery parameters for simulated traces and for reading trace CSVs.
    pub battery: BatteryConfig,
    pub model: ModelSource,
    pub sweep: SweepConfig,
    pub monitor_enabled: bool,
    pub monitor: MonitorConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            trace: TraceSource::Simulate,
            battery: BatteryConfig::default(),
            model: ModelSource::Train {
                hidden: DEFAULT_HIDDEN,
                window: DEFAULT_WINDOW,
                train: None,
            },
            sweep: SweepConfig::default(),
            monitor_enabled: true,
            monitor: MonitorConfig::default(),
            out_dir: PathBuf::from("campaign_out"),
            seed: 0,
            jobs: None,
        }
    }
}

impl CampaignConfig {
    pub fn load_trace(&self) -> Result<DischargeTrace, CampaignError> {
        match &self.trace {
            TraceSource::Simulate => {
                let mut t = holdout_cycle(self.seed);
                if self.battery != BatteryConfig::default() {
                    let profile = t.currents();
                    t = crate::battery_sim::simulate_discharge(&self.battery, &profile, 1.0)?;
                }
                Ok(t)
            }
            TraceSource::Csv { path } => Ok(DischargeTrace::read_csv(
                BufReader::new(File::open(path)?),
                self.battery.clone(),
            )?),
        }
    }

    pub fn load_model(&self) -> Result<LstmModel, CampaignError> {
        match &self.model {
            ModelSource::File { path } => {
                if !path.exists() {
                    return Err(CampaignError::MissingModel(path.display().to_string()));
                }
                Ok(load_model(path)?)
            }
            ModelSource::Train { hidden, window, train } => {
                let cfg = train.clone().unwrap_or_else(|| default_train_config(self.seed));
                Ok(train_default_model(self.seed, *hidden, *window, &cfg)?.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub predictions: Vec<Prediction>,
    /// Ground-truth SOC at each prediction's last sample.
    pub soc_truth: Vec<f64>,
    pub rmse_truth: f64,
    pub max_abs_err: f64,
}

/// Fault-free inference over a trace, scored against ground truth.
pub fn run_baseline(model: &LstmModel, trace: &DischargeTrace) -> Result<BaselineReport, CampaignError> {
    model.validate()?;
    let frames = normalize_trace(trace, &model.bounds);
    let windows = windows_from_frames(&frames, model.window)?;
    let predictions = model.predict_all(&windows)?;
    let soc_truth: Vec<f64> = windows.iter().map(|w| trace.soc_truth[w.last_step()]).collect();
    let est: Vec<f64> = predictions.iter().map(|p| p.soc_est).collect();
    let max_abs_err = est.iter().zip(&soc_truth).map(|(e, t)| (e - t).abs()).fold(0.0, f64::max);
    Ok(BaselineReport {
        rmse_truth: rmse(&est, &soc_truth)?,
        predictions,
        soc_truth,
        max_abs_err,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorOutcome {
    pub detected: bool,
    pub first_detect_step: Option<usize>,
    pub modes: Detections,
    /// Share of prediction steps at which the AI estimate was inhibited.
    pub inhibited_fraction: f64,
}

impl MonitorOutcome {
    pub fn from_verdicts(verdicts: &[MonitorVerdict], prediction_steps: &[usize]) -> Self {
        let first = verdicts.iter().find(|v| v.status == Status::Inhibit);
        let modes = verdicts.iter().fold(Detections::empty(), |d, v| d.union(v.detected));
        let inhibited = prediction_steps
            .iter()
            .filter(|&&s| verdicts.get(s).is_some_and(|v| v.status == Status::Inhibit))
            .count();
        Self {
            detected: first.is_some(),
            first_detect_step: first.map(|v| v.step),
            modes,
            inhibited_fraction: if prediction_steps.is_empty() {
                0.0
            } else {
                inhibited as f64 / prediction_steps.len() as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub report: DeviationReport,
    pub monitor: Option<MonitorOutcome>,
    /// Non-finite values reached the predictions, or the experiment aborted.
    pub exception: bool,
}

/// Everything shared read-only by the experiments of one campaign.
#[derive(Debug, Clone)]
pub struct CampaignContext {
    pub model: LstmModel,
    pub trace: DischargeTrace,
    pub frames: Vec<Frame>,
    pub baseline: BaselineReport,
    pub initial_soc: f64,
}

impl CampaignContext {
    pub fn new(model: LstmModel, trace: DischargeTrace) -> Result<Self, CampaignError> {
        let baseline = run_baseline(&model, &trace)?;
        let frames = normalize_trace(&trace, &model.bounds);
        let initial_soc = *trace.soc_truth.first().ok_or(MetricsError::Empty)?;
        Ok(Self {
            model,
            trace,
            frames,
            baseline,
            initial_soc,
        })
    }

    fn prediction_steps(&self) -> Vec<usize> {
        self.baseline.predictions.iter().map(|p| p.end_step - 1).collect()
    }

    /// Replays the raw trace and an estimate stream through a fresh monitor.
    pub fn monitor(&self, config: &MonitorConfig, predictions: &[Prediction]) -> Result<Vec<MonitorVerdict>, CampaignError> {
        let estimates: Vec<(usize, f64)> = predictions.iter().map(|p| (p.end_step - 1, p.soc_est)).collect();
        Ok(monitor_run(
            config,
            &self.trace.config,
            self.initial_soc,
            &self.trace.samples,
            &estimates,
        )?)
    }

    pub fn baseline_monitor(&self, config: &MonitorConfig) -> Result<MonitorOutcome, CampaignError> {
        let verdicts = self.monitor(config, &self.baseline.predictions)?;
        Ok(MonitorOutcome::from_verdicts(&verdicts, &self.prediction_steps()))
    }

    /// Faulted predictions for one spec.
    pub fn faulty_predictions(&self, fault: FaultSpec) -> Result<Vec<Prediction>, CampaignError> {
        let series = corrupt_series(&self.frames, fault);
        let windows = windows_from_frames(&series.frames, self.model.window)?;
        Ok(self.model.predict_all(&windows)?)
    }

    pub fn run_fault(&self, fault: FaultSpec, monitor: Option<&MonitorConfig>) -> Result<ExperimentResult, CampaignError> {
        let series = corrupt_series(&self.frames, fault);
        let windows = windows_from_frames(&series.frames, self.model.window)?;
        let predictions = self.model.predict_all(&windows)?;
        let exception = predictions.iter().any(|p| !p.soc_raw.is_finite())
            || series.frames.iter().any(|f| !f[fault.channel.index()].is_finite());
        let report = compare_runs(&self.baseline.predictions, &predictions, &self.trace, &series)?;
        let monitor = match monitor {
            Some(cfg) => {
                let verdicts = self.monitor(cfg, &predictions)?;
                Some(MonitorOutcome::from_verdicts(&verdicts, &self.prediction_steps()))
            }
            None => None,
        };
        Ok(ExperimentResult {
            report,
            monitor,
            exception,
        })
    }

    /// Same as [`run_fault`](Self::run_fault), but a failing experiment
    /// becomes a flagged row instead of aborting the campaign.
    pub fn run_fault_guarded(&self, fault: FaultSpec, monitor: Option<&MonitorConfig>) -> ExperimentResult {
        match catch_unwind(AssertUnwindSafe(|| self.run_fault(fault, monitor))) {
            Ok(Ok(r)) => r,
            _ => ExperimentResult {
                report: DeviationReport {
                    fault,
                    rmse_pred: f64::INFINITY,
                    rmse_data: f64::INFINITY,
                    abs_dev: Vec::new(),
                    max_abs_dev: f64::INFINITY,
                    n_predictions: 0,
                    rmse_truth: f64::INFINITY,
                },
                monitor: None,
                exception: true,
            },
        }
    }

    /// Runs every spec on `jobs` workers; output order follows `specs`.
    pub fn run_all(
        &self,
        specs: &[FaultSpec],
        monitor: Option<&MonitorConfig>,
        jobs: Option<usize>,
    ) -> Result<Vec<ExperimentResult>, CampaignError> {
        let run = || -> Vec<ExperimentResult> {
            specs.par_iter().map(|&s| self.run_fault_guarded(s, monitor)).collect()
        };
        match jobs {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| CampaignError::Config(e.to_string()))?;
                Ok(pool.install(run))
            }
            None => Ok(run()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub context: CampaignContext,
    pub rows: Vec<ExperimentResult>,
    pub baseline_monitor: Option<MonitorOutcome>,
    pub files: Option<ReportFiles>,
}

impl CampaignResult {
    /// Among faults whose worst deviation exceeds `tolerance`, the share
    /// the monitor detected. `None` without monitor data or such faults.
    pub fn detection_rate(&self, tolerance: f64) -> Option<f64> {
        let relevant: Vec<&ExperimentResult> = self
            .rows
            .iter()
            .filter(|r| r.report.max_abs_dev > tolerance && r.monitor.is_some())
            .collect();
        if relevant.is_empty() {
            return None;
        }
        let hit = relevant.iter().filter(|r| r.monitor.as_ref().is_some_and(|m| m.detected)).count();
        Some(hit as f64 / relevant.len() as f64)
    }
}

/// Runs a campaign with an already loaded model and trace, without writing
/// any files.
pub fn run_with(
    model: LstmModel,
    trace: DischargeTrace,
    sweep: &SweepConfig,
    monitor: Option<&MonitorConfig>,
    jobs: Option<usize>,
) -> Result<CampaignResult, CampaignError> {
    let specs = sweep.enumerate()?;
    let context = CampaignContext::new(model, trace)?;
    let baseline_monitor = monitor.map(|m| context.baseline_monitor(m)).transpose()?;
    let rows = context.run_all(&specs, monitor, jobs)?;
    Ok(CampaignResult {
        context,
        rows,
        baseline_monitor,
        files: None,
    })
}

/// Loads or builds the trace and model, runs the sweep and writes every
/// report into `config.out_dir`.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    let specs = config.sweep.enumerate()?;
    if specs.is_empty() {
        return Err(CampaignError::EmptyCampaign);
    }
    let trace = config.load_trace()?;
    let model = config.load_model()?;
    let monitor = config.monitor_enabled.then_some(&config.monitor);
    let mut result = run_with(model, trace, &config.sweep, monitor, config.jobs)?;
    result.files = Some(emit_reports(&result, config)?);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery_sim::{mixed_pulse_profile, simulate_discharge};
    use crate::estimator::Optimizer;

    fn small_setup() -> (LstmModel, DischargeTrace) {
        let cfg = BatteryConfig {
            capacity_ah: 0.2,
            ..BatteryConfig::default()
        };
        let traces: Vec<DischargeTrace> = (0..2)
            .map(|s| simulate_discharge(&cfg, &mixed_pulse_profile(s, &cfg), 1.0).unwrap())
            .collect();
        let tc = TrainConfig {
            epochs: 20,
            learning_rate: 0.01,
            batch_size: 4,
            seed: 1,
            optimizer: Optimizer::adam(),
            clip_norm: 1.0,
        };
        let (model, _) = train_on_traces(&traces[..1], 1, 4, 20, &tc).unwrap();
        (model, traces[1].clone())
    }

    #[test]
    fn rows_follow_sweep_order_and_count() {
        let (model, trace) = small_setup();
        let sweep = SweepConfig {
            channels: vec![Channel::Current, Channel::Voltage],
            bits: (10, 14),
            modes: vec![FaultMode::StuckAt1, FaultMode::BitFlip],
        };
        let r = run_with(model, trace, &sweep, Some(&MonitorConfig::default()), Some(2)).unwrap();
        assert_eq!(r.rows.len(), 20);
        let specs = sweep.enumerate().unwrap();
        for (row, spec) in r.rows.iter().zip(&specs) {
            assert_eq!(row.report.fault, *spec);
            assert_eq!(row.report.n_predictions, r.context.baseline.predictions.len());
            assert!(row.monitor.is_some());
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (model, trace) = small_setup();
        let sweep = SweepConfig {
            channels: vec![Channel::Voltage],
            bits: (3, 20),
            modes: vec![FaultMode::StuckAt0],
        };
        let a = run_with(model.clone(), trace.clone(), &sweep, None, Some(1)).unwrap();
        let b = run_with(model, trace, &sweep, None, Some(4)).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn non_finite_injection_is_flagged() {
        let (model, trace) = small_setup();
        let ctx = CampaignContext::new(model, trace).unwrap();
        // exponent bit 2 set on 1.0 gives +inf
        assert!(ctx.frames.iter().any(|f| f[0] == 1.0));
        let spec = FaultSpec::new(Channel::Voltage, 2, FaultMode::StuckAt1).unwrap();
        let r = ctx.run_fault(spec, Some(&MonitorConfig::default())).unwrap();
        assert!(r.exception);
        assert_eq!(r.report.rmse_data, f64::INFINITY);
        let faulty = ctx.faulty_predictions(spec).unwrap();
        if faulty.iter().any(|p| !p.soc_raw.is_finite()) {
            assert_eq!(r.report.rmse_pred, f64::INFINITY);
        }

        let clean = FaultSpec::new(Channel::Voltage, 40, FaultMode::StuckAt0).unwrap();
        assert!(!ctx.run_fault(clean, None).unwrap().exception);
    }

    #[test]
    fn short_trace_is_rejected() {
        let (model, trace) = small_setup();
        let mut short = trace;
        short.samples.truncate(10);
        short.soc_truth.truncate(10);
        assert!(matches!(
            run_baseline(&model, &short),
            Err(CampaignError::Dataset(DatasetError::TraceTooShort { .. }))
        ));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = CampaignConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: CampaignConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: CampaignConfig = serde_json::from_str(r#"{"seed": 5, "monitor_enabled": false}"#).unwrap();
        assert_eq!(partial.seed, 5);
        assert!(!partial.monitor_enabled);
        assert_eq!(partial.sweep, SweepConfig::default());
    }
}
