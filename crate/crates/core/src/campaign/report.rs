//! CSV and JSON artifacts of a campaign.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BaselineReport, CampaignConfig, CampaignError, CampaignResult};
use crate::estimator::save_model;
use crate::safety_monitor::write_verdict_log;

pub const CAMPAIGN_CSV_HEADER: [&str; 13] = [
    "fault",
    "channel",
    "bit",
    "mode",
    "region",
    "rmse_pred",
    "rmse_data",
    "max_abs_dev",
    "n_predictions",
    "monitor_detected",
    "first_detect_step",
    "inhibited_fraction",
    "exception",
];

/// One row of `campaign.csv`. Monitor columns are empty when the monitor
/// was disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignCsvRow {
    pub fault: String,
    pub channel: String,
    pub bit: u32,
    pub mode: String,
    pub region: String,
    pub rmse_pred: f64,
    pub rmse_data: f64,
    pub max_abs_dev: f64,
    pub n_predictions: usize,
    pub monitor_detected: Option<bool>,
    pub first_detect_step: Option<usize>,
    pub inhibited_fraction: Option<f64>,
    pub exception: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsDevRow {
    pub fault: String,
    pub end_step: usize,
    pub soc_truth: f64,
    pub abs_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub campaign_csv: PathBuf,
    pub absdev_csv: PathBuf,
    pub baseline_csv: PathBuf,
    pub baseline_monitor_csv: Option<PathBuf>,
    pub model_json: PathBuf,
    pub meta_json: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Round-trip exact and free of 300-digit expansions.
pub(crate) fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v != 0.0 && (v.abs() >= 1e6 || v.abs() < 1e-4) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn csv_err(e: csv::Error) -> CampaignError {
    CampaignError::Report(e.to_string())
}

pub fn campaign_rows(result: &CampaignResult) -> Vec<CampaignCsvRow> {
    result
        .rows
        .iter()
        .map(|r| {
            let f = r.report.fault;
            CampaignCsvRow {
                fault: f.to_string(),
                channel: f.channel.short().to_string(),
                bit: f.bit.get() as u32,
                mode: f.mode.short().to_string(),
                region: f.bit.region().as_str().to_string(),
                rmse_pred: r.report.rmse_pred,
                rmse_data: r.report.rmse_data,
                max_abs_dev: r.report.max_abs_dev,
                n_predictions: r.report.n_predictions,
                monitor_detected: r.monitor.as_ref().map(|m| m.detected),
                first_detect_step: r.monitor.as_ref().and_then(|m| m.first_detect_step),
                inhibited_fraction: r.monitor.as_ref().map(|m| m.inhibited_fraction),
                exception: r.exception,
            }
        })
        .collect()
}

pub fn absdev_rows(result: &CampaignResult) -> Vec<AbsDevRow> {
    let steps: Vec<usize> = result.context.baseline.predictions.iter().map(|p| p.end_step).collect();
    result
        .rows
        .iter()
        .flat_map(|r| {
            let fault = r.report.fault.to_string();
            r.report
                .abs_dev
                .iter()
                .zip(&steps)
                .map(move |(&(soc_truth, abs_dev), &end_step)| AbsDevRow {
                    fault: fault.clone(),
                    end_step,
                    soc_truth,
                    abs_dev,
                })
        })
        .collect()
}

pub fn write_campaign_csv<W: Write>(rows: &[CampaignCsvRow], writer: W) -> Result<(), CampaignError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CAMPAIGN_CSV_HEADER).map_err(csv_err)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.fault.clone(),
            r.channel.clone(),
            r.bit.to_string(),
            r.mode.clone(),
            r.region.clone(),
            fmt_num(r.rmse_pred),
            fmt_num(r.rmse_data),
            fmt_num(r.max_abs_dev),
            r.n_predictions.to_string(),
            opt(r.monitor_detected.map(|b| b.to_string())),
            opt(r.first_detect_step.map(|s| s.to_string())),
            opt(r.inhibited_fraction.map(fmt_num)),
            r.exception.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_campaign_csv<R: Read>(reader: R) -> Result<Vec<CampaignCsvRow>, CampaignError> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != CAMPAIGN_CSV_HEADER {
        return Err(CampaignError::Report(format!("unexpected campaign header: {}", header.join(","))));
    }
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

pub fn write_absdev_csv<W: Write>(rows: &[AbsDevRow], writer: W) -> Result<(), CampaignError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fault", "end_step", "soc_truth", "abs_dev"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.fault.clone(),
            r.end_step.to_string(),
            fmt_num(r.soc_truth),
            fmt_num(r.abs_dev),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_absdev_csv<R: Read>(reader: R) -> Result<Vec<AbsDevRow>, CampaignError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err)
}

pub fn write_baseline_csv<W: Write>(baseline: &BaselineReport, writer: W) -> Result<(), CampaignError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["end_step", "soc_truth", "soc_est", "abs_err"]).map_err(csv_err)?;
    for (p, &t) in baseline.predictions.iter().zip(&baseline.soc_truth) {
        w.write_record([
            p.end_step.to_string(),
            fmt_num(t),
            fmt_num(p.soc_est),
            fmt_num((p.soc_est - t).abs()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Meta<'a> {
    experiments: usize,
    predictions_per_run: usize,
    /// Deviations and RMSEs are taken on the clamped SOC output.
    prediction_metric: &'static str,
    baseline_rmse_truth: f64,
    baseline_max_abs_err: f64,
    baseline_monitor_detections: Option<String>,
    hidden_size: usize,
    window_length: usize,
    config: &'a CampaignConfig,
}

fn create(path: &Path) -> Result<BufWriter<File>, CampaignError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes every artifact of `result` into `config.out_dir`.
pub fn emit_reports(result: &CampaignResult, config: &CampaignConfig) -> Result<ReportFiles, CampaignError> {
    if result.rows.is_empty() {
        return Err(CampaignError::EmptyCampaign);
    }
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;

    let rows = campaign_rows(result);
    let dev = absdev_rows(result);
    let campaign_csv = dir.join("campaign.csv");
    write_campaign_csv(&rows, create(&campaign_csv)?)?;
    let absdev_csv = dir.join("absdev.csv");
    write_absdev_csv(&dev, create(&absdev_csv)?)?;
    let baseline_csv = dir.join("baseline.csv");
    write_baseline_csv(&result.context.baseline, create(&baseline_csv)?)?;

    let baseline_monitor_csv = if config.monitor_enabled {
        let verdicts = result.context.monitor(&config.monitor, &result.context.baseline.predictions)?;
        let path = dir.join("baseline_monitor.csv");
        write_verdict_log(&verdicts, create(&path)?)?;
        Some(path)
    } else {
        None
    };

    let model_json = dir.join("model.json");
    save_model(&result.context.model, &model_json)?;

    let meta = Meta {
        experiments: rows.len(),
        predictions_per_run: result.context.baseline.predictions.len(),
        prediction_metric: "clamped soc_est",
        baseline_rmse_truth: result.context.baseline.rmse_truth,
        baseline_max_abs_err: result.context.baseline.max_abs_err,
        baseline_monitor_detections: result.baseline_monitor.as_ref().map(|m| m.modes.to_string()),
        hidden_size: result.context.model.hidden(),
        window_length: result.context.model.window,
        config,
    };
    let meta_json = dir.join("campaign_meta.json");
    let mut w = create(&meta_json)?;
    serde_json::to_writer_pretty(&mut w, &meta).map_err(|e| CampaignError::Report(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;

    let plots = super::render_plots(&rows, &dev, dir)?;
    Ok(ReportFiles {
        campaign_csv,
        absdev_csv,
        baseline_csv,
        baseline_monitor_csv,
        model_json,
        meta_json,
        plots,
    })
}

/// Re-renders the plots of an existing output directory from its CSVs.
pub fn rerender(dir: &Path) -> Result<Vec<PathBuf>, CampaignError> {
    let rows = read_campaign_csv(BufReader::new(File::open(dir.join("campaign.csv"))?))?;
    if rows.is_empty() {
        return Err(CampaignError::EmptyCampaign);
    }
    let dev = read_absdev_csv(BufReader::new(File::open(dir.join("absdev.csv"))?))?;
    super::render_plots(&rows, &dev, dir)
}
