use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use soclab::battery_sim::{holdout_cycle, mixed_pulse_profile, simulate_discharge, BatteryConfig, DischargeTrace};
use soclab::campaign::{
    self, default_train_config, run_baseline, train_default_model, train_on_traces, write_baseline_csv, CampaignConfig,
    ModelSource, SweepConfig, TraceSource,
};
use soclab::dataset::Channel;
use soclab::estimator::{load_model, save_model, Optimizer, TrainConfig, DEFAULT_HIDDEN, DEFAULT_WINDOW};
use soclab::fault_injector::FaultMode;
use soclab::safety_monitor::MonitorConfig;

#[derive(Parser)]
#[command(name = "soclab", version, about = "Fault-injection lab for an LSTM state-of-charge estimator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a discharge cycle and write it as trace CSV.
    Simulate(SimulateArgs),
    /// Train an estimator and write the model file.
    Train(TrainArgs),
    /// Run the fault-free estimator over a trace and score it against truth.
    Baseline(BaselineArgs),
    /// Run a fault-injection sweep and write CSV and SVG reports.
    Campaign(CampaignArgs),
    /// Re-render the SVG plots of a campaign directory from its CSVs.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ambient temperature in °C; without it the 25 °C hold-out cycle is used.
    #[arg(long)]
    ambient: Option<f64>,
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training traces; defaults to the six synthetic training cycles.
    #[arg(long, num_args = 1..)]
    trace: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    adam: bool,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    model: PathBuf,
    /// Trace CSV; defaults to the simulated hold-out cycle for `--seed`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for baseline.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Deserialize, PartialEq, Eq, Debug)]
#[serde(rename_all = "lowercase")]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Default)]
struct CampaignArgs {
    /// JSON file whose keys mirror these flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Model file; without it a model is trained first.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated channels, e.g. V,I,T.
    #[arg(long)]
    channels: Option<String>,
    /// Inclusive bit range such as 3..64, or a single bit.
    #[arg(long)]
    bits: Option<String>,
    /// Comma-separated fault modes: sa0, sa1, flip.
    #[arg(long)]
    modes: Option<String>,
    #[arg(long, value_enum)]
    monitor: Option<OnOff>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "campaign_out")]
    out: PathBuf,
}

/// Config file layout for `campaign`.
#[derive(Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct CampaignFile {
    trace: Option<PathBuf>,
    model: Option<PathBuf>,
    channels: Option<String>,
    bits: Option<String>,
    modes: Option<String>,
    monitor: Option<OnOff>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    monitor_config: Option<MonitorConfig>,
    battery: Option<BatteryConfig>,
    train: Option<TrainConfig>,
}

fn parse_list<T>(text: &str, what: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} '{s}': {e}")))
        .collect()
}

fn parse_bits(text: &str) -> Result<(u32, u32)> {
    let text = text.trim();
    let (lo, hi) = match text.split_once("..") {
        Some((lo, hi)) => (lo, hi.trim_start_matches('=')),
        None => (text, text),
    };
    let lo: u32 = lo.trim().parse().with_context(|| format!("bad bit range '{text}'"))?;
    let hi: u32 = hi.trim().parse().with_context(|| format!("bad bit range '{text}'"))?;
    if lo == 0 || hi > 64 || lo > hi {
        bail!("bit range '{text}' must lie within 1..64");
    }
    Ok((lo, hi))
}

fn campaign_config(args: CampaignArgs) -> Result<CampaignConfig> {
    let file = match &args.config {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("opening config {}", path.display()))?;
            serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => CampaignFile::default(),
    };
    let mut cfg = CampaignConfig::default();
    if let Some(seed) = args.seed.or(file.seed) {
        cfg.seed = seed;
    }
    if let Some(b) = file.battery {
        cfg.battery = b;
    }
    if let Some(path) = args.trace.or(file.trace) {
        cfg.trace = TraceSource::Csv { path };
    }
    match args.model.or(file.model) {
        Some(path) => cfg.model = ModelSource::File { path },
        None => {
            cfg.model = ModelSource::Train {
                hidden: DEFAULT_HIDDEN,
                window: DEFAULT_WINDOW,
                train: file.train,
            }
        }
    }
    let mut sweep = SweepConfig::default();
    if let Some(c) = args.channels.or(file.channels) {
        sweep.channels = parse_list::<Channel>(&c, "channel")?;
    }
    if let Some(b) = args.bits.or(file.bits) {
        sweep.bits = parse_bits(&b)?;
    }
    if let Some(m) = args.modes.or(file.modes) {
        sweep.modes = parse_list::<FaultMode>(&m, "mode")?;
    }
    cfg.sweep = sweep;
    cfg.monitor_enabled = args.monitor.or(file.monitor).unwrap_or(OnOff::On) == OnOff::On;
    if let Some(m) = file.monitor_config {
        cfg.monitor = m;
    }
    if let Some(out) = args.out.or(file.out) {
        cfg.out_dir = out;
    }
    cfg.jobs = args.jobs.or(file.jobs);
    Ok(cfg)
}

fn write_trace(trace: &DischargeTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_trace(path: &Path) -> Result<DischargeTrace> {
    let f = File::open(path).with_context(|| format!("opening trace {}", path.display()))?;
    Ok(DischargeTrace::read_csv(BufReader::new(f), BatteryConfig::default())?)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let trace = match args.ambient {
        None => holdout_cycle(args.seed),
        Some(ambient) => {
            let cfg = BatteryConfig {
                ambient_temp_c: ambient,
                ..BatteryConfig::default()
            };
            simulate_discharge(&cfg, &mixed_pulse_profile(args.seed, &cfg), 1.0)?
        }
    };
    write_trace(&trace, &args.out)?;
    println!("wrote {} samples to {} (end SOC {:.4})", trace.len(), args.out.display(), trace.end_soc);
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = default_train_config(args.seed);
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if args.adam {
        cfg.optimizer = Optimizer::adam();
    }
    let (model, report) = if args.trace.is_empty() {
        train_default_model(args.seed, args.hidden, args.window, &cfg)?
    } else {
        let traces = args.trace.iter().map(|p| read_trace(p)).collect::<Result<Vec<_>>>()?;
        train_on_traces(&traces, args.seed, args.hidden, args.window, &cfg)?
    };
    save_model(&model, &args.out)?;
    println!("trained for {} epochs, training MSE {:.3e}; wrote {}", cfg.epochs, report.final_mse, args.out.display());
    Ok(())
}

fn baseline(args: BaselineArgs) -> Result<()> {
    if !args.model.exists() {
        bail!("model file {} not found", args.model.display());
    }
    let model = load_model(&args.model)?;
    let trace = match &args.trace {
        Some(p) => read_trace(p)?,
        None => holdout_cycle(args.seed),
    };
    let report = run_baseline(&model, &trace)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("baseline.csv");
        write_baseline_csv(&report, BufWriter::new(File::create(&path)?))?;
        println!("wrote {}", path.display());
    }
    println!(
        "{} predictions, RMSE vs truth {:.5}, max error {:.5}",
        report.predictions.len(),
        report.rmse_truth,
        report.max_abs_err
    );
    Ok(())
}

fn run_campaign(args: CampaignArgs) -> Result<()> {
    let cfg = campaign_config(args)?;
    let result = campaign::run_campaign(&cfg)?;
    let exceptions = result.rows.iter().filter(|r| r.exception).count();
    println!(
        "{} experiments, baseline RMSE vs truth {:.5}, {} flagged exceptions",
        result.rows.len(),
        result.context.baseline.rmse_truth,
        exceptions
    );
    if let Some(rate) = result.detection_rate(cfg.monitor.correlation_tolerance) {
        println!("monitor detected {:.1}% of faults deviating beyond tolerance", 100.0 * rate);
    }
    println!("reports in {}", cfg.out_dir.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    for p in campaign::rerender(&args.out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Baseline(a) => baseline(a),
        Command::Campaign(a) => run_campaign(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_ranges() {
        assert_eq!(parse_bits("3..64").unwrap(), (3, 64));
        assert_eq!(parse_bits("3..=64").unwrap(), (3, 64));
        assert_eq!(parse_bits("11").unwrap(), (11, 11));
        assert!(parse_bits("0..4").is_err());
        assert!(parse_bits("9..65").is_err());
        assert!(parse_bits("12..3").is_err());
        assert!(parse_bits("a..b").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"channels": "T", "bits": "3..11", "modes": "sa1", "seed": 9, "monitor": "off", "jobs": 2}"#,
        )
        .unwrap();
        let cfg = campaign_config(CampaignArgs {
            config: Some(path),
            seed: Some(4),
            modes: Some("sa0,flip".into()),
            ..CampaignArgs::default()
        })
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.sweep.channels, vec![Channel::Temperature]);
        assert_eq!(cfg.sweep.bits, (3, 11));
        assert_eq!(cfg.sweep.modes, vec![FaultMode::StuckAt0, FaultMode::BitFlip]);
        assert!(!cfg.monitor_enabled);
        assert_eq!(cfg.jobs, Some(2));
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"chanels": "T"}"#).unwrap();
        assert!(campaign_config(CampaignArgs {
            config: Some(path),
            ..CampaignArgs::default()
        })
        .is_err());
    }
}
