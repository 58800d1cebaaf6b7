//! Acceptance suite. Runs as a plain binary so every criterion prints a
//! PASS/FAIL line even when all of them pass.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use soclab::battery_sim::{holdout_cycle, SensorSample};
use soclab::campaign::{run_campaign, CampaignConfig, CampaignResult, ExperimentResult};
use soclab::dataset::{Channel, InputWindow, NormalizationBounds};
use soclab::estimator::{gradient_check, gradient_check_with, loss_and_gradient, LstmModel};
use soclab::fault_injector::{inject_bit, read_bit, uniform_bits, FaultMode, FaultSpec};
use soclab::safety_monitor::{
    monitor_run, FailureMode, MonitorConfig, MonitorVerdict, SafetyMonitor, SocSource, Status,
};

/// Hold-out RMSE reached by the seed-0 default model (0.00672); small
/// headroom for libm differences across platforms.
const FROZEN_HOLDOUT_RMSE: f64 = 0.0068;
/// Share of faults beyond the correlation tolerance caught by the monitor
/// in the seed-0 default campaign (34 of 34).
const FROZEN_DETECTION_FLOOR: f64 = 1.0;
/// First detection step for voltage bit 3 stuck-at-0: the first prediction.
const FROZEN_V3_SA0_LATENCY: usize = 299;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn mask(bit: u32) -> u64 {
    1u64 << (64 - bit)
}

fn injector_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1EEE_754);
    let mut checks = 0u64;
    for _ in 0..10_000 {
        let raw: u64 = rng.gen();
        let v = f64::from_bits(raw);
        for bit in 1..=64u32 {
            let m = mask(bit);
            let sa0 = inject_bit(v, bit, FaultMode::StuckAt0).unwrap();
            let sa1 = inject_bit(v, bit, FaultMode::StuckAt1).unwrap();
            let flip = inject_bit(v, bit, FaultMode::BitFlip).unwrap();
            check(sa0.to_bits() == raw & !m, format!("SA0 {raw:#x} bit {bit}"))?;
            check(sa1.to_bits() == raw | m, format!("SA1 {raw:#x} bit {bit}"))?;
            check(flip.to_bits() == raw ^ m, format!("flip {raw:#x} bit {bit}"))?;
            for (mode, once) in [(FaultMode::StuckAt0, sa0), (FaultMode::StuckAt1, sa1)] {
                let twice = inject_bit(once, bit, mode).unwrap();
                check(twice.to_bits() == once.to_bits(), format!("idempotence {raw:#x} bit {bit}"))?;
            }
            let back = inject_bit(flip, bit, FaultMode::BitFlip).unwrap();
            check(back.to_bits() == raw, format!("involution {raw:#x} bit {bit}"))?;
            for out in [sa0, sa1, flip] {
                check((out.to_bits() ^ raw) & !m == 0, format!("locality {raw:#x} bit {bit}"))?;
            }
            checks += 9;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("{checks} checks, 0 violations, {elapsed:.2?}"))
}

fn bit_pattern_lemma() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut values: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.125..1.0)).collect();
    values.extend([
        0.125,
        0.125f64.next_up(),
        0.25f64.next_down(),
        0.25,
        0.25f64.next_up(),
        0.5f64.next_down(),
        0.5,
        0.5f64.next_up(),
        1.0f64.next_down(),
    ]);
    for &v in &values {
        for bit in 3..=10 {
            check(read_bit(v, bit).unwrap() == 1, format!("bit {bit} of {v:e} reads 0"))?;
        }
        let pair = (read_bit(v, 11).unwrap(), read_bit(v, 12).unwrap());
        if v > 0.5 && v < 1.0 {
            check(pair == (1, 0), format!("bits 11,12 of {v:e} are {pair:?}"))?;
        }
        if v > 0.25 && v < 0.5 {
            check(pair == (0, 1), format!("bits 11,12 of {v:e} are {pair:?}"))?;
        }
    }
    Ok(format!("{} values, 0 violations", values.len()))
}

fn gradient_checks() -> Outcome {
    let bounds = NormalizationBounds::new((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for k in 0..10u64 {
        let h = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=8);
        let model = LstmModel::random_scaled(h, n, bounds, 100 + k, 0.8).unwrap();
        let window = InputWindow {
            frames: (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
            end_step: n,
        };
        let target = rng.gen_range(0.0..1.0);
        let err = gradient_check(&model, &window, target, 1e-5);
        check(err < 1e-4, format!("model {k} (H={h}, N={n}): relative error {err:e}"))?;
        worst = worst.max(err);
    }

    let model = LstmModel::random_scaled(3, 8, bounds, 77, 0.8).unwrap();
    let frames: Vec<_> = (0..8).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let mutated = gradient_check_with(&model, &frames, 0.3, 1e-5, |m, f, t| {
        let mut g = loss_and_gradient(m, f, t).1;
        g.u[1][0] *= 2.0;
        g
    });
    check(mutated > 1e-4, format!("mutated gradient passed the check ({mutated:e})"))?;
    Ok(format!("worst relative error {worst:.2e}; mutated gradient rejected at {mutated:.2e}"))
}

fn estimator_quality(run: &CampaignRun) -> Outcome {
    let rmse = run.result.context.baseline.rmse_truth;
    check(run.elapsed < Duration::from_secs(300), format!("training plus campaign took {:?}", run.elapsed))?;
    check(rmse <= 0.03, format!("hold-out RMSE {rmse}"))?;
    check(rmse <= FROZEN_HOLDOUT_RMSE, format!("hold-out RMSE {rmse} regressed past {FROZEN_HOLDOUT_RMSE}"))?;
    Ok(format!("hold-out RMSE {rmse:.5} (bound {FROZEN_HOLDOUT_RMSE}), {:.1?} including training", run.elapsed))
}

fn end_to_end_identity(run: &CampaignRun) -> Outcome {
    let ctx = &run.result.context;
    let monitor = MonitorConfig::default();
    let mut tested = Vec::new();
    for ch in Channel::ALL {
        let column: Vec<f64> = ctx.frames.iter().map(|f| f[ch.index()]).collect();
        for bit in uniform_bits(&column, 1) {
            let spec = FaultSpec::new(ch, bit, FaultMode::StuckAt1).unwrap();
            let r = ctx.run_fault(spec, Some(&monitor)).map_err(|e| e.to_string())?;
            check(
                r.report.rmse_data == 0.0 && r.report.rmse_pred == 0.0,
                format!("{spec}: rmse_data {} rmse_pred {}", r.report.rmse_data, r.report.rmse_pred),
            )?;
            check(!r.monitor.as_ref().is_some_and(|m| m.detected), format!("{spec} detected"))?;
            tested.push(spec.to_string());
        }
    }
    let t_bits: Vec<u32> = {
        let column: Vec<f64> = ctx.frames.iter().map(|f| f[Channel::Temperature.index()]).collect();
        uniform_bits(&column, 1)
    };
    check((3..=11).all(|b| t_bits.contains(&b)), format!("temperature uniform-1 bits {t_bits:?}"))?;
    Ok(format!("{} stuck-at-1 faults on uniformly-1 bits all exact zero", tested.len()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn fig_structure(run: &CampaignRun) -> Outcome {
    let rows = &run.result.rows;
    check(rows.len() == 372, format!("{} rows", rows.len()))?;
    let bit = |r: &ExperimentResult| r.report.fault.bit.get() as u32;
    let effective: Vec<f64> = rows
        .iter()
        .filter(|r| (2..=12).contains(&bit(r)) && r.report.rmse_data > 0.0)
        .map(|r| r.report.rmse_pred)
        .collect();
    let low: Vec<f64> = rows.iter().filter(|r| bit(r) >= 40).map(|r| r.report.rmse_pred).collect();
    let (m_exp, m_low) = (median(effective), median(low));
    check(m_exp >= 10.0 * m_low, format!("exponent median {m_exp:e} vs significand median {m_low:e}"))?;

    let octets: Vec<f64> = (0..7)
        .map(|o| {
            median(
                rows.iter()
                    .filter(|r| (13 + 8 * o..13 + 8 * (o + 1)).contains(&bit(r)))
                    .map(|r| r.report.rmse_data)
                    .collect(),
            )
        })
        .collect();
    check(
        octets.windows(2).all(|w| w[1] <= w[0]),
        format!("octet medians not non-increasing: {octets:?}"),
    )?;
    check(run.campaign_elapsed < Duration::from_secs(600), format!("campaign took {:?}", run.campaign_elapsed))?;
    Ok(format!(
        "exponent median {m_exp:.3e} vs bits 40-64 median {m_low:.3e} (x{:.1e}); octet medians {:.1e}..{:.1e}; campaign {:.1?}",
        m_exp / m_low.max(f64::MIN_POSITIVE),
        octets[0],
        octets[6],
        run.campaign_elapsed
    ))
}

fn first_with(verdicts: &[MonitorVerdict], mode: FailureMode) -> Option<usize> {
    verdicts.iter().find(|v| v.detected.contains(mode)).map(|v| v.step)
}

fn monitor_barrier(run: &CampaignRun) -> Outcome {
    let trace = holdout_cycle(0);
    let cfg = MonitorConfig::default();
    let battery = trace.config.clone();
    let mut all = Vec::new();

    // out-of-range raw voltage
    let onset = 1000;
    let mut samples = trace.samples.clone();
    for s in &mut samples[onset..onset + 5] {
        s.voltage_v = 4.6;
    }
    let truth = |k: usize| trace.soc_truth[k];
    let est: Vec<(usize, f64)> = (0..samples.len()).map(|k| (k, truth(k))).collect();
    let v = monitor_run(&cfg, &battery, 1.0, &samples, &est).map_err(|e| e.to_string())?;
    check(first_with(&v, FailureMode::OutOfRange) == Some(onset), "out-of-range not flagged at onset")?;
    check(v[..onset].iter().all(|x| x.status == Status::Pass), "false alarm before out-of-range onset")?;
    all.extend(v);

    // stuck estimate under load
    let frozen = truth(onset);
    let est: Vec<(usize, f64)> = (0..trace.len())
        .map(|k| (k, if k < onset { truth(k) } else { frozen }))
        .collect();
    let v = monitor_run(&cfg, &battery, 1.0, &trace.samples, &est).map_err(|e| e.to_string())?;
    let stuck_at = first_with(&v, FailureMode::StuckInRange).ok_or("stuck estimate not detected")?;
    check(stuck_at < onset + cfg.stuck_window, format!("stuck detected at {stuck_at}"))?;
    check(v[..onset].iter().all(|x| x.status == Status::Pass), "false alarm before stuck onset")?;
    all.extend(v);

    // alternating estimate
    let est: Vec<(usize, f64)> = (0..trace.len())
        .map(|k| {
            let wobble = if k < onset { 0.0 } else if k % 2 == 0 { 0.01 } else { -0.01 };
            (k, truth(k) + wobble)
        })
        .collect();
    let v = monitor_run(&cfg, &battery, 1.0, &trace.samples, &est).map_err(|e| e.to_string())?;
    let osc_at = first_with(&v, FailureMode::Oscillation).ok_or("oscillation not detected")?;
    check(osc_at < onset + cfg.osc_window, format!("oscillation detected at {osc_at}"))?;
    all.extend(v);

    // fault-free baseline of the trained model
    let base = run.result.baseline_monitor.as_ref().ok_or("no baseline monitor outcome")?;
    check(!base.detected, format!("baseline detections: {}", base.modes))?;

    // the large-deviation fault used as the latency reference
    let ctx = &run.result.context;
    let spec = FaultSpec::new(Channel::Voltage, 3, FaultMode::StuckAt0).unwrap();
    let faulty = ctx.faulty_predictions(spec).map_err(|e| e.to_string())?;
    let v = ctx.monitor(&cfg, &faulty).map_err(|e| e.to_string())?;
    let latency = v.iter().find(|x| x.status == Status::Inhibit).map(|x| x.step);
    check(latency == Some(FROZEN_V3_SA0_LATENCY), format!("{spec} first detection {latency:?}"))?;
    all.extend(v);

    // a raw sample the estimator never saw still goes through arbitration
    let mut m = SafetyMonitor::new(cfg.clone(), battery.clone(), 1.0).map_err(|e| e.to_string())?;
    let bad = SensorSample {
        voltage_v: f64::NAN,
        ..trace.samples[0]
    };
    all.push(m.step(0, &bad, Some(0.99)));

    let inhibits: Vec<&MonitorVerdict> = all.iter().filter(|x| x.status == Status::Inhibit).collect();
    check(
        inhibits.iter().all(|x| x.source != SocSource::AiEstimator),
        "an inhibited step emitted the AI estimate",
    )?;

    let rate = run
        .result
        .detection_rate(cfg.correlation_tolerance)
        .ok_or("no fault exceeded the tolerance")?;
    check(rate >= FROZEN_DETECTION_FLOOR, format!("detection rate {rate} below floor"))?;
    Ok(format!(
        "range at {onset}, stuck at {stuck_at}, oscillation at {osc_at}, baseline clean, {} inhibited steps all on fallback, \
         {spec} detected at step {}, detection rate {:.0}%",
        inhibits.len(),
        FROZEN_V3_SA0_LATENCY,
        100.0 * rate
    ))
}

fn determinism(run: &CampaignRun, second: &Path) -> Outcome {
    let again = run_campaign(&CampaignConfig {
        out_dir: second.to_path_buf(),
        ..run.config.clone()
    })
    .map_err(|e| e.to_string())?;
    let a = std::fs::read(run.config.out_dir.join("campaign.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(second.join("campaign.csv")).map_err(|e| e.to_string())?;
    check(a == b, "campaign.csv differs between runs")?;
    let bits = |m: &LstmModel| m.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(bits(&again.context.model) == bits(&run.result.context.model), "retrained model differs")?;
    Ok(format!("{} identical bytes across two full runs", a.len()))
}

struct CampaignRun {
    config: CampaignConfig,
    result: CampaignResult,
    elapsed: Duration,
    campaign_elapsed: Duration,
}

fn default_run(out: &Path) -> Result<CampaignRun, String> {
    let config = CampaignConfig {
        out_dir: out.to_path_buf(),
        ..CampaignConfig::default()
    };
    let start = Instant::now();
    let model = config.load_model().map_err(|e| e.to_string())?;
    let trained = start.elapsed();
    let trace = config.load_trace().map_err(|e| e.to_string())?;
    let mut result = soclab::campaign::run_with(model, trace, &config.sweep, Some(&config.monitor), config.jobs)
        .map_err(|e| e.to_string())?;
    result.files = Some(soclab::campaign::emit_reports(&result, &config).map_err(|e| e.to_string())?);
    let elapsed = start.elapsed();
    Ok(CampaignRun {
        config,
        result,
        elapsed,
        campaign_elapsed: elapsed - trained,
    })
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, outcome: Outcome) {
    match outcome {
        Ok(detail) => {
            println!("[PASS] {id} {name}: {detail}");
            results.push(true);
        }
        Err(reason) => {
            println!("[FAIL] {id} {name}: {reason}");
            results.push(false);
        }
    }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut results = Vec::new();
    report(&mut results, 1, "injector exactness", injector_exactness());
    report(&mut results, 2, "bit-pattern lemma", bit_pattern_lemma());
    report(&mut results, 4, "gradient check", gradient_checks());

    match default_run(&dir.path().join("a")) {
        Ok(run) => {
            report(&mut results, 3, "end-to-end identity", end_to_end_identity(&run));
            report(&mut results, 5, "estimator quality", estimator_quality(&run));
            report(&mut results, 6, "bit-position structure", fig_structure(&run));
            report(&mut results, 7, "monitor barrier and latency", monitor_barrier(&run));
            report(&mut results, 8, "determinism", determinism(&run, &dir.path().join("b")));
        }
        Err(e) => {
            for (id, name) in [
                (3, "end-to-end identity"),
                (5, "estimator quality"),
                (6, "bit-position structure"),
                (7, "monitor barrier and latency"),
                (8, "determinism"),
            ] {
                report(&mut results, id, name, Err(format!("default campaign failed: {e}")));
            }
        }
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
