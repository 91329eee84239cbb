//! `ftdrive` command-line front end.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod checks;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ftdrive::design::{
    joule_integral, loop_gain, margins, melt_time, nof, nominal_melt_energy, select_fuse, DeviceRatingSheet,
    FuseDesignParams, LoopGainParams, RationalTransferFunction, WithstandCurve,
};
use ftdrive::sim::{compare_windows, analyze_window, read_trace, run_scenario, write_trace, RunOutput, Scenario};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

const EXIT_INVALID: u8 = 2;
const EXIT_ABORTED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "ftdrive", version, about = "Fault-tolerant induction motor drive simulator and design tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios; writes `<stem>.trace.csv` and `<stem>.summary.json`.
    Simulate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Run the models in single precision.
        #[arg(long)]
        single_precision: bool,
        /// Apply the acceptance thresholds to each summary.
        #[arg(long)]
        check: bool,
    },
    /// Steady-state phasors, sequence components and flux shape of a trace.
    Analyze {
        trace: PathBuf,
        /// Prefault window `t0:t1` (s).
        #[arg(long, value_parser = parse_window)]
        prefault: Option<[f64; 2]>,
        /// Postfault window `t2:t3` (s).
        #[arg(long, value_parser = parse_window)]
        postfault: Option<[f64; 2]>,
        #[arg(long, default_value_t = 0.6)]
        flux_ref: f64,
        #[arg(long)]
        check: bool,
    },
    /// Gain and phase margins of a loop gain.
    Margins {
        params: PathBuf,
        /// Also write `freq_hz,magnitude_db,phase_deg` rows.
        #[arg(long)]
        bode: Option<PathBuf>,
        #[arg(long)]
        check: bool,
    },
    /// Shoot-through current, Joule integral and catalog fuse selection.
    Fuse {
        params: PathBuf,
        #[arg(long)]
        check: bool,
    },
    /// Normalized overrating factor of a rating sheet.
    Nof {
        sheet: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl std::fmt::Display) -> Self {
        Self { code: EXIT_INVALID, message: message.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn parse_window(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or("expected t0:t1")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if !(a >= 0.0 && b > a) {
        return Err("need 0 <= t0 < t1".into());
    }
    Ok([a, b])
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable report"));
}

fn checked(failures: Vec<String>, check: bool) -> CmdResult {
    if !check {
        return Ok(());
    }
    if failures.is_empty() {
        eprintln!("check: PASS");
        return Ok(());
    }
    for f in &failures {
        eprintln!("check: FAIL {f}");
    }
    Err(Failure { code: EXIT_CHECK_FAILED, message: format!("{} check(s) failed", failures.len()) })
}

fn write_outputs(dir: &Path, stem: &str, out: &RunOutput) -> CmdResult {
    let trace_path = dir.join(format!("{stem}.trace.csv"));
    let file = fs::File::create(&trace_path).map_err(|e| Failure::invalid(format!("{}: {e}", trace_path.display())))?;
    write_trace(std::io::BufWriter::new(file), &out.trace).map_err(|e| Failure::invalid(format!("{}: {e}", trace_path.display())))?;
    let summary_path = dir.join(format!("{stem}.summary.json"));
    fs::write(&summary_path, out.summary.to_json() + "\n")
        .map_err(|e| Failure::invalid(format!("{}: {e}", summary_path.display())))
}

fn simulate_one(path: &Path, dir: &Path, single: bool, check: bool) -> CmdResult {
    let scenario = Scenario::from_json(&read_text(path)?).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    let out = if single { run_scenario::<f32>(&scenario) } else { run_scenario::<f64>(&scenario) }
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    write_outputs(dir, stem, &out)?;
    if let Some(ab) = &out.summary.aborted {
        return Err(Failure {
            code: EXIT_ABORTED,
            message: format!("{}: run aborted at step {} (t = {} s): {}", path.display(), ab.step, ab.time, ab.reason),
        });
    }
    eprintln!("{}: {} records, final mode {}", path.display(), out.summary.records, out.summary.final_mode);
    checked(checks::summary_failures(&scenario, &out.summary), check)
}

fn simulate(scenarios: &[PathBuf], dir: &Path, single: bool, check: bool) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::invalid(format!("{}: {e}", dir.display())))?;
    let results: Vec<CmdResult> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            scenarios.iter().map(|p| scope.spawn(move || simulate_one(p, dir, single, check))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Failure::invalid("worker panicked")))).collect()
    });
    // report every failure, exit with the most severe code
    let mut worst: Option<Failure> = None;
    for r in results {
        if let Err(f) = r {
            eprintln!("error: {}", f.message);
            if worst.as_ref().is_none_or(|w| f.code < w.code) {
                worst = Some(f);
            }
        }
    }
    match worst {
        Some(f) => Err(Failure { code: f.code, message: String::new() }),
        None => Ok(()),
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum AnalysisReport {
    Comparison(ftdrive::sim::ComparisonReport),
    Window(ftdrive::sim::WindowAnalysis),
}

fn analyze(trace: &Path, pre: Option<[f64; 2]>, post: Option<[f64; 2]>, flux_ref: f64, check: bool) -> CmdResult {
    let file = fs::File::open(trace).map_err(|e| Failure::invalid(format!("{}: {e}", trace.display())))?;
    let records = read_trace(std::io::BufReader::new(file)).map_err(|e| Failure::invalid(format!("{}: {e}", trace.display())))?;
    let report = match (pre, post) {
        (Some(a), Some(b)) => AnalysisReport::Comparison(compare_windows(&records, a, b, flux_ref).map_err(Failure::invalid)?),
        (Some(w), None) | (None, Some(w)) => AnalysisReport::Window(analyze_window(&records, w, flux_ref).map_err(Failure::invalid)?),
        (None, None) => return Err(Failure::invalid("give --prefault and/or --postfault")),
    };
    print_json(&report);
    let failures = match &report {
        AnalysisReport::Comparison(c) => checks::comparison_failures(c),
        AnalysisReport::Window(w) if post.is_some() => checks::postfault_failures(w),
        AnalysisReport::Window(w) => checks::healthy_failures(w),
    };
    checked(failures, check)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferFunctionInput {
    gain: f64,
    /// Roots as `[re, im]` pairs in rad/s.
    #[serde(default)]
    zeros: Vec<[f64; 2]>,
    #[serde(default)]
    poles: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginsInput {
    #[serde(default)]
    loop_gain: Option<LoopGainParams<f64>>,
    #[serde(default)]
    transfer_function: Option<TransferFunctionInput>,
    #[serde(default = "default_f_lo")]
    f_lo: f64,
    #[serde(default = "default_f_hi")]
    f_hi: f64,
}

fn default_f_lo() -> f64 {
    0.01
}

fn default_f_hi() -> f64 {
    1e6
}

fn margins_cmd(params: &Path, bode: Option<&Path>, check: bool) -> CmdResult {
    let input: MarginsInput = read_json(params)?;
    let tf = match (input.loop_gain, input.transfer_function) {
        (Some(p), None) => loop_gain(&p),
        (None, Some(t)) => {
            let roots = |v: &[[f64; 2]]| v.iter().map(|r| Complex::new(r[0], r[1])).collect::<Vec<_>>();
            RationalTransferFunction::new(t.gain, roots(&t.zeros), roots(&t.poles)).map_err(Failure::invalid)?
        }
        _ => return Err(Failure::invalid("give exactly one of `loop_gain` or `transfer_function`")),
    };
    let m = margins(&tf, input.f_lo, input.f_hi).map_err(Failure::invalid)?;
    print_json(&m);
    if let Some(path) = bode {
        let mut w = csv_writer(path)?;
        w.write_record(["freq_hz", "magnitude_db", "phase_deg"]).map_err(Failure::invalid)?;
        let decades = (input.f_hi / input.f_lo).log10();
        let n = (decades * 50.0).ceil() as usize;
        for k in 0..=n {
            let f = input.f_lo * 10f64.powf(decades * k as f64 / n as f64);
            let wr = 2.0 * std::f64::consts::PI * f;
            w.serialize((f, tf.magnitude_db(wr), tf.phase_deg(wr))).map_err(Failure::invalid)?;
        }
        w.flush().map_err(Failure::invalid)?;
    }
    let mut failures = Vec::new();
    if !(m.phase_margin_deg > 0.0) {
        failures.push(format!("phase margin {:.2} deg is not positive", m.phase_margin_deg));
    }
    if m.gain_margin_db.is_some_and(|g| !(g > 0.0)) {
        failures.push(format!("gain margin {:.2} dB is not positive", m.gain_margin_db.unwrap_or(0.0)));
    }
    checked(failures, check)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
struct FuseInput {
    #[serde(flatten)]
    params: FuseDesignParams<f64>,
    /// Target clearing time of the shoot-through (s).
    clearing_time_s: f64,
    /// `time_s,fw` CSV, relative to the parameter file; a generic
    /// placeholder shape is used when absent.
    #[serde(default)]
    withstand_csv: Option<PathBuf>,
    /// `i2t` CSV replacing the inline catalog.
    #[serde(default)]
    catalog_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct FuseReport {
    peak_current_a: f64,
    joule_at_clearing_a2s: f64,
    withstand_factor: f64,
    nominal_i2t_a2s: f64,
    selected_i2t_a2s: f64,
    selected_melt_time_s: f64,
}

fn fuse_cmd(params: &Path, check: bool) -> CmdResult {
    let input: FuseInput = read_json(params)?;
    let base = params.parent().unwrap_or(Path::new("."));
    let mut p = input.params;
    p.validate().map_err(Failure::invalid)?;
    if let Some(c) = &input.catalog_csv {
        p.catalog = ftdrive::design::fuse::read_catalog_csv(&base.join(c)).map_err(Failure::invalid)?;
    }
    let curve = match &input.withstand_csv {
        Some(c) => WithstandCurve::from_csv_path(&base.join(c)).map_err(Failure::invalid)?,
        None => WithstandCurve::placeholder(),
    };
    let t0 = input.clearing_time_s;
    if !(t0 > 0.0) {
        return Err(Failure::invalid("clearing_time_s must be positive"));
    }
    let nominal = nominal_melt_energy(t0, &p, &curve).map_err(Failure::invalid)?;
    let selected = select_fuse(nominal, &p.catalog).map_err(Failure::invalid)?;
    let melt = melt_time(selected, &p).map_err(Failure::invalid)?;
    let report = FuseReport {
        peak_current_a: p.peak(),
        joule_at_clearing_a2s: joule_integral(t0, &p).map_err(Failure::invalid)?,
        withstand_factor: curve.factor(t0).map_err(Failure::invalid)?,
        nominal_i2t_a2s: nominal,
        selected_i2t_a2s: selected,
        selected_melt_time_s: melt,
    };
    print_json(&report);
    let failures = if melt <= t0 { vec![] } else { vec![format!("selected fuse melts after {melt} s > {t0} s")] };
    checked(failures, check)
}

#[derive(Serialize)]
struct NofReport {
    nof: f64,
    sheet_va: f64,
    baseline_va: f64,
}

fn nof_cmd(sheet: &Path, baseline: &Path) -> CmdResult {
    let load = |p: &Path| DeviceRatingSheet::from_csv_path(p).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())));
    let (s, b) = (load(sheet)?, load(baseline)?);
    let value = nof(&s, &b).map_err(Failure::invalid)?;
    print_json(&NofReport { nof: value, sheet_va: s.total_va(), baseline_va: b.total_va() });
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { scenarios, out, single_precision, check } => simulate(scenarios, out, *single_precision, *check),
        Command::Analyze { trace, prefault, postfault, flux_ref, check } => analyze(trace, *prefault, *postfault, *flux_ref, *check),
        Command::Margins { params, bode, check } => margins_cmd(params, bode.as_deref(), *check),
        Command::Fuse { params, check } => fuse_cmd(params, *check),
        Command::Nof { sheet, baseline } => nof_cmd(sheet, baseline),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
