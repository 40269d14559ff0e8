//! Command-line entry point wiring ingestion, simulation, training,
//! estimation, and detection into reproducible runs.
//!
//! Every artifact-producing command emits a [`RunSummary`]: a versioned
//! JSON document embedding the fully resolved configuration, the seed,
//! the input and output paths, and command-specific metrics. Reruns with
//! identical configuration and seed produce byte-identical artifacts;
//! nothing in a run depends on the wall clock.
//!
//! Figure-like outputs (state-of-charge traces, differential curves,
//! anomaly timelines) are written as two-column tab-separated text,
//! ready for any plotting tool.
//!
//! [`run`] is callable in-process, so integration tests drive the real
//! command surface without spawning a binary.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::soc::{
    dataset_from_fleet, evaluate, train, FeatureConfig, SocNetwork, TrainConfig,
};
use crate::soh::{
    build_lut, calibration_from_fleet, differential_curves, extract_features, LutConfig, SohLut,
};
use crate::synth::{emit_fleet, FleetManifest, ScenarioConfig};
use crate::telemetry::{
    clean, ingest_file, segment_charges, write_csv, write_jsonl, ChargeSegment, GateConfig,
    LimitsConfig, SchemaConfig, TelemetrySample,
};
use crate::thermal::{stream_batches, ShapeClusterState};

pub const EXIT_OK: i32 = 0;
/// A module reported an error.
pub const EXIT_ERROR: i32 = 1;
/// Unknown subcommand or malformed flags.
pub const EXIT_USAGE: i32 = 2;
/// The input was rejected by a quality gate.
pub const EXIT_GATED: i32 = 3;

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// Machine-readable record of one run. The `config` field holds the full
/// resolved configuration after file and flag overrides, so the run can
/// be reproduced from the summary alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub summary_version: u32,
    pub command: String,
    /// Explicit whenever the command involves randomness.
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub metrics: Value,
}

/// Schema, validation limits, and charge-segmentation settings for
/// commands that read raw telemetry. All fields default sensibly, so a
/// config file only needs the overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub schema: SchemaConfig,
    pub limits: LimitsConfig,
    pub gate: GateConfig,
}

/// Feature, trainer, and row-thinning settings for `soc train`/`eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SocPipelineConfig {
    pub feature: FeatureConfig,
    pub train: TrainConfig,
    /// Keep at most one labeled row per this many seconds per file.
    pub row_stride_s: f64,
}

impl Default for SocPipelineConfig {
    fn default() -> Self {
        Self {
            feature: FeatureConfig::default(),
            train: TrainConfig::default(),
            row_stride_s: 15.0,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "battkit",
    version,
    about = "Battery telemetry analytics: ingestion, synthesis, charge and health estimation, thermal anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a telemetry log, validate it, and list charge segments.
    Ingest(IngestArgs),
    /// Render a synthetic fleet scenario to telemetry files plus a
    /// ground-truth manifest.
    Synth(SynthArgs),
    /// State-of-charge estimation.
    #[command(subcommand)]
    Soc(SocCommand),
    /// State-of-health estimation from differential charge curves.
    #[command(subcommand)]
    Soh(SohCommand),
    /// Shape-clustering thermal anomaly detection.
    #[command(subcommand)]
    Thermal(ThermalCommand),
    /// Render a run summary as readable text.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Telemetry log (CSV or JSONL; format auto-detected by default).
    #[arg(long)]
    input: PathBuf,
    /// TOML with schema/limits/gate overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the cleaned samples here (.jsonl for JSONL, anything else CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the run summary JSON here as well as to stdout.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario description, TOML.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for telemetry files and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SocCommand {
    /// Train the estimator network on a synthesized fleet.
    Train {
        /// Fleet directory containing ground_truth.json.
        #[arg(long)]
        data: PathBuf,
        /// TOML with feature/trainer overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override row thinning, seconds.
        #[arg(long)]
        row_stride_s: Option<f64>,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Score a trained model against a fleet's hidden ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        row_stride_s: Option<f64>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run a trained model over a telemetry log.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// TOML with schema/limits overrides for the input log.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Two-column trace (timestamp, estimate) to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SohCommand {
    /// Fit the feature-to-capacity lookup table from a fleet with known
    /// health.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        /// TOML with lookup-table/curve/gate overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Lookup-table file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Gate and estimate health for the largest charge in a log.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// Calibrated lookup table.
        #[arg(long)]
        lut: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Export differential curves for the largest charge in a log.
    Curves {
        #[arg(long)]
        input: PathBuf,
        /// Take curve settings from a calibrated lookup table...
        #[arg(long)]
        lut: Option<PathBuf>,
        /// ...or from a TOML config (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Prefix for the curve files (<prefix>.ic.tsv, <prefix>.dv.tsv).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Check the largest charge in a log against the admission gate.
    Gate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ThermalCommand {
    /// Score a telemetry log batch by batch, resuming from and updating a
    /// persistent state file.
    Watch {
        #[arg(long)]
        input: PathBuf,
        /// Monitor state snapshot; created on first use, updated on exit.
        #[arg(long)]
        state: PathBuf,
        /// TOML monitor settings; used only when the state file does not
        /// exist yet (an existing state carries its own).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write verdict JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Two-column anomaly timeline (batch origin, largest error rise).
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Score a telemetry log from a fresh state, deterministically.
    Replay {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// A run summary JSON produced by any other command.
    #[arg(long)]
    input: PathBuf,
}

/// Parse and execute one command line; first element is the program name.
///
/// Returns the process exit status: 0 success, 1 module error, 2 usage
/// error, 3 rejected by a quality gate.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not errors.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Gated(_) => EXIT_GATED,
                _ => EXIT_ERROR,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Soc(c) => match c {
            SocCommand::Train {
                data,
                config,
                seed,
                row_stride_s,
                out,
                summary,
            } => cmd_soc_train(&data, config.as_deref(), seed, row_stride_s, &out, summary.as_deref()),
            SocCommand::Eval {
                data,
                model,
                row_stride_s,
                summary,
            } => cmd_soc_eval(&data, &model, row_stride_s, summary.as_deref()),
            SocCommand::Predict {
                input,
                model,
                config,
                out,
                summary,
            } => cmd_soc_predict(&input, &model, config.as_deref(), out.as_deref(), summary.as_deref()),
        },
        Command::Soh(c) => match c {
            SohCommand::Calibrate {
                data,
                config,
                out,
                summary,
            } => cmd_soh_calibrate(&data, config.as_deref(), &out, summary.as_deref()),
            SohCommand::Estimate { input, lut, summary } => {
                cmd_soh_estimate(&input, &lut, summary.as_deref())
            }
            SohCommand::Curves {
                input,
                lut,
                config,
                out,
                summary,
            } => cmd_soh_curves(&input, lut.as_deref(), config.as_deref(), &out, summary.as_deref()),
            SohCommand::Gate {
                input,
                lut,
                config,
                summary,
            } => cmd_soh_gate(&input, lut.as_deref(), config.as_deref(), summary.as_deref()),
        },
        Command::Thermal(c) => match c {
            ThermalCommand::Watch {
                input,
                state,
                config,
                out,
                plot,
                summary,
            } => cmd_thermal(
                &input,
                Some(&state),
                config.as_deref(),
                out.as_deref(),
                plot.as_deref(),
                summary.as_deref(),
            ),
            ThermalCommand::Replay {
                input,
                config,
                out,
                plot,
                summary,
            } => cmd_thermal(&input, None, config.as_deref(), out.as_deref(), plot.as_deref(), summary.as_deref()),
        },
        Command::Report(a) => cmd_report(&a.input),
    }
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Print the summary to stdout and optionally write the same bytes to a
/// file. Pretty JSON with a trailing newline, stable field order.
fn emit_summary(summary: &RunSummary, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    if let Some(p) = path {
        fs::write(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn write_samples(samples: &[TelemetrySample], path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        write_jsonl(samples, path)
    } else {
        write_csv(samples, path, &SchemaConfig::default())
    }
}

/// Shared front end for commands that score one charge: ingest, clean,
/// segment, and pick the largest charge by throughput.
fn largest_charge(input: &Path, nominal_capacity_ah: f64) -> Result<ChargeSegment> {
    let (raw, _) = ingest_file(input, &SchemaConfig::default())?;
    let (cleaned, _) = clean(&raw, &LimitsConfig::default());
    let gate = GateConfig {
        nominal_capacity_ah,
        ..GateConfig::default()
    };
    segment_charges(&cleaned, &gate)
        .into_iter()
        .max_by(|a, b| a.charge_throughput_ah.total_cmp(&b.charge_throughput_ah))
        .ok_or_else(|| Error::InsufficientData("no charge segment in input".into()))
}

fn segment_meta(segment: &ChargeSegment) -> Value {
    json!({
        "start_s": segment.samples.first().map(|s| s.timestamp),
        "end_s": segment.samples.last().map(|s| s.timestamp),
        "duration_s": segment.duration_s(),
        "throughput_ah": segment.charge_throughput_ah,
        "mean_c_rate": segment.mean_c_rate,
        "mean_temperature_c": segment.mean_temperature_c,
    })
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let config: IngestConfig = load_toml(a.config.as_deref())?;
    let (raw, ingest_report) = ingest_file(&a.input, &config.schema)?;
    let (cleaned, clean_report) = clean(&raw, &config.limits);
    let segments = segment_charges(&cleaned, &config.gate);
    if let Some(out) = &a.out {
        write_samples(&cleaned, out)?;
    }
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "ingest".into(),
        seed: None,
        config: serde_json::to_value(&config)?,
        inputs: vec![display(&a.input)],
        outputs: a.out.iter().map(|p| display(p)).collect(),
        metrics: json!({
            "ingest": ingest_report,
            "clean": clean_report,
            "charge_segments": segments.iter().map(segment_meta).collect::<Vec<_>>(),
        }),
    };
    emit_summary(&summary, a.summary.as_deref())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut scenario = ScenarioConfig::from_toml(&fs::read_to_string(&a.scenario)?)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    fs::create_dir_all(&a.out)?;
    let manifest = emit_fleet(&scenario, &a.out)?;
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "synth".into(),
        seed: Some(scenario.seed),
        config: serde_json::to_value(&scenario)?,
        inputs: vec![display(&a.scenario)],
        outputs: vec![display(&a.out)],
        metrics: json!({
            "manifest": display(&a.out.join("ground_truth.json")),
            "entries": manifest.entries.len(),
        }),
    };
    emit_summary(&summary, a.summary.as_deref())
}

fn cmd_soc_train(
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    row_stride_s: Option<f64>,
    out: &Path,
    summary_path: Option<&Path>,
) -> Result<()> {
    let mut pipeline: SocPipelineConfig = load_toml(config)?;
    if let Some(seed) = seed {
        pipeline.train.seed = seed;
    }
    if let Some(rs) = row_stride_s {
        pipeline.row_stride_s = rs;
    }
    let manifest = FleetManifest::load(&data.join("ground_truth.json"))?;
    let dataset = dataset_from_fleet(&manifest, data, &pipeline.feature, pipeline.row_stride_s)?;
    let (net, report) = train(&dataset, pipeline.feature, &pipeline.train)?;
    net.save(out)?;
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "soc train".into(),
        seed: Some(pipeline.train.seed),
        config: serde_json::to_value(&pipeline)?,
        inputs: vec![display(data)],
        outputs: vec![display(out)],
        metrics: json!({
            "rows": dataset.len(),
            "report": report,
        }),
    };
    emit_summary(&summary, summary_path)
}

fn cmd_soc_eval(
    data: &Path,
    model: &Path,
    row_stride_s: Option<f64>,
    summary_path: Option<&Path>,
) -> Result<()> {
    let net = SocNetwork::load(model)?;
    let row_stride = row_stride_s.unwrap_or(15.0);
    let manifest = FleetManifest::load(&data.join("ground_truth.json"))?;
    let dataset = dataset_from_fleet(&manifest, data, &net.feature_config, row_stride)?;
    let metrics = evaluate(&net, &dataset.features, &dataset.labels)?;
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "soc eval".into(),
        seed: None,
        config: json!({
            "feature": net.feature_config,
            "row_stride_s": row_stride,
        }),
        inputs: vec![display(data), display(model)],
        outputs: Vec::new(),
        metrics: json!({
            "rows": dataset.len(),
            "eval": metrics,
        }),
    };
    emit_summary(&summary, summary_path)
}

fn cmd_soc_predict(
    input: &Path,
    model: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
    summary_path: Option<&Path>,
) -> Result<()> {
    let ingest_config: IngestConfig = load_toml(config)?;
    let net = SocNetwork::load(model)?;
    let (raw, _) = ingest_file(input, &ingest_config.schema)?;
    let (cleaned, _) = clean(&raw, &ingest_config.limits);
    let estimates = net.predict_series(&cleaned)?;
    if let Some(path) = out {
        let mut text = String::new();
        for e in &estimates {
            let _ = writeln!(text, "{}\t{}", e.timestamp, e.soc_pct);
        }
        fs::write(path, text)?;
    }
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "soc predict".into(),
        seed: None,
        config: serde_json::to_value(&ingest_config)?,
        inputs: vec![display(input), display(model)],
        outputs: out.iter().map(|p| display(p)).collect(),
        metrics: json!({
            "estimates": estimates.len(),
            "first": estimates.first(),
            "last": estimates.last(),
            "overridden": estimates.iter().filter(|e| e.overridden).count(),
        }),
    };
    emit_summary(&summary, summary_path)
}

fn cmd_soh_calibrate(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    summary_path: Option<&Path>,
) -> Result<()> {
    let config: LutConfig = load_toml(config)?;
    let manifest = FleetManifest::load(&data.join("ground_truth.json"))?;
    let points = calibration_from_fleet(&manifest, data, &config)?;
    let lut = build_lut(&points, &config)?;
    lut.save(out)?;
    let fits: Vec<Value> = lut
        .fits
        .iter()
        .map(|f| {
            json!({
                "feature": f.feature,
                "temperature_c": f.temperature_c,
                "r2": f.r2,
            })
        })
        .collect();
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "soh calibrate".into(),
        seed: None,
        config: serde_json::to_value(&config)?,
        inputs: vec![display(data)],
        outputs: vec![display(out)],
        metrics: json!({
            "calibration_points": points.len(),
            "fits": fits,
        }),
    };
    emit_summary(&summary, summary_path)
}

fn cmd_soh_estimate(input: &Path, lut_path: &Path, summary_path: Option<&Path>) -> Result<()> {
    let lut = SohLut::load(lut_path)?;
    let segment = largest_charge(input, lut.config.nominal_capacity_ah)?;
    let decision = lut.gate(&segment);
    let estimate = if decision.accepted {
        Some(lut.estimate_segment(&segment)?)
    } else {
        None
    };
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "soh estimate".into(),
        seed: None,
        config: serde_json::to_value(&lut.config)?,
        inputs: vec![display(input), display(lut_path)],
        outputs: Vec::new(),
        metrics: json!({
            "segment": segment_meta(&segment),
            "gate": &decision,
            "estimate": estimate,
        }),
    };
    emit_summary(&summary, summary_path)?;
    if !decision.accepted {
        return Err(Error::Gated(decision.reasons.join("; ")));
    }
    Ok(())
}

fn cmd_soh_curves(
    input: &Path,
    lut: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    summary_path: Option<&Path>,
) -> Result<()> {
    let config: LutConfig = match lut {
        Some(p) => SohLut::load(p)?.config,
        None => load_toml(config)?,
    };
    let segment = largest_charge(input, config.nominal_capacity_ah)?;
    let curves = differential_curves(&segment, &config.curve)?;

    // IC is plotted against voltage, DV against charge; masked IC bins
    // are dropped rather than written as NaN.
    let mut ic = String::new();
    for i in 0..curves.q.len() {
        if curves.valid[i] {
            let _ = writeln!(ic, "{}\t{}", curves.voltage[i], curves.ic_dq_dv[i]);
        }
    }
    let mut dv = String::new();
    for i in 0..curves.q.len() {
        let _ = writeln!(dv, "{}\t{}", curves.q[i], curves.dv_dq[i]);
    }
    let ic_path = out.with_extension("ic.tsv");
    let dv_path = out.with_extension("dv.tsv");
    fs::write(&ic_path, ic)?;
    fs::write(&dv_path, dv)?;

    let features = extract_features(&curves, &config.windows, &config.peaks).ok();
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "soh curves".into(),
        seed: None,
        config: serde_json::to_value(&config)?,
        inputs: vec![display(input)],
        outputs: vec![display(&ic_path), display(&dv_path)],
        metrics: json!({
            "segment": segment_meta(&segment),
            "bins": curves.q.len(),
            "span_ah": curves.span_ah,
            "features": features,
        }),
    };
    emit_summary(&summary, summary_path)
}

fn cmd_soh_gate(
    input: &Path,
    lut: Option<&Path>,
    config: Option<&Path>,
    summary_path: Option<&Path>,
) -> Result<()> {
    let config: LutConfig = match lut {
        Some(p) => SohLut::load(p)?.config,
        None => load_toml(config)?,
    };
    let probe = SohLut {
        version: crate::soh::LUT_FORMAT_VERSION,
        config: config.clone(),
        fits: Vec::new(),
    };
    let segment = largest_charge(input, config.nominal_capacity_ah)?;
    let decision = probe.gate(&segment);
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: "soh gate".into(),
        seed: None,
        config: serde_json::to_value(&config)?,
        inputs: vec![display(input)],
        outputs: Vec::new(),
        metrics: json!({
            "segment": segment_meta(&segment),
            "gate": &decision,
        }),
    };
    emit_summary(&summary, summary_path)?;
    if !decision.accepted {
        return Err(Error::Gated(decision.reasons.join("; ")));
    }
    Ok(())
}

/// Watch (persistent state) and replay (fresh state) share everything but
/// the state file.
fn cmd_thermal(
    input: &Path,
    state_path: Option<&Path>,
    config: Option<&Path>,
    out: Option<&Path>,
    plot: Option<&Path>,
    summary_path: Option<&Path>,
) -> Result<()> {
    let mut state = match state_path {
        Some(p) if p.exists() => ShapeClusterState::load(p)?,
        _ => ShapeClusterState::new(load_toml(config)?),
    };
    let seed = state.config.seed;
    let (raw, _) = ingest_file(input, &SchemaConfig::default())?;
    let (cleaned, _) = clean(&raw, &LimitsConfig::default());
    let batches = stream_batches(&cleaned, state.config.window, state.config.stride)?;

    let mut lines = String::new();
    let mut timeline = String::new();
    let mut triggered = 0usize;
    let mut first_trigger_s = None;
    let mut flagged: Vec<usize> = Vec::new();
    for batch in &batches {
        let verdict = state.detect(batch)?;
        let _ = writeln!(lines, "{}", serde_json::to_string(&verdict)?);
        let peak_rise = verdict
            .sensors
            .iter()
            .filter_map(|s| s.rise)
            .fold(0.0f64, f64::max);
        let _ = writeln!(timeline, "{}\t{}", verdict.origin_s, peak_rise);
        if verdict.triggered {
            triggered += 1;
            first_trigger_s.get_or_insert(verdict.origin_s);
            for s in &verdict.offending_sensors {
                if !flagged.contains(s) {
                    flagged.push(*s);
                }
            }
        }
    }
    flagged.sort_unstable();

    match out {
        Some(p) => fs::write(p, &lines)?,
        None => print!("{lines}"),
    }
    if let Some(p) = plot {
        fs::write(p, &timeline)?;
    }
    if let Some(p) = state_path {
        state.save(p)?;
    }

    let mut outputs: Vec<String> = Vec::new();
    outputs.extend(out.map(display));
    outputs.extend(plot.map(display));
    outputs.extend(state_path.map(display));
    let summary = RunSummary {
        summary_version: SUMMARY_FORMAT_VERSION,
        command: if state_path.is_some() { "thermal watch" } else { "thermal replay" }.into(),
        seed: Some(seed),
        config: serde_json::to_value(state.config)?,
        inputs: vec![display(input)],
        outputs,
        metrics: json!({
            "batches": batches.len(),
            "batches_seen_total": state.batches_seen(),
            "reference_frozen": state.reference_frozen(),
            "triggered": triggered,
            "first_trigger_s": first_trigger_s,
            "sensors_flagged": flagged,
        }),
    };
    if summary_path.is_some() || out.is_some() {
        // With verdicts on stdout the summary is file-only, keeping the
        // stream parseable line by line.
        let text = serde_json::to_string_pretty(&summary)? + "\n";
        match summary_path {
            Some(p) => fs::write(p, &text)?,
            None => print!("{text}"),
        }
    }
    Ok(())
}

fn cmd_report(input: &Path) -> Result<()> {
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(input)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", input.display())))?;
    if summary.summary_version != SUMMARY_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "summary format {} not supported (expected {SUMMARY_FORMAT_VERSION})",
            summary.summary_version
        )));
    }
    println!("command:  {}", summary.command);
    match summary.seed {
        Some(s) => println!("seed:     {s}"),
        None => println!("seed:     none (deterministic)"),
    }
    for p in &summary.inputs {
        println!("input:    {p}");
    }
    for p in &summary.outputs {
        println!("output:   {p}");
    }
    println!("metrics:");
    let metrics = serde_json::to_string_pretty(&summary.metrics)?;
    for line in metrics.lines() {
        println!("  {line}");
    }
    println!("config:");
    let config = serde_json::to_string_pretty(&summary.config)?;
    for line in config.lines() {
        println!("  {line}");
    }
    Ok(())
}

#[cfg(test)]
mod tests;
