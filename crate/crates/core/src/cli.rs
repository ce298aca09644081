//! Subcommand front end. Every operation is a batch command: file
//! inputs, report documents on stdout or `--out`, diagnostics on
//! stderr. Exit codes: 0 success, 1 validation error, 2 I/O error.
//!
//! Profile flags accept either a built-in preset name or a path to a
//! profiles file; a file is overlaid on the presets. The environment
//! variable `WATTPRINT_PROFILE_DIR` adds a directory searched for
//! profile files named by bare (non-preset) names.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::impact::{
    amortized_rate, embodied_per_gpu, embodied_total, equivalize, operational_impact, Amounts,
    EnergyQuantity, PueMode,
};
use crate::inference::{
    breakeven_requests, fit_energy_model, per_request_impact, read_measurements_csv,
    simulate_workload, write_measurements_csv, Breakeven, EnergyCoeffs, RequestRate,
    ServerModel, TokenDist, WorkloadScenario, DEFAULT_INPUT_TOKENS, DEFAULT_OUTPUT_TOKENS,
};
use crate::ledger::{
    aggregate, append_record, audit, load_ledger, render_audit, render_report,
    training_co2_by_model, AggregateOptions, Campaign, ReportFormat, RunRecord,
    AUDIT_DEVIATION_THRESHOLD,
};
use crate::profiles::{
    default_equivalencies, load_profiles, presets, EquivalencyTable, FacilityProfile,
    HardwareProfile, ProfileSet,
};
use crate::render::{fmt_count_short, fmt_trim, round_sig_figs};
use crate::telemetry::{
    detect_fluctuations, extrapolate_energy, integrate_energy, parse_trace, to_canonical_json,
    FluctuationConfig, ParseOptions, ParseReport, PowerTrace, TraceFormat,
};

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parse and dispatch; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "wattprint",
    version,
    about = "Energy, carbon, and water accounting for GPU workloads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a power trace into the canonical JSON document
    Ingest(IngestArgs),
    /// Integrate a power trace to energy
    Energy(EnergyArgs),
    /// Detect power dips, duty cycle, and ramp rate in a trace
    Fluct(FluctArgs),
    /// Operational and optional embodied footprint of an energy amount
    Impact(ImpactArgs),
    /// Embodied hardware footprint, per GPU and amortized
    Embodied(EmbodiedArgs),
    /// Validate one run record and append it to a ledger
    LedgerAdd(LedgerAddArgs),
    /// Aggregate a campaign ledger into report tables
    LedgerReport(LedgerReportArgs),
    /// Cross-check a ledger's published figures against facility factors
    LedgerAudit(LedgerAuditArgs),
    /// Requests until serving impact reaches training impact
    Breakeven(BreakevenArgs),
    /// Simulate a serving workload and emit a measurement row
    Simulate(SimulateArgs),
    /// Fit the linear energy model to measurement rows
    Fit(FitArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> ReportFormat {
        match f {
            FormatArg::Markdown => ReportFormat::Markdown,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PueModeArg {
    /// Multiply IT energy by the facility's PUE
    Applied,
    /// Treat the energy as already including facility overhead
    Folded,
}

impl From<PueModeArg> for PueMode {
    fn from(m: PueModeArg) -> PueMode {
        match m {
            PueModeArg::Applied => PueMode::Applied,
            PueModeArg::Folded => PueMode::Folded,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceFormatArg {
    Csv,
    Jsonl,
    Json,
}

impl From<TraceFormatArg> for TraceFormat {
    fn from(f: TraceFormatArg) -> TraceFormat {
        match f {
            TraceFormatArg::Csv => TraceFormat::Csv,
            TraceFormatArg::Jsonl => TraceFormat::Jsonl,
            TraceFormatArg::Json => TraceFormat::Canonical,
        }
    }
}

/// Flags shared by every command that reads a power trace.
#[derive(Args)]
struct TraceInput {
    /// Power trace file (.csv, .jsonl, or canonical .json)
    #[arg(long)]
    trace: PathBuf,
    /// Override the format guessed from the file extension
    #[arg(long, value_enum)]
    trace_format: Option<TraceFormatArg>,
    /// Nodes the trace was measured on
    #[arg(long, default_value_t = 1)]
    measured_nodes: u32,
    /// GPUs per node, recorded in the canonical document
    #[arg(long, default_value_t = 8)]
    gpus_per_node: u32,
    /// Device power cap in watts, for overpower flagging and thresholds
    #[arg(long, default_value_t = 700.0)]
    device_max: f64,
}

impl TraceInput {
    fn load(&self) -> Result<(PowerTrace, ParseReport)> {
        let file = std::fs::File::open(&self.trace).map_err(|e| Error::io(&self.trace, e))?;
        let format = self
            .trace_format
            .map(TraceFormat::from)
            .unwrap_or_else(|| TraceFormat::from_extension(&self.trace));
        let opts = ParseOptions {
            measured_node_count: self.measured_nodes,
            gpus_per_node: self.gpus_per_node,
            device_max_w: self.device_max,
        };
        parse_trace(BufReader::new(file), format, &opts)
    }
}

fn report_to_stderr(report: &ParseReport, always: bool) {
    if always || report.malformed_count > 0 || report.flagged_overpower > 0 || report.duplicates_dropped > 0
    {
        eprintln!(
            "note: parsed {}/{} data lines ({} malformed, {} overpower flagged, {} duplicates dropped)",
            report.parsed,
            report.data_lines,
            report.malformed_count,
            report.flagged_overpower,
            report.duplicates_dropped
        );
    }
    for (line, reason) in report.malformed.iter().take(5) {
        eprintln!("note: line {line}: {reason}");
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Locate a profile file for a non-preset name: literal path first,
/// then the `WATTPRINT_PROFILE_DIR` search directory.
fn resolve_profile_path(name: &str) -> Result<PathBuf> {
    let literal = PathBuf::from(name);
    if literal.is_file() {
        return Ok(literal);
    }
    if let Ok(dir) = std::env::var("WATTPRINT_PROFILE_DIR") {
        for candidate in [
            Path::new(&dir).join(name),
            Path::new(&dir).join(format!("{name}.toml")),
        ] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::Config(format!(
        "'{name}' is neither a built-in preset nor a profile file"
    )))
}

/// The preset set, overlaid with `--profiles` and, when `--profile`
/// names a file rather than a preset, with that file too. Returns the
/// merged set plus the facility name `--profile` singled out, if any.
fn profile_set(profile: Option<&str>, extra: Option<&Path>) -> Result<(ProfileSet, Option<String>)> {
    let mut set = presets().clone();
    if let Some(path) = extra {
        set = set.merge(load_profiles(path)?);
    }
    let named = match profile {
        None => None,
        Some(name) if set.facilities.contains_key(name) => Some(name.to_string()),
        Some(name) => {
            let path = resolve_profile_path(name)?;
            let file_set = load_profiles(&path)?;
            let sole = match file_set.facilities.len() {
                1 => Some(file_set.facilities.keys().next().unwrap().clone()),
                _ => None,
            };
            set = set.merge(file_set);
            sole
        }
    };
    Ok((set, named))
}

fn single_facility(set: &ProfileSet, named: Option<String>) -> Result<FacilityProfile> {
    match named {
        Some(name) => Ok(set.facility(&name)?.clone()),
        None => Err(Error::Argument(
            "this command needs one facility; pass --profile <preset or single-facility file>"
                .into(),
        )),
    }
}

fn hardware_arg(set: &ProfileSet, arg: Option<&str>) -> Result<HardwareProfile> {
    let name = arg.unwrap_or("h100");
    if let Ok(hw) = set.hardware(name) {
        return Ok(hw.clone());
    }
    let path = resolve_profile_path(name)?;
    let file_set = load_profiles(&path)?;
    match file_set.hardware.len() {
        1 => Ok(file_set.hardware.into_values().next().unwrap()),
        n => Err(Error::Config(format!(
            "{} defines {n} hardware profiles; expected exactly one",
            path.display()
        ))),
    }
}

fn equiv_arg(set: &ProfileSet, arg: Option<&Path>) -> Result<EquivalencyTable> {
    match arg {
        Some(path) => load_profiles(path)?.equivalencies.ok_or_else(|| {
            Error::Config(format!("{} defines no equivalency table", path.display()))
        }),
        None => Ok(set
            .equivalencies
            .clone()
            .unwrap_or_else(default_equivalencies)),
    }
}

fn cell_num(v: f64) -> String {
    fmt_trim(round_sig_figs(v, 6))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Energy(args) => cmd_energy(args),
        Command::Fluct(args) => cmd_fluct(args),
        Command::Impact(args) => cmd_impact(args),
        Command::Embodied(args) => cmd_embodied(args),
        Command::LedgerAdd(args) => cmd_ledger_add(args),
        Command::LedgerReport(args) => cmd_ledger_report(args),
        Command::LedgerAudit(args) => cmd_ledger_audit(args),
        Command::Breakeven(args) => cmd_breakeven(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: TraceInput,
    /// Write the canonical document here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let (trace, report) = args.input.load()?;
    report_to_stderr(&report, true);
    emit(args.out.as_deref(), &to_canonical_json(&trace))
}

#[derive(Args)]
struct EnergyArgs {
    #[command(flatten)]
    input: TraceInput,
    /// Node count to scale the per-node energy to (default: as measured)
    #[arg(long)]
    nodes: Option<u32>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_energy(args: EnergyArgs) -> Result<()> {
    let (trace, report) = args.input.load()?;
    report_to_stderr(&report, false);
    let integration = integrate_energy(&trace)?;
    for w in &integration.warnings {
        eprintln!("note: {w}");
    }
    let nodes = args.nodes.unwrap_or(args.input.measured_nodes);
    let kwh = extrapolate_energy(integration.kwh_per_node, args.input.measured_nodes, nodes)?;
    let text = format!("{} kWh", cell_num(kwh));
    let doc = match args.format {
        FormatArg::Markdown => format!("{text}\n"),
        FormatArg::Csv => format!(
            "nodes,kwh_per_node,kwh\n{},{},{}\n",
            nodes,
            fmt_trim(round_sig_figs(integration.kwh_per_node, 9)),
            fmt_trim(round_sig_figs(kwh, 9)),
        ),
        FormatArg::Json => {
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "nodes": nodes,
                "kwh_per_node": integration.kwh_per_node,
                "kwh": kwh,
                "text": text,
            }))
            .expect("doc serializes");
            s.push('\n');
            s
        }
    };
    emit(args.out.as_deref(), &doc)
}

#[derive(Args)]
struct FluctArgs {
    #[command(flatten)]
    input: TraceInput,
    /// Active threshold as a fraction of the device cap
    #[arg(long, default_value_t = 0.85)]
    hi_frac: f64,
    /// Dip threshold as a fraction of the device cap
    #[arg(long, default_value_t = 0.25)]
    lo_frac: f64,
    /// Shortest dip that counts as an event, in milliseconds
    #[arg(long, default_value_t = 2000)]
    min_dwell_ms: i64,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_fluct(args: FluctArgs) -> Result<()> {
    let (trace, report) = args.input.load()?;
    report_to_stderr(&report, false);
    let cfg = FluctuationConfig {
        device_max_w: args.input.device_max,
        hi_frac: args.hi_frac,
        lo_frac: args.lo_frac,
        min_dwell_ms: args.min_dwell_ms,
    };
    let fluct = detect_fluctuations(&trace, &cfg)?;
    let doc = match args.format {
        FormatArg::Markdown => {
            let mut out = String::new();
            if fluct.events.is_empty() {
                out.push_str("No dip events detected.\n");
            } else {
                out.push_str("| Start (ms) | End (ms) | Pre-dip mean (W) | Dip mean (W) |\n");
                out.push_str("| --- | --- | --- | --- |\n");
                for e in &fluct.events {
                    out.push_str(&format!(
                        "| {} | {} | {} | {} |\n",
                        e.start_ms,
                        e.end_ms,
                        cell_num(e.pre_dip_mean_w),
                        cell_num(e.dip_mean_w),
                    ));
                }
            }
            out.push_str(&format!(
                "\n{} events; active duty cycle {}; max ramp {} W/s; thresholds: active >= {} W, dip < {} W.\n",
                fluct.event_count,
                cell_num(fluct.duty_cycle_active),
                cell_num(fluct.max_ramp_w_per_s),
                fmt_trim(fluct.hi_threshold_w),
                fmt_trim(fluct.lo_threshold_w),
            ));
            out
        }
        FormatArg::Csv => {
            let mut out = String::from("start_ms,end_ms,pre_dip_mean_w,dip_mean_w\n");
            for e in &fluct.events {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    e.start_ms,
                    e.end_ms,
                    fmt_trim(round_sig_figs(e.pre_dip_mean_w, 9)),
                    fmt_trim(round_sig_figs(e.dip_mean_w, 9)),
                ));
            }
            out
        }
        FormatArg::Json => {
            let mut s = serde_json::to_string_pretty(&fluct).expect("report serializes");
            s.push('\n');
            s
        }
    };
    emit(args.out.as_deref(), &doc)
}

#[derive(Args)]
struct ImpactArgs {
    /// IT energy in kWh
    #[arg(long)]
    energy_kwh: f64,
    /// Facility preset name or single-facility profile file
    #[arg(long, default_value = "jupiter")]
    profile: String,
    /// Extra profiles file overlaid on the presets
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PueModeArg::Applied)]
    pue_mode: PueModeArg,
    /// Add the embodied share for this many GPU-hours
    #[arg(long)]
    gpu_hours: Option<f64>,
    /// Hardware preset name or file, used with --gpu-hours
    #[arg(long)]
    hardware: Option<String>,
    /// Profiles file supplying the equivalency table
    #[arg(long)]
    equiv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_impact(args: ImpactArgs) -> Result<()> {
    let (set, named) = profile_set(Some(&args.profile), args.profiles.as_deref())?;
    let facility = single_facility(&set, named)?;
    let equiv = equiv_arg(&set, args.equiv.as_deref())?;
    let energy = EnergyQuantity::with_mode(args.energy_kwh, args.pue_mode.into())?;
    let mut result = operational_impact(&energy, &facility);
    if let Some(gpu_hours) = args.gpu_hours {
        let hw = hardware_arg(&set, args.hardware.as_deref())?;
        result.embodied = embodied_total(gpu_hours, &hw)?.embodied;
    } else if args.hardware.is_some() {
        return Err(Error::Argument(
            "--hardware needs --gpu-hours to amortize over".into(),
        ));
    }
    let eq = equivalize(&result, &equiv);
    let doc = match args.format {
        FormatArg::Markdown => {
            let mut out = String::from("| Scope | CO2 (kg) | Water (L) |\n| --- | --- | --- |\n");
            let mut row = |name: &str, a: &Amounts| {
                out.push_str(&format!(
                    "| {name} | {} | {} |\n",
                    cell_num(a.co2_kg),
                    cell_num(a.water_l)
                ));
            };
            row("Operational", &result.operational);
            if args.gpu_hours.is_some() {
                row("Embodied", &result.embodied);
            }
            row(
                "Total",
                &Amounts {
                    co2_kg: result.co2_kg(),
                    water_l: result.water_l(),
                },
            );
            out.push_str(&format!(
                "\nEquivalents: {} of one home's energy ({} home-years); {} tanker trucks; {} forest-acre-years; {} of one person's water ({} person-years).\n",
                eq.home_years_text(),
                fmt_trim(round_sig_figs(eq.home_years, 3)),
                fmt_trim(round_sig_figs(eq.tanker_trucks, 3)),
                fmt_trim(round_sig_figs(eq.forest_acre_years, 3)),
                eq.person_years_text(),
                fmt_trim(round_sig_figs(eq.person_years, 3)),
            ));
            out
        }
        FormatArg::Csv => {
            let mut out = String::from("scope,co2_kg,water_l\n");
            out.push_str(&format!(
                "operational,{},{}\n",
                cell_num(result.operational.co2_kg),
                cell_num(result.operational.water_l)
            ));
            if args.gpu_hours.is_some() {
                out.push_str(&format!(
                    "embodied,{},{}\n",
                    cell_num(result.embodied.co2_kg),
                    cell_num(result.embodied.water_l)
                ));
            }
            out.push_str(&format!(
                "total,{},{}\n",
                cell_num(result.co2_kg()),
                cell_num(result.water_l())
            ));
            out
        }
        FormatArg::Json => {
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "energy_kwh": result.energy_kwh,
                "facility": facility.name,
                "operational": { "co2_kg": result.operational.co2_kg, "water_l": result.operational.water_l },
                "embodied": { "co2_kg": result.embodied.co2_kg, "water_l": result.embodied.water_l },
                "total": { "co2_kg": result.co2_kg(), "water_l": result.water_l() },
                "equivalents": {
                    "home_years": eq.home_years,
                    "tanker_trucks": eq.tanker_trucks,
                    "forest_acre_years": eq.forest_acre_years,
                    "person_years": eq.person_years,
                },
            }))
            .expect("doc serializes");
            s.push('\n');
            s
        }
    };
    emit(args.out.as_deref(), &doc)
}

#[derive(Args)]
struct EmbodiedArgs {
    /// Amortize the per-hour rate over this many GPU-hours
    #[arg(long)]
    gpu_hours: Option<f64>,
    /// Hardware preset name or single-hardware profile file
    #[arg(long)]
    hardware: Option<String>,
    /// Extra profiles file overlaid on the presets
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_embodied(args: EmbodiedArgs) -> Result<()> {
    let (set, _) = profile_set(None, args.profiles.as_deref())?;
    let hw = hardware_arg(&set, args.hardware.as_deref())?;
    let per_gpu = embodied_per_gpu(&hw);
    let rate = amortized_rate(&hw);
    let total = args
        .gpu_hours
        .map(|h| embodied_total(h, &hw))
        .transpose()?;
    let doc = match args.format {
        FormatArg::Markdown => {
            let mut out = String::from("| Scope | CO2 (kg) | Water (L) |\n| --- | --- | --- |\n");
            out.push_str(&format!(
                "| Per GPU, lifetime | {} | {} |\n",
                cell_num(per_gpu.co2_kg),
                cell_num(per_gpu.water_l)
            ));
            out.push_str(&format!(
                "| Per GPU-hour | {} | {} |\n",
                cell_num(rate.co2_kg),
                cell_num(rate.water_l)
            ));
            if let (Some(h), Some(t)) = (args.gpu_hours, &total) {
                out.push_str(&format!(
                    "| {} GPU-hours | {} | {} |\n",
                    fmt_trim(h),
                    cell_num(t.embodied.co2_kg),
                    cell_num(t.embodied.water_l)
                ));
            }
            out
        }
        FormatArg::Csv => {
            let mut out = String::from("scope,co2_kg,water_l\n");
            out.push_str(&format!(
                "per_gpu,{},{}\n",
                cell_num(per_gpu.co2_kg),
                cell_num(per_gpu.water_l)
            ));
            out.push_str(&format!(
                "per_gpu_hour,{},{}\n",
                cell_num(rate.co2_kg),
                cell_num(rate.water_l)
            ));
            if let Some(t) = &total {
                out.push_str(&format!(
                    "total,{},{}\n",
                    cell_num(t.embodied.co2_kg),
                    cell_num(t.embodied.water_l)
                ));
            }
            out
        }
        FormatArg::Json => {
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "hardware": hw.name,
                "per_gpu": { "co2_kg": per_gpu.co2_kg, "water_l": per_gpu.water_l },
                "per_gpu_hour": { "co2_kg": rate.co2_kg, "water_l": rate.water_l },
                "total": total.as_ref().map(|t| serde_json::json!({
                    "gpu_hours": args.gpu_hours,
                    "co2_kg": t.embodied.co2_kg,
                    "water_l": t.embodied.water_l,
                })),
            }))
            .expect("doc serializes");
            s.push('\n');
            s
        }
    };
    emit(args.out.as_deref(), &doc)
}

#[derive(Args)]
struct LedgerAddArgs {
    /// Ledger file to append to (created if missing)
    #[arg(long)]
    ledger: PathBuf,
    /// The run record as a JSON object
    #[arg(long)]
    record: String,
    /// Validate and print without writing
    #[arg(long)]
    dry_run: bool,
}

fn cmd_ledger_add(args: LedgerAddArgs) -> Result<()> {
    let record: RunRecord = serde_json::from_str(&args.record)
        .map_err(|e| Error::Argument(format!("--record is not a valid run record: {e}")))?;
    record.validate()?;
    if args.dry_run {
        println!("{}", serde_json::to_string(&record).expect("record serializes"));
        return Ok(());
    }
    append_record(&args.ledger, &record)?;
    eprintln!("appended record '{}' to {}", record.id, args.ledger.display());
    Ok(())
}

/// Flags shared by the two ledger reading commands.
#[derive(Args)]
struct LedgerSetArgs {
    /// Ledger file (one JSON run record per line)
    #[arg(long)]
    ledger: PathBuf,
    /// Facility preset name or profiles file for cluster lookups
    #[arg(long)]
    profile: Option<String>,
    /// Extra profiles file overlaid on the presets
    #[arg(long)]
    profiles: Option<PathBuf>,
}

impl LedgerSetArgs {
    fn load(&self) -> Result<(Vec<RunRecord>, ProfileSet)> {
        let records = load_ledger(&self.ledger)?;
        let (set, _) = profile_set(self.profile.as_deref(), self.profiles.as_deref())?;
        Ok((records, set))
    }
}

#[derive(Args)]
struct LedgerReportArgs {
    #[command(flatten)]
    set: LedgerSetArgs,
    /// Convention for records that do not carry pue_folded themselves
    #[arg(long, value_enum, default_value_t = PueModeArg::Applied)]
    pue_mode: PueModeArg,
    /// Add an embodied section amortized over this many GPU-hours
    #[arg(long)]
    embodied_gpu_hours: Option<f64>,
    /// Hardware preset or file for the embodied section
    #[arg(long)]
    hardware: Option<String>,
    /// Profiles file supplying the equivalency table
    #[arg(long)]
    equiv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_ledger_report(args: LedgerReportArgs) -> Result<()> {
    let (records, set) = args.set.load()?;
    let hardware = match args.embodied_gpu_hours {
        Some(_) => Some(hardware_arg(&set, args.hardware.as_deref())?),
        None => {
            if args.hardware.is_some() {
                return Err(Error::Argument(
                    "--hardware needs --embodied-gpu-hours to amortize over".into(),
                ));
            }
            None
        }
    };
    let campaign = Campaign::from_records(records, hardware, args.embodied_gpu_hours)?;
    let opts = AggregateOptions {
        default_pue_folded: PueMode::from(args.pue_mode) == PueMode::Folded,
    };
    let agg = aggregate(&campaign, &set, &opts)?;
    let equiv = equiv_arg(&set, args.equiv.as_deref())?;
    emit(
        args.out.as_deref(),
        &render_report(&agg, &equiv, args.format.into()),
    )
}

#[derive(Args)]
struct LedgerAuditArgs {
    #[command(flatten)]
    set: LedgerSetArgs,
    /// Relative deviation above which a published figure is flagged
    #[arg(long, default_value_t = AUDIT_DEVIATION_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_ledger_audit(args: LedgerAuditArgs) -> Result<()> {
    let (records, set) = args.set.load()?;
    let findings = audit(&records, &set, args.threshold);
    eprintln!("note: {} finding(s) at threshold {}", findings.len(), args.threshold);
    emit(
        args.out.as_deref(),
        &render_audit(&findings, args.format.into()),
    )
}

#[derive(Args)]
#[command(group(
    ArgGroup::new("training")
        .required(true)
        .args(["training_co2", "ledger"])
))]
struct BreakevenArgs {
    /// Measurement rows (CSV)
    #[arg(long, visible_alias = "measurement")]
    measurements: PathBuf,
    /// Training carbon in tonnes, applied to every row
    #[arg(long)]
    training_co2: Option<f64>,
    /// Ledger whose resolved rows supply per-model training carbon
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Facility preset name or single-facility profile file
    #[arg(long, default_value = "jupiter")]
    profile: String,
    /// Extra profiles file overlaid on the presets
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Convention for the measured serving energy
    #[arg(long, value_enum, default_value_t = PueModeArg::Folded)]
    pue_mode: PueModeArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_breakeven(args: BreakevenArgs) -> Result<()> {
    let file =
        std::fs::File::open(&args.measurements).map_err(|e| Error::io(&args.measurements, e))?;
    let measurements = read_measurements_csv(BufReader::new(file))?;
    let (set, named) = profile_set(Some(&args.profile), args.profiles.as_deref())?;
    let facility = single_facility(&set, named)?;
    let training: std::collections::BTreeMap<String, f64> = match (&args.training_co2, &args.ledger)
    {
        (Some(_), _) => Default::default(),
        (None, Some(path)) => {
            let records = load_ledger(path)?;
            let campaign = Campaign::from_records(records, None, None)?;
            training_co2_by_model(&campaign, &set, &AggregateOptions::default())?
        }
        (None, None) => unreachable!("clap enforces the group"),
    };
    let source_note = match args.training_co2 {
        Some(t) => format!("Training CO2: {} t for every row (--training-co2).", fmt_trim(t)),
        None => format!(
            "Training CO2: per-model from {} (model-name match).",
            args.ledger.as_ref().expect("group").display()
        ),
    };

    struct Row {
        model: String,
        rate: String,
        energy_kwh: f64,
        co2_g: f64,
        water_l: f64,
        training_t: Option<f64>,
        breakeven: Breakeven,
    }
    let mut rows = Vec::new();
    for m in &measurements {
        let per = per_request_impact(m, &facility, args.pue_mode.into())?;
        let training_t = args.training_co2.or_else(|| training.get(&m.model_name).copied());
        let breakeven = match training_t {
            Some(t) => breakeven_requests(t, per.co2_g),
            None => Breakeven::NotComputable,
        };
        rows.push(Row {
            model: m.model_name.clone(),
            rate: m.request_rate.to_string(),
            energy_kwh: per.energy_kwh,
            co2_g: per.co2_g,
            water_l: per.water_l,
            training_t,
            breakeven,
        });
    }
    let count_cell = |b: &Breakeven| match b {
        Breakeven::Count(n) => fmt_count_short(*n),
        Breakeven::NotComputable => "-".to_string(),
    };
    let doc = match args.format {
        FormatArg::Markdown => {
            let mut out = String::from(
                "| Model | Rate | kWh/request | CO2 g/request | Water L/request | Breakeven requests |\n\
                 | --- | --- | --- | --- | --- | --- |\n",
            );
            for r in &rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} |\n",
                    r.model,
                    r.rate,
                    cell_num(r.energy_kwh),
                    cell_num(r.co2_g),
                    cell_num(r.water_l),
                    count_cell(&r.breakeven),
                ));
            }
            out.push('\n');
            out.push_str(&source_note);
            out.push('\n');
            out
        }
        FormatArg::Csv => {
            let mut out = String::from(
                "model_name,request_rate,energy_kwh_per_request,co2_g_per_request,water_l_per_request,breakeven_requests,breakeven_text\n",
            );
            for r in &rows {
                let raw = match &r.breakeven {
                    Breakeven::Count(n) => n.to_string(),
                    Breakeven::NotComputable => String::new(),
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.model,
                    r.rate,
                    cell_num(r.energy_kwh),
                    cell_num(r.co2_g),
                    cell_num(r.water_l),
                    raw,
                    count_cell(&r.breakeven),
                ));
            }
            out
        }
        FormatArg::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "model_name": r.model,
                        "request_rate": r.rate,
                        "per_request": {
                            "energy_kwh": r.energy_kwh,
                            "co2_g": r.co2_g,
                            "water_l": r.water_l,
                        },
                        "training_co2_t": r.training_t,
                        "breakeven_requests": match &r.breakeven {
                            Breakeven::Count(n) => serde_json::json!(*n as u64),
                            Breakeven::NotComputable => serde_json::Value::Null,
                        },
                        "breakeven_text": count_cell(&r.breakeven),
                    })
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "facility": facility.name,
                "rows": items,
                "note": source_note,
            }))
            .expect("doc serializes");
            s.push('\n');
            s
        }
    };
    emit(args.out.as_deref(), &doc)
}

fn parse_coeffs(s: &str) -> std::result::Result<EnergyCoeffs, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated numbers: input,output,second".into());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    Ok(EnergyCoeffs {
        per_input_token_kwh: nums[0],
        per_output_token_kwh: nums[1],
        per_active_second_kwh: nums[2],
    })
}

#[derive(Args)]
#[command(group(
    ArgGroup::new("energy_model")
        .required(true)
        .args(["coeffs", "coeffs_file"])
))]
struct SimulateArgs {
    /// Label recorded in the emitted measurement row
    #[arg(long, default_value = "synthetic")]
    model: String,
    /// Requests per second, or "batch" for all-at-once submission
    #[arg(long)]
    rate: RequestRate,
    /// Number of requests to simulate
    #[arg(long)]
    requests: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Energy model as kWh per input token, output token, active second
    #[arg(long, value_parser = parse_coeffs)]
    coeffs: Option<EnergyCoeffs>,
    /// JSON file with the three coefficients, as written by `fit`
    #[arg(long)]
    coeffs_file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_INPUT_TOKENS.mean)]
    input_mean: f64,
    #[arg(long, default_value_t = DEFAULT_INPUT_TOKENS.dispersion)]
    input_dispersion: f64,
    #[arg(long, default_value_t = DEFAULT_OUTPUT_TOKENS.mean)]
    output_mean: f64,
    #[arg(long, default_value_t = DEFAULT_OUTPUT_TOKENS.dispersion)]
    output_dispersion: f64,
    /// Aggregate decode throughput cap, tokens per second
    #[arg(long, default_value_t = 12_000.0)]
    max_tokens_per_s: f64,
    /// Per-request decode speed cap, tokens per second
    #[arg(long, default_value_t = 100.0)]
    per_request_tokens_per_s: f64,
    /// Requests served concurrently before queueing
    #[arg(long, default_value_t = 2048)]
    max_concurrency: usize,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_coeffs_file(path: &Path) -> Result<EnergyCoeffs> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let field = |name: &str| -> Result<f64> {
        doc.get(name).and_then(|v| v.as_f64()).ok_or_else(|| {
            Error::Format(format!("{} lacks numeric field '{name}'", path.display()))
        })
    };
    Ok(EnergyCoeffs {
        per_input_token_kwh: field("per_input_token_kwh")?,
        per_output_token_kwh: field("per_output_token_kwh")?,
        per_active_second_kwh: field("per_active_second_kwh")?,
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let coeffs = match (args.coeffs, &args.coeffs_file) {
        (Some(c), _) => c,
        (None, Some(path)) => read_coeffs_file(path)?,
        (None, None) => unreachable!("clap enforces the group"),
    };
    let scenario = WorkloadScenario {
        label: args.model.clone(),
        request_rate: args.rate,
        n_requests: args.requests,
        seed: args.seed,
        input_tokens: TokenDist {
            mean: args.input_mean,
            dispersion: args.input_dispersion,
        },
        output_tokens: TokenDist {
            mean: args.output_mean,
            dispersion: args.output_dispersion,
        },
        coeffs,
        server: ServerModel {
            max_tokens_per_s: args.max_tokens_per_s,
            per_request_tokens_per_s: args.per_request_tokens_per_s,
            max_concurrency: args.max_concurrency,
        },
    };
    let sim = simulate_workload(&scenario)?;
    let m = &sim.measurement;
    let doc = match args.format {
        FormatArg::Csv => write_measurements_csv(std::slice::from_ref(m)),
        FormatArg::Markdown => {
            format!(
                "| Model | Rate | Requests | Energy (kWh) | Makespan (s) | Mean in | Mean out |\n\
                 | --- | --- | --- | --- | --- | --- | --- |\n\
                 | {} | {} | {} | {} | {} | {} | {} |\n",
                m.model_name,
                m.request_rate,
                m.n_requests,
                fmt_trim(round_sig_figs(m.energy_kwh, 6)),
                fmt_trim(round_sig_figs(m.makespan_s, 6)),
                fmt_trim(round_sig_figs(m.mean_input_tokens, 6)),
                fmt_trim(round_sig_figs(m.mean_output_tokens, 6)),
            )
        }
        FormatArg::Json => {
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "model_name": m.model_name,
                "request_rate": m.request_rate.to_string(),
                "n_requests": m.n_requests,
                "energy_kwh": m.energy_kwh,
                "makespan_s": m.makespan_s,
                "mean_input_tokens": m.mean_input_tokens,
                "mean_output_tokens": m.mean_output_tokens,
                "total_input_tokens": sim.total_input_tokens,
                "total_output_tokens": sim.total_output_tokens,
                "seed": args.seed,
            }))
            .expect("doc serializes");
            s.push('\n');
            s
        }
    };
    emit(args.out.as_deref(), &doc)
}

#[derive(Args)]
struct FitArgs {
    /// Measurement rows (CSV) to fit against
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let file =
        std::fs::File::open(&args.measurements).map_err(|e| Error::io(&args.measurements, e))?;
    let rows = read_measurements_csv(BufReader::new(file))?;
    let coeffs = fit_energy_model(&rows)?;
    let doc = match args.format {
        FormatArg::Json => {
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "per_input_token_kwh": coeffs.per_input_token_kwh,
                "per_output_token_kwh": coeffs.per_output_token_kwh,
                "per_active_second_kwh": coeffs.per_active_second_kwh,
            }))
            .expect("doc serializes");
            s.push('\n');
            s
        }
        FormatArg::Markdown => format!(
            "| Coefficient | kWh |\n| --- | --- |\n\
             | per input token | {} |\n| per output token | {} |\n| per active second | {} |\n",
            coeffs.per_input_token_kwh, coeffs.per_output_token_kwh, coeffs.per_active_second_kwh,
        ),
        FormatArg::Csv => format!(
            "per_input_token_kwh,per_output_token_kwh,per_active_second_kwh\n{},{},{}\n",
            coeffs.per_input_token_kwh, coeffs.per_output_token_kwh, coeffs.per_active_second_kwh,
        ),
    };
    emit(args.out.as_deref(), &doc)
}
