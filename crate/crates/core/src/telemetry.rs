//! GPU power telemetry: trace parsing, energy integration, and power
//! fluctuation detection.
//!
//! Traces arrive as CSV (`timestamp_ms,device_id,power_w` header) or
//! JSONL (one object per line, same keys). Samples are grouped per
//! device and sorted; timestamps are strictly increasing per device
//! after ingestion. Energy is the trapezoidal integral of each device's
//! power curve; sampling gaps longer than [`MAX_GAP_MS`] contribute
//! nothing and are reported as warnings rather than being interpolated.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nameplate draw of the device family the defaults are tuned for.
pub const DEFAULT_DEVICE_MAX_W: f64 = 700.0;
pub const DEFAULT_GPUS_PER_NODE: u32 = 8;
/// Sampling gaps longer than this are treated as missing data.
pub const MAX_GAP_MS: i64 = 10_000;
/// Samples above device_max * this slack are flagged as implausible.
pub const OVERPOWER_SLACK: f64 = 1.1;

/// One reading from one device, as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSample {
    pub timestamp_ms: i64,
    pub device_id: String,
    pub power_w: f64,
}

/// A reading within a device's series (the device is the map key).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub timestamp_ms: i64,
    pub power_w: f64,
}

/// Samples grouped by device, plus how much of the cluster they cover.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    pub measured_node_count: u32,
    pub gpus_per_node: u32,
    pub devices: BTreeMap<String, Vec<TracePoint>>,
}

impl PowerTrace {
    /// Group, sort, and de-duplicate samples into a trace. Returns the
    /// number of duplicate (device, timestamp) readings dropped.
    pub fn from_samples(
        samples: Vec<PowerSample>,
        measured_node_count: u32,
        gpus_per_node: u32,
    ) -> (PowerTrace, usize) {
        let mut devices: BTreeMap<String, Vec<TracePoint>> = BTreeMap::new();
        for s in samples {
            devices.entry(s.device_id).or_default().push(TracePoint {
                timestamp_ms: s.timestamp_ms,
                power_w: s.power_w,
            });
        }
        let mut duplicates = 0;
        for series in devices.values_mut() {
            series.sort_by_key(|p| p.timestamp_ms);
            let before = series.len();
            series.dedup_by_key(|p| p.timestamp_ms);
            duplicates += before - series.len();
        }
        (
            PowerTrace {
                measured_node_count,
                gpus_per_node,
                devices,
            },
            duplicates,
        )
    }

    pub fn sample_count(&self) -> usize {
        self.devices.values().map(Vec::len).sum()
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    /// Milliseconds between the first and last reading in the trace.
    pub fn duration_ms(&self) -> i64 {
        let first = self
            .devices
            .values()
            .filter_map(|s| s.first())
            .map(|p| p.timestamp_ms)
            .min();
        let last = self
            .devices
            .values()
            .filter_map(|s| s.last())
            .map(|p| p.timestamp_ms)
            .max();
        match (first, last) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Jsonl,
    /// The canonical single-document form written by [`to_canonical_json`].
    Canonical,
}

impl TraceFormat {
    /// Guess from a file extension; defaults to CSV.
    pub fn from_extension(path: &std::path::Path) -> TraceFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => TraceFormat::Jsonl,
            Some("json") => TraceFormat::Canonical,
            _ => TraceFormat::Csv,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub measured_node_count: u32,
    pub gpus_per_node: u32,
    pub device_max_w: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            measured_node_count: 1,
            gpus_per_node: DEFAULT_GPUS_PER_NODE,
            device_max_w: DEFAULT_DEVICE_MAX_W,
        }
    }
}

/// What happened while parsing a trace stream.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ParseReport {
    /// Lines carrying data (header and blank lines excluded).
    pub data_lines: usize,
    pub parsed: usize,
    pub malformed_count: usize,
    /// (file line number, reason) for the first offenders, capped.
    pub malformed: Vec<(usize, String)>,
    /// Samples kept but above device_max * slack.
    pub flagged_overpower: usize,
    pub duplicates_dropped: usize,
}

const MALFORMED_KEPT: usize = 100;
const MALFORMED_LIMIT_PCT: f64 = 1.0;

impl ParseReport {
    fn note_malformed(&mut self, line: usize, reason: String) {
        self.malformed_count += 1;
        if self.malformed.len() < MALFORMED_KEPT {
            self.malformed.push((line, reason));
        }
    }
}

/// Parse a trace stream. Fails if more than 1% of data lines are
/// malformed (the report's line numbers identify them), or if the
/// stream holds no samples at all.
pub fn parse_trace(
    reader: impl BufRead,
    format: TraceFormat,
    opts: &ParseOptions,
) -> Result<(PowerTrace, ParseReport)> {
    if opts.measured_node_count == 0 {
        return Err(Error::Argument("measured_node_count must be >= 1".into()));
    }
    let mut report = ParseReport::default();
    let samples = match format {
        TraceFormat::Csv => parse_csv(reader, opts, &mut report)?,
        TraceFormat::Jsonl => parse_jsonl(reader, opts, &mut report)?,
        TraceFormat::Canonical => {
            let mut text = String::new();
            let mut r = reader;
            r.read_to_string(&mut text)
                .map_err(|e| Error::Format(format!("canonical trace: {e}")))?;
            let trace = from_canonical_json(&text)?;
            report.data_lines = trace.sample_count();
            report.parsed = trace.sample_count();
            return Ok((trace, report));
        }
    };

    if report.data_lines == 0 {
        return Err(Error::EmptyTrace);
    }
    let pct = 100.0 * report.malformed_count as f64 / report.data_lines as f64;
    if pct > MALFORMED_LIMIT_PCT {
        let examples = report
            .malformed
            .iter()
            .take(5)
            .map(|(line, reason)| format!("line {line}: {reason}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::TooManyMalformed {
            rejected: report.malformed_count,
            total: report.data_lines,
            limit_pct: MALFORMED_LIMIT_PCT,
            examples,
        });
    }
    if report.parsed == 0 {
        return Err(Error::EmptyTrace);
    }

    let (trace, duplicates) =
        PowerTrace::from_samples(samples, opts.measured_node_count, opts.gpus_per_node);
    report.duplicates_dropped = duplicates;
    Ok((trace, report))
}

fn validate_sample(
    timestamp_ms: i64,
    device_id: &str,
    power_w: f64,
    opts: &ParseOptions,
    report: &mut ParseReport,
) -> std::result::Result<PowerSample, String> {
    if device_id.is_empty() {
        return Err("empty device_id".into());
    }
    if !power_w.is_finite() || power_w < 0.0 {
        return Err(format!("power_w out of range: {power_w}"));
    }
    if power_w > opts.device_max_w * OVERPOWER_SLACK {
        report.flagged_overpower += 1;
    }
    Ok(PowerSample {
        timestamp_ms,
        device_id: device_id.to_string(),
        power_w,
    })
}

fn parse_csv(
    reader: impl BufRead,
    opts: &ParseOptions,
    report: &mut ParseReport,
) -> Result<Vec<PowerSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    {
        let headers = rdr
            .headers()
            .map_err(|e| Error::Format(format!("unreadable CSV header: {e}")))?;
        let names: Vec<&str> = headers
            .iter()
            .map(|h| h.trim().trim_start_matches('\u{feff}'))
            .collect();
        if names != ["timestamp_ms", "device_id", "power_w"] {
            return Err(Error::Format(format!(
                "expected header timestamp_ms,device_id,power_w, got {}",
                names.join(",")
            )));
        }
    }

    let mut samples = Vec::new();
    for result in rdr.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line() as usize)
                    .unwrap_or(report.data_lines + 2);
                report.data_lines += 1;
                report.note_malformed(line, format!("unreadable record: {e}"));
                continue;
            }
        };
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(report.data_lines + 2);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue; // blank line
        }
        report.data_lines += 1;
        if record.len() != 3 {
            report.note_malformed(line, format!("expected 3 fields, got {}", record.len()));
            continue;
        }
        let parsed = record[0]
            .trim()
            .parse::<i64>()
            .map_err(|e| format!("timestamp_ms: {e}"))
            .and_then(|ts| {
                record[2]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| format!("power_w: {e}"))
                    .and_then(|p| validate_sample(ts, record[1].trim(), p, opts, report))
            });
        match parsed {
            Ok(s) => {
                report.parsed += 1;
                samples.push(s);
            }
            Err(reason) => report.note_malformed(line, reason),
        }
    }
    Ok(samples)
}

fn parse_jsonl(
    reader: impl BufRead,
    opts: &ParseOptions,
    report: &mut ParseReport,
) -> Result<Vec<PowerSample>> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Format(format!("line {line_no}: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        report.data_lines += 1;
        match serde_json::from_str::<PowerSample>(trimmed) {
            Ok(s) => match validate_sample(s.timestamp_ms, &s.device_id, s.power_w, opts, report) {
                Ok(s) => {
                    report.parsed += 1;
                    samples.push(s);
                }
                Err(reason) => report.note_malformed(line_no, reason),
            },
            Err(e) => report.note_malformed(line_no, e.to_string()),
        }
    }
    Ok(samples)
}

#[derive(Serialize, Deserialize)]
struct CanonicalDoc {
    measured_node_count: u32,
    gpus_per_node: u32,
    samples: Vec<PowerSample>,
}

/// Serialize a trace to its canonical single-document form: metadata
/// plus the flat sample array ordered by (device, timestamp).
/// [`from_canonical_json`] of the output is a bit-exact round trip.
pub fn to_canonical_json(trace: &PowerTrace) -> String {
    let samples = trace
        .devices
        .iter()
        .flat_map(|(device, series)| {
            series.iter().map(move |p| PowerSample {
                timestamp_ms: p.timestamp_ms,
                device_id: device.clone(),
                power_w: p.power_w,
            })
        })
        .collect();
    let doc = CanonicalDoc {
        measured_node_count: trace.measured_node_count,
        gpus_per_node: trace.gpus_per_node,
        samples,
    };
    serde_json::to_string(&doc).expect("trace serializes")
}

pub fn from_canonical_json(text: &str) -> Result<PowerTrace> {
    let doc: CanonicalDoc =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("canonical trace: {e}")))?;
    if doc.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let (trace, _) = PowerTrace::from_samples(doc.samples, doc.measured_node_count, doc.gpus_per_node);
    Ok(trace)
}

/// Why part of a trace contributed no energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum IntegrationWarning {
    SingleSample { device: String },
    GapSkipped { device: String, start_ms: i64, end_ms: i64 },
}

impl std::fmt::Display for IntegrationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IntegrationWarning::SingleSample { device } => {
                write!(f, "device {device}: single sample, no interval to integrate")
            }
            IntegrationWarning::GapSkipped { device, start_ms, end_ms } => write!(
                f,
                "device {device}: {:.1}s gap at {start_ms}..{end_ms} ms contributed no energy",
                (end_ms - start_ms) as f64 / 1000.0
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    /// kWh attributed to one measured node (total / measured_node_count).
    pub kwh_per_node: f64,
    pub warnings: Vec<IntegrationWarning>,
}

/// Trapezoidal integral of every device's power curve, reported as kWh
/// per measured node. Sampling gaps over [`MAX_GAP_MS`] and
/// single-sample devices contribute zero, with warnings.
pub fn integrate_energy(trace: &PowerTrace) -> Result<Integration> {
    if trace.sample_count() == 0 {
        return Err(Error::EmptyTrace);
    }
    if trace.measured_node_count == 0 {
        return Err(Error::Argument("measured_node_count must be >= 1".into()));
    }
    let mut joules = 0.0f64;
    let mut warnings = Vec::new();
    for (device, series) in &trace.devices {
        if series.len() < 2 {
            warnings.push(IntegrationWarning::SingleSample {
                device: device.clone(),
            });
            continue;
        }
        for pair in series.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let dt_ms = b.timestamp_ms - a.timestamp_ms;
            if dt_ms < 0 {
                return Err(Error::Internal(format!(
                    "device {device}: samples out of order at {} ms",
                    b.timestamp_ms
                )));
            }
            if dt_ms > MAX_GAP_MS {
                warnings.push(IntegrationWarning::GapSkipped {
                    device: device.clone(),
                    start_ms: a.timestamp_ms,
                    end_ms: b.timestamp_ms,
                });
                continue;
            }
            joules += (a.power_w + b.power_w) * 0.5 * (dt_ms as f64 / 1000.0);
        }
    }
    Ok(Integration {
        kwh_per_node: joules / 3.6e6 / trace.measured_node_count as f64,
        warnings,
    })
}

/// Scale energy measured on a node subset up to the full cluster.
pub fn extrapolate_energy(node_energy_kwh: f64, measured_nodes: u32, total_nodes: u32) -> Result<f64> {
    if measured_nodes == 0 {
        return Err(Error::Argument("measured_nodes must be >= 1".into()));
    }
    if total_nodes < measured_nodes {
        return Err(Error::Argument(format!(
            "total_nodes ({total_nodes}) must be >= measured_nodes ({measured_nodes})"
        )));
    }
    if !node_energy_kwh.is_finite() || node_energy_kwh < 0.0 {
        return Err(Error::Argument(format!(
            "node energy must be >= 0 kWh, got {node_energy_kwh}"
        )));
    }
    Ok(node_energy_kwh * total_nodes as f64 / measured_nodes as f64)
}

#[derive(Debug, Clone)]
pub struct FluctuationConfig {
    pub device_max_w: f64,
    /// Fraction of device_max at or above which the node counts as active.
    pub hi_frac: f64,
    /// Fraction of device_max below which the node counts as dipped.
    pub lo_frac: f64,
    /// Minimum dip duration to count as an event.
    pub min_dwell_ms: i64,
}

impl Default for FluctuationConfig {
    fn default() -> Self {
        FluctuationConfig {
            device_max_w: DEFAULT_DEVICE_MAX_W,
            hi_frac: 0.85,
            lo_frac: 0.25,
            min_dwell_ms: 2000,
        }
    }
}

/// One power dip: a sustained low interval bracketed by active power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationEvent {
    pub start_ms: i64,
    pub end_ms: i64,
    pub pre_dip_mean_w: f64,
    pub dip_mean_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationReport {
    pub event_count: usize,
    pub events: Vec<FluctuationEvent>,
    /// Fraction of trace time spent at or above the active threshold.
    pub duty_cycle_active: f64,
    pub max_ramp_w_per_s: f64,
    pub hi_threshold_w: f64,
    pub lo_threshold_w: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Level {
    Hi,
    Mid,
    Lo,
}

/// Detect checkpoint-style power dips on the per-timestamp mean across
/// devices. An event is a maximal run of low samples lasting at least
/// `min_dwell_ms`, with active (high) power both before and after it.
pub fn detect_fluctuations(
    trace: &PowerTrace,
    cfg: &FluctuationConfig,
) -> Result<FluctuationReport> {
    if !(cfg.device_max_w.is_finite() && cfg.device_max_w > 0.0) {
        return Err(Error::Argument("device_max_w must be > 0".into()));
    }
    if !(cfg.lo_frac > 0.0 && cfg.lo_frac < cfg.hi_frac && cfg.hi_frac <= 1.0) {
        return Err(Error::Argument(format!(
            "thresholds must satisfy 0 < lo ({}) < hi ({}) <= 1",
            cfg.lo_frac, cfg.hi_frac
        )));
    }
    if cfg.min_dwell_ms <= 0 {
        return Err(Error::Argument("min_dwell_ms must be > 0".into()));
    }
    if trace.sample_count() == 0 {
        return Err(Error::EmptyTrace);
    }

    // Mean power at each distinct timestamp across devices. Devices
    // logging on a shared cadence (the normal case) align exactly.
    let mut buckets: BTreeMap<i64, (f64, u32)> = BTreeMap::new();
    for series in trace.devices.values() {
        for p in series {
            let e = buckets.entry(p.timestamp_ms).or_insert((0.0, 0));
            e.0 += p.power_w;
            e.1 += 1;
        }
    }
    let series: Vec<(i64, f64)> = buckets
        .into_iter()
        .map(|(ts, (sum, n))| (ts, sum / n as f64))
        .collect();

    let hi = cfg.hi_frac * cfg.device_max_w;
    let lo = cfg.lo_frac * cfg.device_max_w;
    let level = |p: f64| {
        if p >= hi {
            Level::Hi
        } else if p < lo {
            Level::Lo
        } else {
            Level::Mid
        }
    };
    let levels: Vec<Level> = series.iter().map(|&(_, p)| level(p)).collect();

    // Maximal low runs, qualified by dwell and active bracketing. Mid
    // samples (ramps in flight) don't break the bracket on either side.
    let mut events = Vec::new();
    let mut i = 0;
    while i < series.len() {
        if levels[i] != Level::Lo {
            i += 1;
            continue;
        }
        let start = i;
        while i < series.len() && levels[i] == Level::Lo {
            i += 1;
        }
        let end = i - 1; // inclusive
        let dwell = series[end].0 - series[start].0;
        if dwell < cfg.min_dwell_ms {
            continue;
        }
        let before_hi = levels[..start].iter().rev().find(|&&l| l != Level::Mid);
        let after_hi = levels[i..].iter().find(|&&l| l != Level::Mid);
        if before_hi != Some(&Level::Hi) || after_hi != Some(&Level::Hi) {
            continue;
        }
        // Mean of the contiguous active run immediately preceding.
        let mut pre_end = start;
        while pre_end > 0 && levels[pre_end - 1] == Level::Mid {
            pre_end -= 1;
        }
        let mut pre_start = pre_end;
        while pre_start > 0 && levels[pre_start - 1] == Level::Hi {
            pre_start -= 1;
        }
        let pre_dip_mean_w = mean_power(&series[pre_start..pre_end]);
        let dip_mean_w = mean_power(&series[start..=end]);
        events.push(FluctuationEvent {
            start_ms: series[start].0,
            end_ms: series[end].0,
            pre_dip_mean_w,
            dip_mean_w,
        });
    }

    // Duty cycle by left-sample attribution of each interval.
    let total_ms = series.last().unwrap().0 - series.first().unwrap().0;
    let duty_cycle_active = if total_ms == 0 {
        if levels[0] == Level::Hi {
            1.0
        } else {
            0.0
        }
    } else {
        let hi_ms: i64 = series
            .windows(2)
            .zip(&levels)
            .filter(|(_, &l)| l == Level::Hi)
            .map(|(w, _)| w[1].0 - w[0].0)
            .sum();
        hi_ms as f64 / total_ms as f64
    };

    let max_ramp_w_per_s = series
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| (w[1].1 - w[0].1).abs() / ((w[1].0 - w[0].0) as f64 / 1000.0))
        .fold(0.0, f64::max);

    Ok(FluctuationReport {
        event_count: events.len(),
        events,
        duty_cycle_active,
        max_ramp_w_per_s,
        hi_threshold_w: hi,
        lo_threshold_w: lo,
    })
}

fn mean_power(points: &[(i64, f64)]) -> f64 {
    if points.is_empty() {
        return f64::NAN;
    }
    points.iter().map(|&(_, p)| p).sum::<f64>() / points.len() as f64
}
