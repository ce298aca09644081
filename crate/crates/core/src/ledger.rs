//! The campaign ledger: run records persisted as JSONL, aggregation
//! into development/final/external report tables, an audit pass that
//! cross-checks published impacts against facility factors, and a
//! reconciliation helper for summary tables with missing rows.
//!
//! A record's published co2_t/water_kl always take precedence over
//! values computed from its energy; computation fills the gaps. Totals
//! therefore reproduce a published table exactly when the ledger stores
//! the printed figures, while the audit pass reports where those
//! figures drift from the facility factors they imply.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impact::{embodied_total, operational_co2, operational_water, EnergyQuantity, PueMode};
use crate::profiles::{EquivalencyTable, FacilityProfile, HardwareProfile, ProfileSet};
use crate::render::{fmt_duration_years, fmt_quantity, fmt_trim};

/// Cluster name given to rows whose facility is outside our books.
pub const EXTERNAL_CLUSTER: &str = "external";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Development,
    Final,
    External,
}

/// One ledger line: a run, a summarized group of runs, or an external
/// comparison row. Published impact figures are stored verbatim;
/// unknown fields are preserved across rewrites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub kind: RunKind,
    pub model_name: String,
    /// Facility profile name, or "external" for rows outside our books.
    pub cluster: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_hours: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_mwh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_trained: Option<u64>,
    /// Published carbon, tonnes. Takes precedence over computation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub co2_t: Option<f64>,
    /// Published water, kL. Takes precedence over computation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub water_kl: Option<f64>,
    /// Whether this row's energy already folds in facility overhead.
    /// Unset rows follow the aggregation default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pue_folded: Option<bool>,
    /// How many runs this record summarizes (1 when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_count: Option<u64>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Ledger {
                line: 0,
                reason: format!("record '{}': {reason}", self.id),
            })
        };
        if self.id.trim().is_empty() {
            return Err(Error::Ledger {
                line: 0,
                reason: "record has an empty id".into(),
            });
        }
        if self.model_name.trim().is_empty() {
            return fail("model_name must not be empty".into());
        }
        if self.cluster.trim().is_empty() {
            return fail("cluster must not be empty".into());
        }
        if self.energy_mwh.is_none() && self.co2_t.is_none() {
            return fail("needs at least one of energy_mwh or co2_t".into());
        }
        for (name, v) in [
            ("gpu_hours", self.gpu_hours),
            ("energy_mwh", self.energy_mwh),
            ("co2_t", self.co2_t),
            ("water_kl", self.water_kl),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return fail(format!("{name} must be finite and >= 0, got {v}"));
                }
            }
        }
        if self.run_count == Some(0) {
            return fail("run_count must be >= 1 when present".into());
        }
        Ok(())
    }
}

/// Read a JSONL ledger. A later record with an id seen before
/// supersedes the earlier one in place, keeping the book appendable.
pub fn read_ledger(reader: impl BufRead) -> Result<Vec<RunRecord>> {
    let mut records: Vec<RunRecord> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Ledger {
            line: line_no,
            reason: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(trimmed).map_err(|e| Error::Ledger {
            line: line_no,
            reason: e.to_string(),
        })?;
        record.validate().map_err(|e| match e {
            Error::Ledger { reason, .. } => Error::Ledger { line: line_no, reason },
            other => other,
        })?;
        match by_id.get(&record.id) {
            Some(&i) => records[i] = record,
            None => {
                by_id.insert(record.id.clone(), records.len());
                records.push(record);
            }
        }
    }
    Ok(records)
}

pub fn load_ledger(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ledger(std::io::BufReader::new(file))
}

pub fn write_ledger(mut writer: impl Write, records: &[RunRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(writer, "{line}").map_err(|e| Error::Format(format!("ledger write: {e}")))?;
    }
    Ok(())
}

/// Append one record to a ledger file, creating the file if needed.
pub fn append_record(path: &Path, record: &RunRecord) -> Result<()> {
    record.validate()?;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

/// Development records sharing a model_name, reported as one table row.
#[derive(Debug, Clone, PartialEq)]
pub struct DevGroup {
    pub name: String,
    pub runs: Vec<RunRecord>,
}

impl DevGroup {
    /// Total runs represented, counting summarized records at their
    /// declared size. Always at least the number of records.
    pub fn declared_run_count(&self) -> u64 {
        self.runs.iter().map(|r| r.run_count.unwrap_or(1)).sum()
    }
}

/// A whole training campaign, split the way the report renders it.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub dev_groups: Vec<DevGroup>,
    pub final_runs: Vec<RunRecord>,
    pub external_runs: Vec<RunRecord>,
    pub hardware: Option<HardwareProfile>,
    /// Campaign-wide GPU-hours for embodied amortization; may exceed
    /// the per-record sum (records can be partial).
    pub total_gpu_hours: Option<f64>,
}

impl Campaign {
    pub fn from_records(
        records: Vec<RunRecord>,
        hardware: Option<HardwareProfile>,
        total_gpu_hours: Option<f64>,
    ) -> Result<Campaign> {
        let mut dev_groups: Vec<DevGroup> = Vec::new();
        let mut final_runs = Vec::new();
        let mut external_runs = Vec::new();
        let mut recorded_gpu_hours = 0.0;
        for record in records {
            record.validate()?;
            recorded_gpu_hours += record.gpu_hours.unwrap_or(0.0);
            match record.kind {
                RunKind::Development => {
                    match dev_groups.iter_mut().find(|g| g.name == record.model_name) {
                        Some(g) => g.runs.push(record),
                        None => dev_groups.push(DevGroup {
                            name: record.model_name.clone(),
                            runs: vec![record],
                        }),
                    }
                }
                RunKind::Final => final_runs.push(record),
                RunKind::External => external_runs.push(record),
            }
        }
        if let Some(total) = total_gpu_hours {
            if !(total.is_finite() && total >= 0.0) {
                return Err(Error::Argument(format!(
                    "total_gpu_hours must be >= 0, got {total}"
                )));
            }
            if total < recorded_gpu_hours {
                return Err(Error::Argument(format!(
                    "total_gpu_hours ({total}) is less than the {recorded_gpu_hours} \
                     GPU-hours already on record"
                )));
            }
        }
        Ok(Campaign {
            dev_groups,
            final_runs,
            external_runs,
            hardware,
            total_gpu_hours,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueSource {
    Published,
    Computed,
    Missing,
}

/// A record with its impact columns settled: published figures taken
/// verbatim, gaps filled from energy and the cluster's factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRow {
    pub record: RunRecord,
    pub co2_t: Option<f64>,
    pub water_kl: Option<f64>,
    pub co2_source: ValueSource,
    pub water_source: ValueSource,
}

#[derive(Debug, Clone)]
pub struct AggregateOptions {
    /// Convention for records that do not carry pue_folded themselves.
    pub default_pue_folded: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            default_pue_folded: false,
        }
    }
}

/// One development group's aggregated table row.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub name: String,
    pub gpu_hours: Option<f64>,
    pub energy_mwh: Option<f64>,
    pub runs: u64,
    pub co2_t: f64,
    pub water_kl: f64,
}

/// Totals for the final-run section (and the dev section's bottom row).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SectionTotal {
    pub gpu_hours: Option<f64>,
    pub energy_mwh: Option<f64>,
    pub runs: Option<u64>,
    pub co2_t: f64,
    pub water_kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbodiedSummary {
    pub gpu_hours: f64,
    pub co2_t: f64,
    pub water_kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GrandTotal {
    pub co2_t: f64,
    pub water_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignAggregate {
    pub dev_groups: Vec<GroupSummary>,
    pub dev_total: SectionTotal,
    pub final_rows: Vec<ResolvedRow>,
    pub final_total: SectionTotal,
    pub external_rows: Vec<ResolvedRow>,
    pub embodied: Option<EmbodiedSummary>,
    /// Development + final + embodied; external rows excluded.
    pub grand: GrandTotal,
    /// Facilities the rows referenced, for the report footer.
    pub facilities: Vec<(String, FacilityProfile)>,
}

fn resolve_row(
    record: &RunRecord,
    profiles: &ProfileSet,
    opts: &AggregateOptions,
) -> Result<ResolvedRow> {
    if record.kind == RunKind::External {
        // External rows are as-published; we never impute for them.
        return Ok(ResolvedRow {
            record: record.clone(),
            co2_t: record.co2_t,
            water_kl: record.water_kl,
            co2_source: if record.co2_t.is_some() { ValueSource::Published } else { ValueSource::Missing },
            water_source: if record.water_kl.is_some() { ValueSource::Published } else { ValueSource::Missing },
        });
    }
    // The facility is consulted only when a value actually needs
    // computing, so fully published rows pass through even when their
    // cluster has no profile on file.
    let computed = if record.co2_t.is_none() || record.water_kl.is_none() {
        let facility = profiles.facility(&record.cluster)?;
        let energy_mwh = record
            .energy_mwh
            .ok_or_else(|| Error::MissingEnergy(record.id.clone()))?;
        let folded = record.pue_folded.unwrap_or(opts.default_pue_folded);
        let q = EnergyQuantity::new(energy_mwh * 1000.0, folded)?;
        Some((
            operational_co2(&q, facility) / 1000.0,
            operational_water(&q, facility) / 1000.0,
        ))
    } else {
        None
    };
    Ok(ResolvedRow {
        record: record.clone(),
        co2_t: Some(record.co2_t.unwrap_or_else(|| computed.expect("computed when needed").0)),
        water_kl: Some(record.water_kl.unwrap_or_else(|| computed.expect("computed when needed").1)),
        co2_source: if record.co2_t.is_some() { ValueSource::Published } else { ValueSource::Computed },
        water_source: if record.water_kl.is_some() { ValueSource::Published } else { ValueSource::Computed },
    })
}

fn sorted_by_id<'a, I: Iterator<Item = &'a RunRecord>>(iter: I) -> Vec<&'a RunRecord> {
    let mut v: Vec<&RunRecord> = iter.collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

fn sum_option(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = None;
    for v in values {
        if let Some(v) = v {
            sum = Some(sum.unwrap_or(0.0) + v);
        }
    }
    sum
}

/// Aggregate a campaign into report rows and totals. Summation runs in
/// record-id order regardless of input order, so totals are bit-stable
/// under permutation. Display order follows the ledger.
pub fn aggregate(
    campaign: &Campaign,
    profiles: &ProfileSet,
    opts: &AggregateOptions,
) -> Result<CampaignAggregate> {
    match (&campaign.hardware, campaign.total_gpu_hours) {
        (Some(_), None) => {
            return Err(Error::Argument(
                "embodied accounting needs total GPU-hours alongside the hardware profile".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::Argument(
                "embodied accounting needs a hardware profile alongside total GPU-hours".into(),
            ))
        }
        _ => {}
    }

    let mut facilities: Vec<(String, FacilityProfile)> = Vec::new();
    let mut note_facility = |cluster: &str, profiles: &ProfileSet| {
        if cluster != EXTERNAL_CLUSTER && !facilities.iter().any(|(n, _)| n == cluster) {
            if let Ok(p) = profiles.facility(cluster) {
                facilities.push((cluster.to_string(), p.clone()));
            }
        }
    };

    // Development groups: display rows in ledger order, sums in id order.
    let mut dev_groups = Vec::new();
    for group in &campaign.dev_groups {
        let rows = sorted_by_id(group.runs.iter());
        let mut co2_t = 0.0;
        let mut water_kl = 0.0;
        for record in &rows {
            let resolved = resolve_row(record, profiles, opts)?;
            note_facility(&record.cluster, profiles);
            co2_t += resolved.co2_t.unwrap_or(0.0);
            water_kl += resolved.water_kl.unwrap_or(0.0);
        }
        dev_groups.push(GroupSummary {
            name: group.name.clone(),
            gpu_hours: sum_option(rows.iter().map(|r| r.gpu_hours)),
            energy_mwh: sum_option(rows.iter().map(|r| r.energy_mwh)),
            runs: group.declared_run_count(),
            co2_t,
            water_kl,
        });
    }
    let all_dev = sorted_by_id(campaign.dev_groups.iter().flat_map(|g| g.runs.iter()));
    let dev_total = SectionTotal {
        gpu_hours: sum_option(all_dev.iter().map(|r| r.gpu_hours)),
        energy_mwh: sum_option(all_dev.iter().map(|r| r.energy_mwh)),
        runs: Some(all_dev.iter().map(|r| r.run_count.unwrap_or(1)).sum()),
        co2_t: {
            let mut sum = 0.0;
            for r in &all_dev {
                sum += resolve_row(r, profiles, opts)?.co2_t.unwrap_or(0.0);
            }
            sum
        },
        water_kl: {
            let mut sum = 0.0;
            for r in &all_dev {
                sum += resolve_row(r, profiles, opts)?.water_kl.unwrap_or(0.0);
            }
            sum
        },
    };

    // Final rows: resolved individually, summed in id order.
    let mut final_rows = Vec::new();
    for record in &campaign.final_runs {
        let resolved = resolve_row(record, profiles, opts)?;
        note_facility(&record.cluster, profiles);
        final_rows.push(resolved);
    }
    let mut final_sorted: Vec<&ResolvedRow> = final_rows.iter().collect();
    final_sorted.sort_by(|a, b| a.record.id.cmp(&b.record.id));
    let final_total = SectionTotal {
        gpu_hours: sum_option(final_sorted.iter().map(|r| r.record.gpu_hours)),
        energy_mwh: sum_option(final_sorted.iter().map(|r| r.record.energy_mwh)),
        runs: None,
        co2_t: final_sorted.iter().map(|r| r.co2_t.unwrap_or(0.0)).sum(),
        water_kl: final_sorted.iter().map(|r| r.water_kl.unwrap_or(0.0)).sum(),
    };

    let mut external_rows = Vec::new();
    for record in &campaign.external_runs {
        external_rows.push(resolve_row(record, profiles, opts)?);
    }

    let embodied = match (&campaign.hardware, campaign.total_gpu_hours) {
        (Some(hw), Some(gpu_hours)) => {
            let result = embodied_total(gpu_hours, hw)?;
            Some(EmbodiedSummary {
                gpu_hours,
                co2_t: result.co2_kg() / 1000.0,
                water_kl: result.water_l() / 1000.0,
            })
        }
        _ => None,
    };

    let grand = GrandTotal {
        co2_t: dev_total.co2_t + final_total.co2_t + embodied.map_or(0.0, |e| e.co2_t),
        water_kl: dev_total.water_kl + final_total.water_kl + embodied.map_or(0.0, |e| e.water_kl),
    };

    Ok(CampaignAggregate {
        dev_groups,
        dev_total,
        final_rows,
        final_total,
        external_rows,
        embodied,
        grand,
        facilities,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditQuantity {
    Co2,
    Water,
}

impl std::fmt::Display for AuditQuantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AuditQuantity::Co2 => write!(f, "co2"),
            AuditQuantity::Water => write!(f, "water"),
        }
    }
}

/// A published figure whose implied per-kWh factor disagrees with the
/// row's facility under both PUE conventions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditFinding {
    pub run_id: String,
    pub model_name: String,
    pub quantity: AuditQuantity,
    /// Published value divided by energy, in kg/kWh or L/kWh.
    pub implied: f64,
    pub expected_folded: f64,
    pub expected_applied: f64,
    /// Relative deviation of the closer expectation.
    pub deviation: f64,
    /// Which convention came closer.
    pub closer: PueMode,
}

pub const AUDIT_DEVIATION_THRESHOLD: f64 = 0.02;

fn relative_deviation(implied: f64, expected: f64) -> f64 {
    if expected == 0.0 {
        if implied.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (implied - expected).abs() / expected
    }
}

/// Cross-check every row carrying both energy and a published impact
/// against its facility's factors. A finding means neither the folded
/// nor the applied convention explains the published figure within the
/// threshold. Rows with unresolvable clusters are skipped: there is
/// nothing to compare against.
pub fn audit(records: &[RunRecord], profiles: &ProfileSet, threshold: f64) -> Vec<AuditFinding> {
    let mut findings = Vec::new();
    for record in sorted_by_id(records.iter()) {
        let Some(energy_mwh) = record.energy_mwh else { continue };
        if energy_mwh <= 0.0 {
            continue;
        }
        let Ok(facility) = profiles.facility(&record.cluster) else { continue };
        let checks = [
            (AuditQuantity::Co2, record.co2_t, facility.carbon_intensity),
            (AuditQuantity::Water, record.water_kl, facility.wue_total()),
        ];
        for (quantity, published, folded_factor) in checks {
            let Some(published) = published else { continue };
            // t/MWh is numerically kg/kWh (and kL/MWh is L/kWh)
            let implied = published / energy_mwh;
            let expected_folded = folded_factor;
            let expected_applied = folded_factor * facility.pue;
            let dev_folded = relative_deviation(implied, expected_folded);
            let dev_applied = relative_deviation(implied, expected_applied);
            let (deviation, closer) = if dev_folded <= dev_applied {
                (dev_folded, PueMode::Folded)
            } else {
                (dev_applied, PueMode::Applied)
            };
            if deviation > threshold {
                findings.push(AuditFinding {
                    run_id: record.id.clone(),
                    model_name: record.model_name.clone(),
                    quantity,
                    implied,
                    expected_folded,
                    expected_applied,
                    deviation,
                    closer,
                });
            }
        }
    }
    findings
}

/// One table row's numeric columns, for reconciliation arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupColumns {
    pub gpu_hours: f64,
    pub energy_mwh: f64,
    pub runs: f64,
    pub co2_t: f64,
    pub water_kl: f64,
}

impl From<&GroupSummary> for GroupColumns {
    fn from(g: &GroupSummary) -> GroupColumns {
        GroupColumns {
            gpu_hours: g.gpu_hours.unwrap_or(0.0),
            energy_mwh: g.energy_mwh.unwrap_or(0.0),
            runs: g.runs as f64,
            co2_t: g.co2_t,
            water_kl: g.water_kl,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reconciliation {
    /// What the listed rows leave unaccounted for, as a synthetic group.
    Residual(GroupSummary),
    /// Listed rows exceed the totals in some column.
    Inconsistent { column: &'static str, excess: f64 },
}

/// Subtract listed group rows from a table's totals row. A summary
/// table that omits a group leaves its footprint as the residual.
pub fn reconcile_groups(totals: &GroupColumns, listed: &[GroupColumns]) -> Result<Reconciliation> {
    if listed.is_empty() {
        return Err(Error::Argument(
            "reconcile needs at least one listed group".into(),
        ));
    }
    let columns: [(&'static str, fn(&GroupColumns) -> f64); 5] = [
        ("gpu_hours", |c| c.gpu_hours),
        ("energy_mwh", |c| c.energy_mwh),
        ("runs", |c| c.runs),
        ("co2_t", |c| c.co2_t),
        ("water_kl", |c| c.water_kl),
    ];
    let mut residual = GroupColumns::default();
    for (name, get) in columns {
        let listed_sum: f64 = listed.iter().map(get).sum();
        let r = get(totals) - listed_sum;
        if r < -1e-9 {
            return Ok(Reconciliation::Inconsistent {
                column: name,
                excess: -r,
            });
        }
        match name {
            "gpu_hours" => residual.gpu_hours = r,
            "energy_mwh" => residual.energy_mwh = r,
            "runs" => residual.runs = r,
            "co2_t" => residual.co2_t = r,
            "water_kl" => residual.water_kl = r,
            _ => unreachable!(),
        }
    }
    Ok(Reconciliation::Residual(GroupSummary {
        name: "inferred".into(),
        gpu_hours: Some(residual.gpu_hours),
        energy_mwh: Some(residual.energy_mwh),
        runs: residual.runs.round() as u64,
        co2_t: residual.co2_t,
        water_kl: residual.water_kl,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Argument(format!(
                "format must be markdown, csv, or json, got '{other}'"
            ))),
        }
    }
}

use std::str::FromStr;

fn opt_cell(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt_quantity(v),
        None => "-".into(),
    }
}

fn equiv_cell(v: Option<f64>, per_year: f64) -> String {
    match v {
        Some(v) => fmt_duration_years(v / per_year),
        None => "-".into(),
    }
}

/// The rendered cells for one report row; shared by every format so
/// they agree cell-for-cell.
fn impact_cells(
    co2_t: Option<f64>,
    water_kl: Option<f64>,
    equiv: &EquivalencyTable,
) -> [String; 4] {
    [
        opt_cell(co2_t),
        equiv_cell(co2_t, equiv.co2_per_home_year),
        opt_cell(water_kl),
        equiv_cell(water_kl, equiv.water_per_person_year),
    ]
}

struct ReportRows {
    /// (name, gpu_hours, energy, runs, co2, co2 equiv, water, water equiv)
    development: Vec<[String; 8]>,
    finals: Vec<[String; 6]>,
    externals: Vec<[String; 6]>,
    embodied: Option<[String; 3]>,
    grand: [String; 4],
}

fn build_rows(agg: &CampaignAggregate, equiv: &EquivalencyTable) -> ReportRows {
    let mut development = Vec::new();
    for g in &agg.dev_groups {
        let [co2, co2_eq, water, water_eq] =
            impact_cells(Some(g.co2_t), Some(g.water_kl), equiv);
        development.push([
            g.name.clone(),
            opt_cell(g.gpu_hours),
            opt_cell(g.energy_mwh),
            g.runs.to_string(),
            co2,
            co2_eq,
            water,
            water_eq,
        ]);
    }
    if !agg.dev_groups.is_empty() {
        let t = &agg.dev_total;
        let [co2, co2_eq, water, water_eq] =
            impact_cells(Some(t.co2_t), Some(t.water_kl), equiv);
        development.push([
            "Total".into(),
            opt_cell(t.gpu_hours),
            opt_cell(t.energy_mwh),
            t.runs.map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
            co2,
            co2_eq,
            water,
            water_eq,
        ]);
    }

    let final_row = |r: &ResolvedRow| {
        let [co2, co2_eq, water, water_eq] = impact_cells(r.co2_t, r.water_kl, equiv);
        [
            r.record.model_name.clone(),
            opt_cell(r.record.energy_mwh),
            co2,
            co2_eq,
            water,
            water_eq,
        ]
    };
    let mut finals: Vec<[String; 6]> = agg.final_rows.iter().map(final_row).collect();
    {
        let t = &agg.final_total;
        let [co2, co2_eq, water, water_eq] =
            impact_cells(Some(t.co2_t), Some(t.water_kl), equiv);
        finals.push(["Total".into(), opt_cell(t.energy_mwh), co2, co2_eq, water, water_eq]);
    }
    let externals: Vec<[String; 6]> = agg.external_rows.iter().map(final_row).collect();

    let embodied = agg.embodied.map(|e| {
        [
            fmt_quantity(e.gpu_hours),
            fmt_quantity(e.co2_t),
            fmt_quantity(e.water_kl),
        ]
    });
    let grand = impact_cells(Some(agg.grand.co2_t), Some(agg.grand.water_kl), equiv);

    ReportRows {
        development,
        finals,
        externals,
        embodied,
        grand,
    }
}

fn footer_lines(agg: &CampaignAggregate, equiv: &EquivalencyTable) -> Vec<String> {
    let mut lines = vec![format!(
        "Equivalency factors: {} t CO2 per home-year; {} kL water per person-year; \
         {} t CO2 per tanker truck; {} t CO2 per forest-acre-year.",
        fmt_trim(equiv.co2_per_home_year),
        fmt_trim(equiv.water_per_person_year),
        fmt_trim(equiv.co2_per_tanker_truck),
        fmt_trim(equiv.co2_per_forest_acre_year),
    )];
    for (name, f) in &agg.facilities {
        lines.push(format!(
            "Facility {name}: PUE {}, {} kg CO2/kWh, {} + {} L/kWh.",
            fmt_trim(f.pue),
            fmt_trim(f.carbon_intensity),
            fmt_trim(f.wue_onsite),
            fmt_trim(f.wue_offsite),
        ));
    }
    lines
}

const DEV_HEADER: [&str; 8] = [
    "Group",
    "GPU-hours",
    "Energy (MWh)",
    "Runs",
    "CO2 (t)",
    "Home-energy equiv.",
    "Water (kL)",
    "Person-water equiv.",
];
const FINAL_HEADER: [&str; 6] = [
    "Model",
    "Energy (MWh)",
    "CO2 (t)",
    "Home-energy equiv.",
    "Water (kL)",
    "Person-water equiv.",
];

fn markdown_table<const N: usize>(out: &mut String, header: [&str; N], rows: &[[String; N]]) {
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!("|{}\n", " --- |".repeat(N)));
    for row in rows {
        out.push_str(&format!("| {} |\n", row.join(" | ")));
    }
}

pub fn render_report(
    agg: &CampaignAggregate,
    equiv: &EquivalencyTable,
    format: ReportFormat,
) -> String {
    let rows = build_rows(agg, equiv);
    match format {
        ReportFormat::Markdown => {
            let mut out = String::new();
            if !rows.development.is_empty() {
                out.push_str("## Development runs\n\n");
                markdown_table(&mut out, DEV_HEADER, &rows.development);
                out.push('\n');
            }
            out.push_str("## Final runs\n\n");
            markdown_table(&mut out, FINAL_HEADER, &rows.finals);
            out.push('\n');
            if !rows.externals.is_empty() {
                out.push_str("## External baselines (not in totals)\n\n");
                markdown_table(&mut out, FINAL_HEADER, &rows.externals);
                out.push('\n');
            }
            if let Some(e) = &rows.embodied {
                out.push_str("## Embodied hardware\n\n");
                markdown_table(&mut out, ["GPU-hours", "CO2 (t)", "Water (kL)"], &[e.clone()]);
                out.push('\n');
            }
            out.push_str("## Campaign total\n\n");
            markdown_table(
                &mut out,
                ["CO2 (t)", "Home-energy equiv.", "Water (kL)", "Person-water equiv."],
                &[rows.grand.clone()],
            );
            out.push('\n');
            for line in footer_lines(agg, equiv) {
                out.push_str(&line);
                out.push('\n');
            }
            out
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let blank = String::new();
            w.write_record([
                "section", "name", "gpu_hours", "energy_mwh", "runs", "co2_t",
                "co2_equivalent", "water_kl", "water_equivalent",
            ])
            .expect("csv header");
            for r in &rows.development {
                let mut record = vec!["development".to_string()];
                record.extend(r.iter().cloned());
                w.write_record(&record).expect("csv row");
            }
            for r in &rows.finals {
                let record = [
                    "final", &r[0], &blank, &r[1], &blank, &r[2], &r[3], &r[4], &r[5],
                ];
                w.write_record(record).expect("csv row");
            }
            for r in &rows.externals {
                let record = [
                    "external", &r[0], &blank, &r[1], &blank, &r[2], &r[3], &r[4], &r[5],
                ];
                w.write_record(record).expect("csv row");
            }
            if let Some(e) = &rows.embodied {
                let record = [
                    "embodied", "(amortized)", &e[0], &blank, &blank, &e[1], &blank, &e[2], &blank,
                ];
                w.write_record(record).expect("csv row");
            }
            let g = &rows.grand;
            let record = [
                "campaign_total", "Total", &blank, &blank, &blank, &g[0], &g[1], &g[2], &g[3],
            ];
            w.write_record(record).expect("csv row");
            String::from_utf8(w.into_inner().expect("csv buffer")).expect("csv utf8")
        }
        ReportFormat::Json => {
            let dev_json: Vec<serde_json::Value> = agg
                .dev_groups
                .iter()
                .zip(&rows.development)
                .map(|(g, cells)| {
                    serde_json::json!({
                        "name": g.name,
                        "gpu_hours": g.gpu_hours,
                        "energy_mwh": g.energy_mwh,
                        "runs": g.runs,
                        "co2_t": g.co2_t,
                        "water_kl": g.water_kl,
                        "cells": cells.to_vec(),
                    })
                })
                .collect();
            let final_json: Vec<serde_json::Value> = agg
                .final_rows
                .iter()
                .zip(&rows.finals)
                .map(|(r, cells)| {
                    serde_json::json!({
                        "id": r.record.id,
                        "model_name": r.record.model_name,
                        "cluster": r.record.cluster,
                        "energy_mwh": r.record.energy_mwh,
                        "co2_t": r.co2_t,
                        "water_kl": r.water_kl,
                        "co2_source": r.co2_source,
                        "water_source": r.water_source,
                        "cells": cells.to_vec(),
                    })
                })
                .collect();
            let external_json: Vec<serde_json::Value> = agg
                .external_rows
                .iter()
                .zip(&rows.externals)
                .map(|(r, cells)| {
                    serde_json::json!({
                        "id": r.record.id,
                        "model_name": r.record.model_name,
                        "energy_mwh": r.record.energy_mwh,
                        "co2_t": r.co2_t,
                        "water_kl": r.water_kl,
                        "cells": cells.to_vec(),
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "development": {
                    "groups": dev_json,
                    "total": {
                        "gpu_hours": agg.dev_total.gpu_hours,
                        "energy_mwh": agg.dev_total.energy_mwh,
                        "runs": agg.dev_total.runs,
                        "co2_t": agg.dev_total.co2_t,
                        "water_kl": agg.dev_total.water_kl,
                    },
                },
                "final": {
                    "rows": final_json,
                    "total": {
                        "energy_mwh": agg.final_total.energy_mwh,
                        "co2_t": agg.final_total.co2_t,
                        "water_kl": agg.final_total.water_kl,
                        "cells": rows.finals.last().map(|r| r.to_vec()),
                    },
                },
                "external": external_json,
                "embodied": agg.embodied.map(|e| {
                    serde_json::json!({
                        "gpu_hours": e.gpu_hours,
                        "co2_t": e.co2_t,
                        "water_kl": e.water_kl,
                    })
                }),
                "campaign_total": {
                    "co2_t": agg.grand.co2_t,
                    "water_kl": agg.grand.water_kl,
                    "cells": rows.grand.to_vec(),
                },
                "footer": footer_lines(agg, equiv),
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

/// Render audit findings in the requested format; one line or row each.
pub fn render_audit(findings: &[AuditFinding], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => {
            if findings.is_empty() {
                return "No findings: every published figure matches its facility factors.\n"
                    .into();
            }
            let mut out = String::from(
                "| Run | Quantity | Implied per kWh | Folded | Applied | Deviation |\n\
                 | --- | --- | --- | --- | --- | --- |\n",
            );
            for f in findings {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {:.1}% ({}) |\n",
                    f.run_id,
                    f.quantity,
                    fmt_trim(crate::render::round_sig_figs(f.implied, 4)),
                    fmt_trim(f.expected_folded),
                    fmt_trim(crate::render::round_sig_figs(f.expected_applied, 4)),
                    f.deviation * 100.0,
                    match f.closer {
                        PueMode::Folded => "folded closer",
                        PueMode::Applied => "applied closer",
                    },
                ));
            }
            out
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "run_id", "model_name", "quantity", "implied", "expected_folded",
                "expected_applied", "deviation", "closer",
            ])
            .expect("csv header");
            for f in findings {
                w.write_record([
                    f.run_id.as_str(),
                    f.model_name.as_str(),
                    &f.quantity.to_string(),
                    &fmt_trim(crate::render::round_sig_figs(f.implied, 6)),
                    &fmt_trim(f.expected_folded),
                    &fmt_trim(crate::render::round_sig_figs(f.expected_applied, 6)),
                    &fmt_trim(crate::render::round_sig_figs(f.deviation, 6)),
                    match f.closer {
                        PueMode::Folded => "folded",
                        PueMode::Applied => "applied",
                    },
                ])
                .expect("csv row");
            }
            String::from_utf8(w.into_inner().expect("csv buffer")).expect("csv utf8")
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(findings).expect("findings serialize");
            s.push('\n');
            s
        }
    }
}

/// Collect per-model training carbon from resolved ledger rows, for
/// breakeven lookups. Final rows win over external rows sharing a name.
pub fn training_co2_by_model(
    campaign: &Campaign,
    profiles: &ProfileSet,
    opts: &AggregateOptions,
) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for record in campaign.external_runs.iter().chain(&campaign.final_runs) {
        let resolved = resolve_row(record, profiles, opts)?;
        if let Some(co2) = resolved.co2_t {
            map.insert(record.model_name.clone(), co2);
        }
    }
    Ok(map)
}
