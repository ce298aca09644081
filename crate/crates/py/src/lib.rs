//! Python bindings for the wattprint toolkit.
//!
//! Thin functional wrappers over the Rust crate: traces come in as file
//! paths, structured results go out as dicts, and report renderers
//! return the same text the CLI prints.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use wattprint::impact::{self, EnergyQuantity};
use wattprint::inference::{self, Breakeven, EnergyCoeffs, InferenceMeasurement, RequestRate,
    ServerModel, TokenDist, WorkloadScenario};
use wattprint::ledger::{self, AggregateOptions, Campaign, ReportFormat};
use wattprint::profiles::{self, ProfileSet};
use wattprint::telemetry::{self, FluctuationConfig, ParseOptions, TraceFormat};

fn to_py(e: wattprint::Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn merged_profiles(extra: Option<&str>) -> PyResult<ProfileSet> {
    let mut set = profiles::presets().clone();
    if let Some(path) = extra {
        set = set.merge(profiles::load_profiles(path).map_err(to_py)?);
    }
    Ok(set)
}

fn load_trace(path: &str, measured_nodes: u32, gpus_per_node: u32) -> PyResult<telemetry::PowerTrace> {
    let file = File::open(path)
        .map_err(|e| PyIOError::new_err(format!("i/o error on {path}: {e}")))?;
    let format = TraceFormat::from_extension(Path::new(path));
    let opts = ParseOptions {
        measured_node_count: measured_nodes,
        gpus_per_node,
        device_max_w: 700.0,
    };
    let (trace, report) = telemetry::parse_trace(BufReader::new(file), format, &opts).map_err(to_py)?;
    if report.malformed_count > 0 {
        // Parsing succeeded, so the bad lines were within tolerance;
        // surface nothing here and let callers inspect via ingest.
    }
    Ok(trace)
}

/// A facility's power and water conversion factors.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Facility {
    inner: profiles::FacilityProfile,
}

#[pymethods]
impl Facility {
    #[new]
    fn new(pue: f64, carbon_intensity: f64, wue_onsite: f64, wue_offsite: f64) -> Self {
        Facility {
            inner: profiles::FacilityProfile {
                name: String::new(),
                pue,
                carbon_intensity,
                wue_onsite,
                wue_offsite,
            },
        }
    }

    /// Look up a built-in facility by name.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Facility> {
        Ok(Facility {
            inner: profiles::facility_preset(name).map_err(to_py)?,
        })
    }

    #[getter]
    fn pue(&self) -> f64 {
        self.inner.pue
    }

    #[getter]
    fn carbon_intensity(&self) -> f64 {
        self.inner.carbon_intensity
    }

    #[getter]
    fn wue_onsite(&self) -> f64 {
        self.inner.wue_onsite
    }

    #[getter]
    fn wue_offsite(&self) -> f64 {
        self.inner.wue_offsite
    }

    fn __repr__(&self) -> String {
        format!(
            "Facility(pue={}, carbon_intensity={}, wue_onsite={}, wue_offsite={})",
            self.inner.pue, self.inner.carbon_intensity, self.inner.wue_onsite, self.inner.wue_offsite
        )
    }
}

/// Names of the built-in facility and hardware profiles.
#[pyfunction]
fn preset_names(py: Python<'_>) -> PyResult<Py<PyDict>> {
    let set = profiles::presets();
    let d = PyDict::new(py);
    d.set_item("facilities", set.facilities.keys().collect::<Vec<_>>())?;
    d.set_item("hardware", set.hardware.keys().collect::<Vec<_>>())?;
    Ok(d.into())
}

/// Integrate a power trace file into energy. Returns a dict with
/// per-node kWh, the total extrapolated to `nodes`, and any gap
/// warnings.
#[pyfunction]
#[pyo3(signature = (path, measured_nodes=1, gpus_per_node=8, nodes=None))]
fn integrate_trace(
    py: Python<'_>,
    path: &str,
    measured_nodes: u32,
    gpus_per_node: u32,
    nodes: Option<u32>,
) -> PyResult<Py<PyDict>> {
    let trace = load_trace(path, measured_nodes, gpus_per_node)?;
    let integ = telemetry::integrate_energy(&trace).map_err(to_py)?;
    let total_nodes = nodes.unwrap_or(measured_nodes);
    let kwh = telemetry::extrapolate_energy(integ.kwh_per_node, measured_nodes, total_nodes)
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("kwh_per_node", integ.kwh_per_node)?;
    d.set_item("nodes", total_nodes)?;
    d.set_item("kwh", kwh)?;
    d.set_item(
        "warnings",
        integ.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
    )?;
    Ok(d.into())
}

/// Detect checkpoint-style power dips in a trace file.
#[pyfunction]
#[pyo3(signature = (path, device_max=700.0, hi_frac=0.85, lo_frac=0.25, min_dwell_ms=2000))]
fn detect_fluctuations(
    py: Python<'_>,
    path: &str,
    device_max: f64,
    hi_frac: f64,
    lo_frac: f64,
    min_dwell_ms: i64,
) -> PyResult<Py<PyDict>> {
    let trace = load_trace(path, 1, 8)?;
    let cfg = FluctuationConfig {
        device_max_w: device_max,
        hi_frac,
        lo_frac,
        min_dwell_ms,
    };
    let report = telemetry::detect_fluctuations(&trace, &cfg).map_err(to_py)?;
    let events = PyList::empty(py);
    for e in &report.events {
        let ev = PyDict::new(py);
        ev.set_item("start_ms", e.start_ms)?;
        ev.set_item("end_ms", e.end_ms)?;
        ev.set_item("pre_dip_mean_w", e.pre_dip_mean_w)?;
        ev.set_item("dip_mean_w", e.dip_mean_w)?;
        events.append(ev)?;
    }
    let d = PyDict::new(py);
    d.set_item("event_count", report.event_count)?;
    d.set_item("events", events)?;
    d.set_item("duty_cycle_active", report.duty_cycle_active)?;
    d.set_item("max_ramp_w_per_s", report.max_ramp_w_per_s)?;
    d.set_item("hi_threshold_w", report.hi_threshold_w)?;
    d.set_item("lo_threshold_w", report.lo_threshold_w)?;
    Ok(d.into())
}

/// Operational CO2 (kg) and water (L) for an energy draw at a facility.
/// `pue_folded=True` means the kWh figure already includes overhead.
#[pyfunction]
#[pyo3(signature = (kwh, facility, pue_folded=false))]
fn operational_impact(kwh: f64, facility: &Facility, pue_folded: bool) -> PyResult<(f64, f64)> {
    let q = EnergyQuantity::new(kwh, pue_folded).map_err(to_py)?;
    Ok((
        impact::operational_co2(&q, &facility.inner),
        impact::operational_water(&q, &facility.inner),
    ))
}

/// Manufacturing CO2 (kg) and water (L) attributed to one accelerator.
#[pyfunction]
#[pyo3(signature = (hardware="h100"))]
fn embodied_per_gpu(hardware: &str) -> PyResult<(f64, f64)> {
    let hw = profiles::hardware_preset(hardware).map_err(to_py)?;
    let amounts = impact::embodied_per_gpu(&hw);
    Ok((amounts.co2_kg, amounts.water_l))
}

/// Embodied CO2 (kg) and water (L) amortized over a GPU-hour bill.
#[pyfunction]
#[pyo3(signature = (gpu_hours, hardware="h100"))]
fn embodied_total(gpu_hours: f64, hardware: &str) -> PyResult<(f64, f64)> {
    let hw = profiles::hardware_preset(hardware).map_err(to_py)?;
    let result = impact::embodied_total(gpu_hours, &hw).map_err(to_py)?;
    Ok((result.co2_kg(), result.water_l()))
}

/// Everyday equivalents for a footprint, using the default factors.
#[pyfunction]
fn equivalents(py: Python<'_>, co2_kg: f64, water_l: f64) -> PyResult<Py<PyDict>> {
    let table = profiles::default_equivalencies();
    let eq = impact::equivalize_amounts(co2_kg, water_l, &table);
    let d = PyDict::new(py);
    d.set_item("home_years", eq.home_years)?;
    d.set_item("tanker_trucks", eq.tanker_trucks)?;
    d.set_item("forest_acre_years", eq.forest_acre_years)?;
    d.set_item("person_years", eq.person_years)?;
    d.set_item("home_years_text", eq.home_years_text())?;
    d.set_item("person_years_text", eq.person_years_text())?;
    Ok(d.into())
}

/// CO2 grams per served request, given a measured serving campaign.
#[pyfunction]
#[pyo3(signature = (energy_kwh, n_requests, facility, pue_folded=true))]
fn per_request_co2_g(
    energy_kwh: f64,
    n_requests: u64,
    facility: &Facility,
    pue_folded: bool,
) -> PyResult<f64> {
    let m = InferenceMeasurement {
        model_name: String::new(),
        request_rate: RequestRate::Batch,
        n_requests,
        energy_kwh,
        makespan_s: 0.0,
        mean_input_tokens: 0.0,
        mean_output_tokens: 0.0,
    };
    let mode = if pue_folded {
        impact::PueMode::Folded
    } else {
        impact::PueMode::Applied
    };
    let per = inference::per_request_impact(&m, &facility.inner, mode).map_err(to_py)?;
    Ok(per.co2_g)
}

/// Requests until cumulative serving CO2 reaches a training bill, or
/// None when the per-request cost is not positive.
#[pyfunction]
fn breakeven_requests(training_co2_t: f64, per_request_co2_g: f64) -> PyResult<Option<u128>> {
    match inference::breakeven_requests(training_co2_t, per_request_co2_g) {
        Breakeven::Count(n) => Ok(Some(n)),
        Breakeven::NotComputable => Ok(None),
    }
}

/// Simulate a serving workload and return the synthetic measurement.
/// `rate` is "batch" or a requests-per-second figure like "1" or "0.5".
#[pyfunction]
#[pyo3(signature = (model, rate, requests, coeffs, seed=0,
                    input_mean=237.0, input_dispersion=0.6,
                    output_mean=210.0, output_dispersion=0.6))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &str,
    rate: &str,
    requests: u64,
    coeffs: (f64, f64, f64),
    seed: u64,
    input_mean: f64,
    input_dispersion: f64,
    output_mean: f64,
    output_dispersion: f64,
) -> PyResult<Py<PyDict>> {
    let request_rate: RequestRate = rate.parse().map_err(to_py)?;
    let scenario = WorkloadScenario {
        label: model.to_owned(),
        request_rate,
        n_requests: requests,
        seed,
        input_tokens: TokenDist { mean: input_mean, dispersion: input_dispersion },
        output_tokens: TokenDist { mean: output_mean, dispersion: output_dispersion },
        coeffs: EnergyCoeffs {
            per_input_token_kwh: coeffs.0,
            per_output_token_kwh: coeffs.1,
            per_active_second_kwh: coeffs.2,
        },
        server: ServerModel::default(),
    };
    let sim = inference::simulate_workload(&scenario).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("model_name", &sim.measurement.model_name)?;
    d.set_item("request_rate", sim.measurement.request_rate.to_string())?;
    d.set_item("n_requests", sim.measurement.n_requests)?;
    d.set_item("energy_kwh", sim.measurement.energy_kwh)?;
    d.set_item("makespan_s", sim.measurement.makespan_s)?;
    d.set_item("mean_input_tokens", sim.measurement.mean_input_tokens)?;
    d.set_item("mean_output_tokens", sim.measurement.mean_output_tokens)?;
    d.set_item("total_input_tokens", sim.total_input_tokens)?;
    d.set_item("total_output_tokens", sim.total_output_tokens)?;
    Ok(d.into())
}

/// Fit the linear energy model to measurement dicts with keys
/// request_rate, n_requests, energy_kwh, makespan_s,
/// mean_input_tokens, mean_output_tokens. Returns
/// (per_input_token_kwh, per_output_token_kwh, per_active_second_kwh).
#[pyfunction]
fn fit_energy_model(rows: Vec<Bound<'_, PyDict>>) -> PyResult<(f64, f64, f64)> {
    let mut measurements = Vec::with_capacity(rows.len());
    for row in &rows {
        let get = |key: &str| -> PyResult<f64> {
            row.get_item(key)?
                .ok_or_else(|| PyValueError::new_err(format!("row missing {key}")))?
                .extract::<f64>()
        };
        let rate: RequestRate = match row.get_item("request_rate")? {
            Some(v) => v.extract::<String>()?.parse().map_err(to_py)?,
            None => RequestRate::Batch,
        };
        measurements.push(InferenceMeasurement {
            model_name: String::new(),
            request_rate: rate,
            n_requests: get("n_requests")? as u64,
            energy_kwh: get("energy_kwh")?,
            makespan_s: get("makespan_s")?,
            mean_input_tokens: get("mean_input_tokens")?,
            mean_output_tokens: get("mean_output_tokens")?,
        });
    }
    let coeffs = inference::fit_energy_model(&measurements).map_err(to_py)?;
    Ok((
        coeffs.per_input_token_kwh,
        coeffs.per_output_token_kwh,
        coeffs.per_active_second_kwh,
    ))
}

fn parse_format(format: &str) -> PyResult<ReportFormat> {
    format
        .parse::<ReportFormat>()
        .map_err(|_| PyValueError::new_err(format!("unknown format {format:?}")))
}

fn build_aggregate(
    ledger_path: &str,
    profiles_path: Option<&str>,
    pue_folded: bool,
    embodied_gpu_hours: Option<f64>,
    hardware: Option<&str>,
) -> PyResult<(ledger::CampaignAggregate, ProfileSet)> {
    let set = merged_profiles(profiles_path)?;
    let records = ledger::load_ledger(&PathBuf::from(ledger_path)).map_err(to_py)?;
    let hw = match (embodied_gpu_hours, hardware) {
        (Some(_), name) => Some(
            set.hardware(name.unwrap_or("h100")).map_err(to_py)?.clone(),
        ),
        (None, _) => None,
    };
    let campaign = Campaign::from_records(records, hw, embodied_gpu_hours).map_err(to_py)?;
    let opts = AggregateOptions { default_pue_folded: pue_folded };
    let agg = ledger::aggregate(&campaign, &set, &opts).map_err(to_py)?;
    Ok((agg, set))
}

/// Render a campaign report from a run ledger, exactly as the CLI does.
#[pyfunction]
#[pyo3(signature = (ledger_path, profiles_path=None, pue_folded=false,
                    embodied_gpu_hours=None, hardware=None, format="markdown"))]
fn ledger_report(
    ledger_path: &str,
    profiles_path: Option<&str>,
    pue_folded: bool,
    embodied_gpu_hours: Option<f64>,
    hardware: Option<&str>,
    format: &str,
) -> PyResult<String> {
    let (agg, set) = build_aggregate(
        ledger_path,
        profiles_path,
        pue_folded,
        embodied_gpu_hours,
        hardware,
    )?;
    let table = set
        .equivalencies
        .clone()
        .unwrap_or_else(profiles::default_equivalencies);
    Ok(ledger::render_report(&agg, &table, parse_format(format)?))
}

/// Section and grand totals from a run ledger, as plain numbers.
#[pyfunction]
#[pyo3(signature = (ledger_path, profiles_path=None, pue_folded=false,
                    embodied_gpu_hours=None, hardware=None))]
fn ledger_totals(
    py: Python<'_>,
    ledger_path: &str,
    profiles_path: Option<&str>,
    pue_folded: bool,
    embodied_gpu_hours: Option<f64>,
    hardware: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let (agg, _) = build_aggregate(
        ledger_path,
        profiles_path,
        pue_folded,
        embodied_gpu_hours,
        hardware,
    )?;
    let section = |py: Python<'_>, total: &ledger::SectionTotal| -> PyResult<Py<PyDict>> {
        let d = PyDict::new(py);
        d.set_item("energy_mwh", total.energy_mwh)?;
        d.set_item("co2_t", total.co2_t)?;
        d.set_item("water_kl", total.water_kl)?;
        Ok(d.into())
    };
    let d = PyDict::new(py);
    d.set_item("development", section(py, &agg.dev_total)?)?;
    d.set_item("final", section(py, &agg.final_total)?)?;
    if let Some(e) = &agg.embodied {
        let emb = PyDict::new(py);
        emb.set_item("gpu_hours", e.gpu_hours)?;
        emb.set_item("co2_t", e.co2_t)?;
        emb.set_item("water_kl", e.water_kl)?;
        d.set_item("embodied", emb)?;
    }
    let grand = PyDict::new(py);
    grand.set_item("co2_t", agg.grand.co2_t)?;
    grand.set_item("water_kl", agg.grand.water_kl)?;
    d.set_item("grand", grand)?;
    Ok(d.into())
}

/// Audit published run figures against their facility's factors.
/// Returns one dict per flagged quantity.
#[pyfunction]
#[pyo3(signature = (ledger_path, profiles_path=None, threshold=0.02))]
fn ledger_audit(
    py: Python<'_>,
    ledger_path: &str,
    profiles_path: Option<&str>,
    threshold: f64,
) -> PyResult<Py<PyList>> {
    let set = merged_profiles(profiles_path)?;
    let records = ledger::load_ledger(&PathBuf::from(ledger_path)).map_err(to_py)?;
    let findings = ledger::audit(&records, &set, threshold);
    let list = PyList::empty(py);
    for f in &findings {
        let d = PyDict::new(py);
        d.set_item("run_id", &f.run_id)?;
        d.set_item("model_name", &f.model_name)?;
        d.set_item(
            "quantity",
            match f.quantity {
                ledger::AuditQuantity::Co2 => "co2",
                ledger::AuditQuantity::Water => "water",
            },
        )?;
        d.set_item("implied", f.implied)?;
        d.set_item("expected_folded", f.expected_folded)?;
        d.set_item("expected_applied", f.expected_applied)?;
        d.set_item("deviation", f.deviation)?;
        list.append(d)?;
    }
    Ok(list.into())
}

#[pymodule]
fn wattprint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Facility>()?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(detect_fluctuations, m)?)?;
    m.add_function(wrap_pyfunction!(operational_impact, m)?)?;
    m.add_function(wrap_pyfunction!(embodied_per_gpu, m)?)?;
    m.add_function(wrap_pyfunction!(embodied_total, m)?)?;
    m.add_function(wrap_pyfunction!(equivalents, m)?)?;
    m.add_function(wrap_pyfunction!(per_request_co2_g, m)?)?;
    m.add_function(wrap_pyfunction!(breakeven_requests, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_energy_model, m)?)?;
    m.add_function(wrap_pyfunction!(ledger_report, m)?)?;
    m.add_function(wrap_pyfunction!(ledger_totals, m)?)?;
    m.add_function(wrap_pyfunction!(ledger_audit, m)?)?;
    Ok(())
}
