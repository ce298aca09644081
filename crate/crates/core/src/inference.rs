//! Inference-side accounting: measured serving workloads, a fitted
//! energy model, a reproducible workload simulator, and the breakeven
//! request count where cumulative inference impact overtakes training.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::BufRead;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::error::{Error, Result};
use crate::impact::{operational_co2, operational_water, EnergyQuantity, PueMode};
use crate::profiles::FacilityProfile;
use crate::render::fmt_trim;

/// How requests arrive: all at once, or as a Poisson stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RequestRate {
    Batch,
    PerSecond(f64),
}

impl RequestRate {
    pub fn validate(&self) -> Result<()> {
        if let RequestRate::PerSecond(r) = self {
            if !(r.is_finite() && *r > 0.0) {
                return Err(Error::Argument(format!(
                    "request rate must be > 0 per second, got {r}"
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for RequestRate {
    type Err = Error;
    fn from_str(s: &str) -> Result<RequestRate> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("batch") {
            return Ok(RequestRate::Batch);
        }
        let r: f64 = s
            .parse()
            .map_err(|_| Error::Argument(format!("request rate must be 'batch' or a number, got '{s}'")))?;
        let rate = RequestRate::PerSecond(r);
        rate.validate()?;
        Ok(rate)
    }
}

impl std::fmt::Display for RequestRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RequestRate::Batch => write!(f, "batch"),
            RequestRate::PerSecond(r) => write!(f, "{}", fmt_trim(*r)),
        }
    }
}

/// One serving workload: n requests at a given arrival pattern, with
/// the measured (or simulated) energy and wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceMeasurement {
    pub model_name: String,
    pub request_rate: RequestRate,
    pub n_requests: u64,
    pub energy_kwh: f64,
    pub makespan_s: f64,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
}

const MEASUREMENT_HEADER: [&str; 7] = [
    "model_name",
    "request_rate",
    "n_requests",
    "energy_kwh",
    "makespan_s",
    "mean_input_tokens",
    "mean_output_tokens",
];

/// Read a measurement table. Unlike telemetry traces these are small,
/// curated files, so any malformed row is a hard error.
pub fn read_measurements_csv(reader: impl BufRead) -> Result<Vec<InferenceMeasurement>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr
            .headers()
            .map_err(|e| Error::Format(format!("unreadable CSV header: {e}")))?;
        let names: Vec<&str> = headers
            .iter()
            .map(|h| h.trim().trim_start_matches('\u{feff}'))
            .collect();
        if names != MEASUREMENT_HEADER {
            return Err(Error::Format(format!(
                "expected header {}, got {}",
                MEASUREMENT_HEADER.join(","),
                names.join(",")
            )));
        }
    }
    let mut rows = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Format(format!("measurement row: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let num = |i: usize, name: &str| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {line}: {name} must be a number, got '{}'", field(i))))
        };
        let m = InferenceMeasurement {
            model_name: field(0),
            request_rate: field(1).parse()?,
            n_requests: field(2)
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("line {line}: n_requests must be a positive integer")))?,
            energy_kwh: num(3, "energy_kwh")?,
            makespan_s: num(4, "makespan_s")?,
            mean_input_tokens: num(5, "mean_input_tokens")?,
            mean_output_tokens: num(6, "mean_output_tokens")?,
        };
        validate_measurement(&m, line)?;
        rows.push(m);
    }
    if rows.is_empty() {
        return Err(Error::Format("measurement table has no rows".into()));
    }
    Ok(rows)
}

pub fn write_measurements_csv(rows: &[InferenceMeasurement]) -> String {
    let mut out = MEASUREMENT_HEADER.join(",");
    out.push('\n');
    for m in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.model_name,
            m.request_rate,
            m.n_requests,
            fmt_trim(m.energy_kwh),
            fmt_trim(m.makespan_s),
            fmt_trim(m.mean_input_tokens),
            fmt_trim(m.mean_output_tokens),
        ));
    }
    out
}

fn validate_measurement(m: &InferenceMeasurement, line: u64) -> Result<()> {
    m.request_rate.validate()?;
    let ctx = if line > 0 { format!("line {line}: ") } else { String::new() };
    if m.n_requests == 0 {
        return Err(Error::Format(format!("{ctx}n_requests must be >= 1")));
    }
    if !(m.energy_kwh.is_finite() && m.energy_kwh >= 0.0) {
        return Err(Error::Format(format!("{ctx}energy_kwh must be >= 0")));
    }
    if !(m.makespan_s.is_finite() && m.makespan_s > 0.0) {
        return Err(Error::Format(format!("{ctx}makespan_s must be > 0")));
    }
    if !(m.mean_input_tokens.is_finite() && m.mean_input_tokens > 0.0)
        || !(m.mean_output_tokens.is_finite() && m.mean_output_tokens > 0.0)
    {
        return Err(Error::Format(format!("{ctx}mean token counts must be > 0")));
    }
    Ok(())
}

/// Footprint of one served request under a facility profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerRequestImpact {
    pub energy_kwh: f64,
    pub co2_g: f64,
    pub water_l: f64,
}

pub fn per_request_impact(
    m: &InferenceMeasurement,
    facility: &FacilityProfile,
    mode: PueMode,
) -> Result<PerRequestImpact> {
    if m.n_requests == 0 {
        return Err(Error::Argument("measurement has no requests".into()));
    }
    let energy_kwh = m.energy_kwh / m.n_requests as f64;
    let q = EnergyQuantity::with_mode(energy_kwh, mode)?;
    Ok(PerRequestImpact {
        energy_kwh,
        co2_g: operational_co2(&q, facility) * 1000.0,
        water_l: operational_water(&q, facility),
    })
}

/// How many requests until cumulative inference CO2 equals a training
/// bill. `NotComputable` covers non-positive per-request cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Breakeven {
    Count(u128),
    NotComputable,
}

pub fn breakeven_requests(training_co2_t: f64, per_request_co2_g: f64) -> Breakeven {
    if !(training_co2_t.is_finite() && training_co2_t >= 0.0) {
        return Breakeven::NotComputable;
    }
    if !(per_request_co2_g.is_finite() && per_request_co2_g > 0.0) {
        return Breakeven::NotComputable;
    }
    // tonnes -> grams, then count up whole requests
    let requests = (training_co2_t * 1e6 / per_request_co2_g).ceil();
    Breakeven::Count(requests as u128)
}

/// Linear energy model: kWh per input token, per output token, and per
/// active second of holding the server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyCoeffs {
    pub per_input_token_kwh: f64,
    pub per_output_token_kwh: f64,
    pub per_active_second_kwh: f64,
}

impl EnergyCoeffs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("per_input_token_kwh", self.per_input_token_kwh),
            ("per_output_token_kwh", self.per_output_token_kwh),
            ("per_active_second_kwh", self.per_active_second_kwh),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Argument(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Predicted workload energy in kWh.
    pub fn predict(&self, total_input_tokens: f64, total_output_tokens: f64, makespan_s: f64) -> f64 {
        self.per_input_token_kwh * total_input_tokens
            + self.per_output_token_kwh * total_output_tokens
            + self.per_active_second_kwh * makespan_s
    }
}

/// Least-squares fit of [`EnergyCoeffs`] to measured workloads:
/// energy ≈ a·total_input_tokens + b·total_output_tokens + c·makespan.
/// Needs at least two distinct rows covering two distinct request
/// rates; with collinear token columns the minimum-norm solution is
/// returned. Negative coefficients are clamped to zero.
pub fn fit_energy_model(rows: &[InferenceMeasurement]) -> Result<EnergyCoeffs> {
    let mut distinct_rows: Vec<[f64; 4]> = Vec::new();
    let mut distinct_rates: Vec<RequestRate> = Vec::new();
    for m in rows {
        let features = [
            m.n_requests as f64 * m.mean_input_tokens,
            m.n_requests as f64 * m.mean_output_tokens,
            m.makespan_s,
            m.energy_kwh,
        ];
        if !distinct_rows.contains(&features) {
            distinct_rows.push(features);
        }
        if !distinct_rates.contains(&m.request_rate) {
            distinct_rates.push(m.request_rate);
        }
    }
    if distinct_rows.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 distinct measurements to fit, got {}",
            distinct_rows.len()
        )));
    }
    if distinct_rates.len() < 2 {
        return Err(Error::Fit(
            "need measurements at 2 distinct request rates to separate \
             token cost from time cost"
                .into(),
        ));
    }

    let n = distinct_rows.len();
    let a = nalgebra::DMatrix::from_fn(n, 3, |i, j| distinct_rows[i][j]);
    let y = nalgebra::DVector::from_fn(n, |i, _| distinct_rows[i][3]);
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    if !(max_sv.is_finite() && max_sv > 0.0) {
        return Err(Error::Fit("measurement matrix is all zeros".into()));
    }
    let x = svd
        .solve(&y, max_sv * 1e-12)
        .map_err(|e| Error::Fit(format!("least squares failed: {e}")))?;
    Ok(EnergyCoeffs {
        per_input_token_kwh: x[0].max(0.0),
        per_output_token_kwh: x[1].max(0.0),
        per_active_second_kwh: x[2].max(0.0),
    })
}

/// Log-normal token-length distribution parameterized by its mean and
/// the standard deviation of the underlying log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenDist {
    pub mean: f64,
    pub dispersion: f64,
}

impl TokenDist {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean.is_finite() && self.mean > 0.0) {
            return Err(Error::Argument(format!("token mean must be > 0, got {}", self.mean)));
        }
        if !(self.dispersion.is_finite() && self.dispersion >= 0.0) {
            return Err(Error::Argument(format!(
                "token dispersion must be >= 0, got {}",
                self.dispersion
            )));
        }
        Ok(())
    }

    fn sampler(&self) -> Result<LogNormal<f64>> {
        // mu chosen so the distribution's mean is self.mean
        let mu = self.mean.ln() - self.dispersion * self.dispersion / 2.0;
        LogNormal::new(mu, self.dispersion)
            .map_err(|e| Error::Argument(format!("token distribution: {e}")))
    }
}

pub const DEFAULT_INPUT_TOKENS: TokenDist = TokenDist { mean: 237.0, dispersion: 0.6 };
pub const DEFAULT_OUTPUT_TOKENS: TokenDist = TokenDist { mean: 210.0, dispersion: 0.6 };

/// Serving capacity: aggregate token throughput, per-request decode
/// speed, and how many requests may run concurrently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerModel {
    pub max_tokens_per_s: f64,
    pub per_request_tokens_per_s: f64,
    pub max_concurrency: usize,
}

impl Default for ServerModel {
    fn default() -> Self {
        ServerModel {
            max_tokens_per_s: 12_000.0,
            per_request_tokens_per_s: 100.0,
            max_concurrency: 2048,
        }
    }
}

impl ServerModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_tokens_per_s.is_finite() && self.max_tokens_per_s > 0.0)
            || !(self.per_request_tokens_per_s.is_finite() && self.per_request_tokens_per_s > 0.0)
        {
            return Err(Error::Argument("server token rates must be > 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::Argument("max_concurrency must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadScenario {
    pub label: String,
    pub request_rate: RequestRate,
    pub n_requests: u64,
    pub seed: u64,
    pub input_tokens: TokenDist,
    pub output_tokens: TokenDist,
    pub coeffs: EnergyCoeffs,
    pub server: ServerModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedWorkload {
    pub measurement: InferenceMeasurement,
    pub arrivals: Vec<f64>,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
}

/// Simulate serving `n_requests` under the scenario's arrival pattern
/// and server capacity, then price the workload with the energy model.
///
/// Deterministic for a fixed seed: token lengths are drawn first (all
/// inputs, then all outputs), then interarrival gaps, all from one
/// seeded stream. Requests are served processor-sharing style: every
/// active request decodes at the same rate, capped per request and by
/// aggregate throughput; beyond `max_concurrency` arrivals queue FIFO.
pub fn simulate_workload(s: &WorkloadScenario) -> Result<SimulatedWorkload> {
    s.request_rate.validate()?;
    s.input_tokens.validate()?;
    s.output_tokens.validate()?;
    s.coeffs.validate()?;
    s.server.validate()?;
    if s.n_requests == 0 {
        return Err(Error::Argument("n_requests must be >= 1".into()));
    }
    let n = s.n_requests as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let draw_lengths = |rng: &mut ChaCha8Rng, dist: &TokenDist| -> Result<Vec<u64>> {
        let sampler = dist.sampler()?;
        Ok((0..n).map(|_| sampler.sample(rng).round().max(1.0) as u64).collect())
    };
    let input_lens = draw_lengths(&mut rng, &s.input_tokens)?;
    let output_lens = draw_lengths(&mut rng, &s.output_tokens)?;

    let arrivals: Vec<f64> = match s.request_rate {
        RequestRate::Batch => vec![0.0; n],
        RequestRate::PerSecond(rate) => {
            let exp = Exp::new(rate).map_err(|e| Error::Argument(format!("arrival rate: {e}")))?;
            let mut t = 0.0;
            (0..n)
                .map(|_| {
                    t += exp.sample(&mut rng);
                    t
                })
                .collect()
        }
    };

    let work: Vec<f64> = (0..n)
        .map(|i| (input_lens[i] + output_lens[i]) as f64)
        .collect();
    let makespan_s = serve_processor_sharing(&arrivals, &work, &s.server);

    let total_input_tokens: u64 = input_lens.iter().sum();
    let total_output_tokens: u64 = output_lens.iter().sum();
    let energy_kwh = s.coeffs.predict(
        total_input_tokens as f64,
        total_output_tokens as f64,
        makespan_s,
    );

    Ok(SimulatedWorkload {
        measurement: InferenceMeasurement {
            model_name: s.label.clone(),
            request_rate: s.request_rate,
            n_requests: s.n_requests,
            energy_kwh,
            makespan_s,
            mean_input_tokens: total_input_tokens as f64 / n as f64,
            mean_output_tokens: total_output_tokens as f64 / n as f64,
        },
        arrivals,
        total_input_tokens,
        total_output_tokens,
    })
}

#[derive(PartialEq)]
struct Threshold(f64);

impl Eq for Threshold {}
impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Threshold {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Exact event-driven processor-sharing run. All active requests share
/// one decode rate, so progress can be tracked as a single cumulative
/// per-request depletion D: a request admitted at depletion d with work
/// w completes when D reaches d + w.
fn serve_processor_sharing(arrivals: &[f64], work: &[f64], server: &ServerModel) -> f64 {
    let n = arrivals.len();
    let mut heap: BinaryHeap<Reverse<Threshold>> = BinaryHeap::with_capacity(n.min(server.max_concurrency));
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut depletion = 0.0f64;
    let mut t = 0.0f64;
    let mut next_arrival = 0usize;
    let mut completed = 0usize;
    let mut makespan = 0.0f64;

    while completed < n {
        if heap.is_empty() && queue.is_empty() {
            // idle: jump to the next arrival
            t = arrivals[next_arrival];
            while next_arrival < n && arrivals[next_arrival] <= t {
                admit(next_arrival, depletion, work, &mut heap, &mut queue, server);
                next_arrival += 1;
            }
            continue;
        }
        let active = heap.len();
        let rate = server
            .per_request_tokens_per_s
            .min(server.max_tokens_per_s / active as f64);
        let theta_min = heap.peek().expect("active request").0 .0;
        let t_complete = t + (theta_min - depletion) / rate;
        if next_arrival < n && arrivals[next_arrival] < t_complete {
            let ta = arrivals[next_arrival];
            depletion += rate * (ta - t);
            t = ta;
            while next_arrival < n && arrivals[next_arrival] <= t {
                admit(next_arrival, depletion, work, &mut heap, &mut queue, server);
                next_arrival += 1;
            }
        } else {
            depletion = theta_min;
            t = t_complete;
            while heap.peek().is_some_and(|e| e.0 .0 <= depletion) {
                heap.pop();
                completed += 1;
            }
            makespan = t;
            while heap.len() < server.max_concurrency {
                match queue.pop_front() {
                    Some(idx) => heap.push(Reverse(Threshold(depletion + work[idx]))),
                    None => break,
                }
            }
        }
    }
    makespan
}

fn admit(
    idx: usize,
    depletion: f64,
    work: &[f64],
    heap: &mut BinaryHeap<Reverse<Threshold>>,
    queue: &mut VecDeque<usize>,
    server: &ServerModel,
) {
    if heap.len() < server.max_concurrency {
        heap.push(Reverse(Threshold(depletion + work[idx])));
    } else {
        queue.push_back(idx);
    }
}
