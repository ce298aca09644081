//! End-to-end checks that the toolkit reproduces the reference figures
//! carried by the bundled fixtures in `data/`. One test per criterion;
//! each prints a PASS line on success (visible with `--nocapture`).

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wattprint::impact::{self, EnergyQuantity, PueMode};
use wattprint::inference::{
    self, Breakeven, EnergyCoeffs, RequestRate, ServerModel, TokenDist, WorkloadScenario,
    DEFAULT_INPUT_TOKENS, DEFAULT_OUTPUT_TOKENS,
};
use wattprint::ledger::{
    self, AggregateOptions, AuditQuantity, Campaign, GroupColumns, Reconciliation,
};
use wattprint::profiles::{self, ProfileSet};
use wattprint::render::round_sig_figs;
use wattprint::telemetry::{
    self, FluctuationConfig, ParseOptions, PowerSample, PowerTrace, TraceFormat,
};

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn fixture_profiles() -> ProfileSet {
    let extra = profiles::load_profiles(data_path("profiles.toml")).unwrap();
    profiles::presets().clone().merge(extra)
}

fn campaign_records() -> Vec<ledger::RunRecord> {
    ledger::load_ledger(&data_path("olmo_campaign.jsonl")).unwrap()
}

/// Magnitude of the last printed digit: "0.3" -> 0.1, "122" -> 1.
fn last_digit_unit(cell: &str) -> f64 {
    match cell.find('.') {
        Some(dot) => 10f64.powi(-((cell.len() - dot - 1) as i32)),
        None => 1.0,
    }
}

#[test]
fn criterion_1_final_run_table() {
    let started = Instant::now();
    let profiles = fixture_profiles();
    let campaign = Campaign::from_records(campaign_records(), None, None).unwrap();
    let agg = ledger::aggregate(&campaign, &profiles, &AggregateOptions::default()).unwrap();

    // Section totals come from the published per-run cells.
    let ft = &agg.final_total;
    assert_eq!(ft.energy_mwh.unwrap().round(), 913.0);
    assert_eq!(ft.co2_t.round(), 312.0);
    assert_eq!(ft.water_kl.round(), 1921.0);

    // Every row on the 1.2-PUE facility should be recoverable from its
    // energy alone. The reference table folds PUE into its factors, so
    // recompute under that convention and compare against the printed
    // cells at their own precision.
    let jupiter = profiles.facility("jupiter").unwrap();
    let rows: [(&str, f64, &str, &str); 10] = [
        ("OLMo 20M", 0.8, "0.3", "1"),
        ("OLMo 60M", 1.2, "0.4", "1.6"),
        ("OLMo 150M", 2.4, "1", "3.6"),
        ("OLMo 300M", 5.0, "2", "5.9"),
        ("OLMo 700M", 8.0, "3", "10"),
        ("OLMo 7B", 67.0, "22", "87"),
        ("OLMo 1 1B", 30.0, "10", "39"),
        ("OLMo 0724 7B", 95.0, "32", "122"),
        ("OLMo 2 7B", 157.0, "52", "202"),
        ("OLMoE 0924", 54.0, "18", "70"),
    ];
    let mut loose_cells: Vec<String> = Vec::new();
    for (model, mwh, co2_cell, water_cell) in rows {
        let q = EnergyQuantity::new(mwh * 1000.0, true).unwrap();
        let co2_t = impact::operational_co2(&q, jupiter) / 1000.0;
        let water_kl = impact::operational_water(&q, jupiter) / 1000.0;
        for (quantity, computed, cell) in
            [("co2", co2_t, co2_cell), ("water", water_kl, water_cell)]
        {
            let printed: f64 = cell.parse().unwrap();
            let unit = last_digit_unit(cell);
            let rounded = (computed / unit).round() * unit;
            if (rounded - printed).abs() <= unit * (1.0 + 1e-9) {
                continue;
            }
            // Two water cells in the reference table are off by more
            // than one printed digit from any recomputation; accept
            // them within 1 kL and record which they were.
            assert!(
                (computed - printed).abs() <= 1.0,
                "{model} {quantity}: computed {computed} vs printed {cell}"
            );
            loose_cells.push(format!("{model} {quantity}"));
        }
    }
    loose_cells.sort();
    assert_eq!(loose_cells, ["OLMo 150M water", "OLMo 300M water"]);

    assert!(started.elapsed().as_secs_f64() < 1.0, "table check too slow");
    println!(
        "[acceptance] criterion 1 PASS — final-run table reproduced; totals 913 MWh / 312 t / 1921 kL"
    );
}

#[test]
fn criterion_2_development_examples() {
    let profiles = fixture_profiles();
    let jupiter = profiles.facility("jupiter").unwrap();
    let augusta = profiles.facility("augusta").unwrap();

    // 196 MWh with the facility's PUE already folded into its factors.
    let q = EnergyQuantity::new(196_000.0, true).unwrap();
    let co2_t = impact::operational_co2(&q, jupiter) / 1000.0;
    let water_kl = impact::operational_water(&q, jupiter) / 1000.0;
    assert!((co2_t - 65.072).abs() < 1e-9);
    assert!((water_kl - 252.84).abs() < 1e-9);
    assert!((co2_t - 65.0).abs() <= 1.0);
    assert!((water_kl - 252.0).abs() <= 1.0);

    // 116 MWh with PUE applied on top of meter-level factors.
    let q = EnergyQuantity::new(116_000.0, false).unwrap();
    let co2_t = impact::operational_co2(&q, augusta) / 1000.0;
    let water_kl = impact::operational_water(&q, augusta) / 1000.0;
    assert!((co2_t - 45.60192).abs() < 1e-9);
    assert!((water_kl - 402.752).abs() < 1e-9);
    assert!((co2_t.round() - 46.0).abs() <= 1.0);
    assert!((water_kl.round() - 402.0).abs() <= 1.0);

    println!(
        "[acceptance] criterion 2 PASS — 196 MWh -> 65 t / 252 kL folded; 116 MWh -> 46 t / 402 kL applied"
    );
}

#[test]
fn criterion_3_embodied_chain() {
    let profiles = fixture_profiles();
    let hw = profiles.hardware("h100").unwrap();

    let per_gpu = impact::embodied_per_gpu(hw);
    assert!((per_gpu.co2_kg - 462.5130146).abs() < 1e-6);
    assert!((per_gpu.water_l - 102.589).abs() < 1e-9);

    let rate = impact::amortized_rate(hw);
    assert_eq!((rate.co2_kg * 1000.0).round() / 1000.0, 0.013);
    assert_eq!((rate.water_l * 1000.0).round() / 1000.0, 0.003);

    let total = impact::embodied_total(1_650_000.0, hw).unwrap();
    let co2_t = total.co2_kg() / 1000.0;
    let water_kl = total.water_l() / 1000.0;
    assert!((co2_t - 22.0).abs() / 22.0 <= 0.02, "embodied CO2 {co2_t} t");
    assert!((water_kl - 4.8).abs() / 4.8 <= 0.02, "embodied water {water_kl} kL");

    println!(
        "[acceptance] criterion 3 PASS — 462.5 kg / 102.6 L per GPU; 1.65M GPU-h -> {co2_t:.2} t / {water_kl:.2} kL"
    );
}

#[test]
fn criterion_4_grand_total() {
    let profiles = fixture_profiles();
    let hw = profiles.hardware("h100").unwrap().clone();
    let campaign =
        Campaign::from_records(campaign_records(), Some(hw), Some(1_650_000.0)).unwrap();
    let agg = ledger::aggregate(&campaign, &profiles, &AggregateOptions::default()).unwrap();

    let embodied = agg.embodied.as_ref().unwrap();
    assert!((embodied.gpu_hours - 1_650_000.0).abs() < 1e-9);

    assert!(
        (agg.grand.co2_t.round() - 493.0).abs() <= 1.0,
        "grand CO2 {} t",
        agg.grand.co2_t
    );
    assert!(
        (agg.grand.water_kl.round() - 2769.0).abs() <= 1.0,
        "grand water {} kL",
        agg.grand.water_kl
    );

    println!(
        "[acceptance] criterion 4 PASS — grand total {:.1} t / {:.1} kL vs 493 / 2769",
        agg.grand.co2_t, agg.grand.water_kl
    );
}

#[test]
fn criterion_5_breakeven_table() {
    let started = Instant::now();
    let profiles = fixture_profiles();
    let jupiter = profiles.facility("jupiter").unwrap();
    let campaign = Campaign::from_records(campaign_records(), None, None).unwrap();
    let training =
        ledger::training_co2_by_model(&campaign, &profiles, &AggregateOptions::default())
            .unwrap();

    let file = File::open(data_path("inference_table.csv")).unwrap();
    let measurements = inference::read_measurements_csv(BufReader::new(file)).unwrap();

    // Printed breakeven counts per model at [batch, 8 req/s, 1 req/s].
    // Models without a training figure in the ledger are absent here.
    let expected: [(&str, [f64; 3]); 8] = [
        ("Llama 3.2 1B", [258e9, 21.5e9, 4.83e9]),
        ("Llama 2 7B", [11.9e9, 4.18e9, 647e6]),
        ("Llama 3.1 8B", [276e9, 59.5e9, 9.12e9]),
        ("Llama 2 13B", [13.3e9, 7.52e9, 1.13e9]),
        ("OLMo 1 1B", [18.2e9, 1.91e9, 441e6]),
        ("OLMo 2 7B", [20.9e9, 7.68e9, 1.05e9]),
        ("OLMo 2 13B", [22.1e9, 12.8e9, 1.89e9]),
        ("OLMoE 0924", [21.7e9, 3.51e9, 861e6]),
    ];

    let rate_of = |slot: usize, rate: &RequestRate| match (slot, rate) {
        (0, RequestRate::Batch) => true,
        (1, RequestRate::PerSecond(r)) => (*r - 8.0).abs() < 1e-12,
        (2, RequestRate::PerSecond(r)) => (*r - 1.0).abs() < 1e-12,
        _ => false,
    };

    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (model, printed) in &expected {
        let training_t = *training
            .get(*model)
            .unwrap_or_else(|| panic!("no training CO2 for {model}"));
        for (slot, want) in printed.iter().enumerate() {
            let m = measurements
                .iter()
                .find(|m| m.model_name == *model && rate_of(slot, &m.request_rate))
                .unwrap_or_else(|| panic!("no measurement for {model} slot {slot}"));
            // The reference grams per request come out under the folded
            // convention: the measured energy is priced at the
            // facility's factors with no further PUE multiplier.
            let per = inference::per_request_impact(m, jupiter, PueMode::Folded).unwrap();
            let n = match inference::breakeven_requests(training_t, per.co2_g) {
                Breakeven::Count(n) => n as f64,
                Breakeven::NotComputable => panic!("{model} slot {slot} not computable"),
            };
            let rounded = round_sig_figs(n, 3);
            let rel = (rounded - want).abs() / want;
            worst = worst.max(rel);
            assert!(
                rel <= 0.01 + 1e-12,
                "{model} slot {slot}: {rounded} vs printed {want} ({:.3}%)",
                rel * 100.0
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 24);

    // Models with no training footprint on record stay open-ended, and
    // a free request can never pay back a bill.
    assert!(!training.contains_key("Qwen 2.5 7B"));
    assert!(matches!(
        inference::breakeven_requests(52.0, 0.0),
        Breakeven::NotComputable
    ));

    assert!(started.elapsed().as_secs_f64() < 1.0, "breakeven check too slow");
    println!(
        "[acceptance] criterion 5 PASS — 24 breakeven counts within 1% of printed (worst {:.3}%)",
        worst * 100.0
    );
}

#[test]
fn criterion_6_audit_and_reconcile() {
    let profiles = fixture_profiles();
    let records = campaign_records();

    let findings = ledger::audit(&records, &profiles, 0.02);

    // The 13B final run's published water implies ~3.88 L/kWh while the
    // facility supports at most 3.47 with PUE applied.
    let thirteen: Vec<_> = findings
        .iter()
        .filter(|f| f.run_id == "final-olmo2-13b")
        .collect();
    assert_eq!(thirteen.len(), 2, "expected CO2 and water findings");
    let water = thirteen
        .iter()
        .find(|f| f.quantity == AuditQuantity::Water)
        .unwrap();
    assert!((water.implied - 892.0 / 230.0).abs() < 1e-9);
    assert!((water.expected_applied - 1.12 * 3.10).abs() < 1e-9);
    assert_eq!(water.closer, PueMode::Applied);
    assert!((water.deviation - 0.117).abs() < 1e-3);

    // The 7B final run is consistent with the folded convention.
    assert!(findings.iter().all(|f| f.run_id != "final-olmo2-7b"));

    // Subtracting the listed development groups from the summary totals
    // leaves the unreported remainder as its own group.
    let totals = GroupColumns {
        gpu_hours: 680_000.0,
        energy_mwh: 459.0,
        runs: 813.0,
        co2_t: 159.0,
        water_kl: 843.0,
    };
    let listed = [
        GroupColumns { gpu_hours: 29_000.0, energy_mwh: 19.0, runs: 20.0, co2_t: 6.0, water_kl: 24.0 },
        GroupColumns { gpu_hours: 269_000.0, energy_mwh: 196.0, runs: 375.0, co2_t: 65.0, water_kl: 252.0 },
        GroupColumns { gpu_hours: 191_000.0, energy_mwh: 116.0, runs: 156.0, co2_t: 46.0, water_kl: 402.0 },
        GroupColumns { gpu_hours: 27_000.0, energy_mwh: 19.0, runs: 35.0, co2_t: 6.0, water_kl: 24.0 },
    ];
    match ledger::reconcile_groups(&totals, &listed).unwrap() {
        Reconciliation::Residual(g) => {
            assert_eq!(g.name, "inferred");
            assert_eq!(g.gpu_hours, Some(164_000.0));
            assert_eq!(g.energy_mwh, Some(109.0));
            assert_eq!(g.runs, 227);
            assert_eq!(g.co2_t, 36.0);
            assert_eq!(g.water_kl, 141.0);
        }
        other => panic!("expected residual, got {other:?}"),
    }

    println!(
        "[acceptance] criterion 6 PASS — 13B water implied 3.88 L/kWh flagged; residual group 164k GPU-h / 109 MWh / 227 runs"
    );
}

#[test]
fn criterion_7_trace_integration() {
    // Trapezoid integration is exact on piecewise-linear power, so a
    // trace sampled at the knots must match the closed-form energy.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let knots = rng.random_range(3..=40);
        let mut samples = Vec::with_capacity(knots);
        let mut t_ms: i64 = 0;
        let mut prev_p: Option<f64> = None;
        let mut joules = 0.0f64;
        for k in 0..knots {
            if k > 0 {
                let dt = rng.random_range(100..=5000i64);
                t_ms += dt;
            }
            let p: f64 = rng.random_range(0.0..770.0);
            if let Some(pp) = prev_p {
                let dt_s = (t_ms - samples.last().map(|s: &PowerSample| s.timestamp_ms).unwrap())
                    as f64
                    / 1000.0;
                joules += (pp + p) / 2.0 * dt_s;
            }
            samples.push(PowerSample {
                timestamp_ms: t_ms,
                device_id: "gpu0".into(),
                power_w: p,
            });
            prev_p = Some(p);
        }
        let expected_kwh = joules / 3.6e6;
        let (trace, _) = PowerTrace::from_samples(samples, 1, 1);
        let integ = telemetry::integrate_energy(&trace).unwrap();
        let rel = (integ.kwh_per_node - expected_kwh).abs() / expected_kwh.max(1e-30);
        assert!(rel <= 1e-6, "case {case}: {} vs {expected_kwh}", integ.kwh_per_node);
    }

    // The bundled checkpoint trace: five dips to 100 W out of a 640 W
    // plateau, 8 s each over a 400 s window.
    let file = File::open(data_path("traces/checkpoint_dips.csv")).unwrap();
    let (trace, report) =
        telemetry::parse_trace(BufReader::new(file), TraceFormat::Csv, &ParseOptions::default())
            .unwrap();
    assert_eq!(report.malformed_count, 0);
    let cfg = FluctuationConfig {
        device_max_w: 700.0,
        hi_frac: 0.85,
        lo_frac: 0.25,
        min_dwell_ms: 2000,
    };
    let fl = telemetry::detect_fluctuations(&trace, &cfg).unwrap();
    assert_eq!(fl.event_count, 5);
    assert!((fl.duty_cycle_active - 0.9).abs() <= 0.01, "duty {}", fl.duty_cycle_active);
    for e in &fl.events {
        assert!(e.pre_dip_mean_w > 595.0);
        assert!(e.dip_mean_w < 175.0);
    }
    assert!((fl.max_ramp_w_per_s - 1080.0).abs() < 1e-9);

    println!(
        "[acceptance] criterion 7 PASS — 100 random traces within 1e-6; checkpoint fixture: 5 events, duty {:.3}",
        fl.duty_cycle_active
    );
}

#[test]
fn criterion_8_simulator() {
    let coeffs = EnergyCoeffs {
        per_input_token_kwh: 2.1e-7,
        per_output_token_kwh: 9.4e-7,
        per_active_second_kwh: 6.5e-6,
    };
    let scenario = WorkloadScenario {
        label: "synthetic".into(),
        request_rate: RequestRate::PerSecond(1.0),
        n_requests: 2400,
        seed: 1,
        input_tokens: DEFAULT_INPUT_TOKENS,
        output_tokens: DEFAULT_OUTPUT_TOKENS,
        coeffs,
        server: ServerModel::default(),
    };

    // Same seed, same workload, bit for bit.
    let a = inference::simulate_workload(&scenario).unwrap();
    let b = inference::simulate_workload(&scenario).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        a.measurement.energy_kwh.to_bits(),
        b.measurement.energy_kwh.to_bits()
    );
    assert_eq!(
        a.measurement.makespan_s.to_bits(),
        b.measurement.makespan_s.to_bits()
    );

    // At 1 req/s a 2400-request run should take just over 100 s per
    // hundred requests, matching how the measured campaigns report it.
    let per_100 = a.measurement.makespan_s / 24.0;
    assert!(
        (100.0..=102.0).contains(&per_100),
        "makespan per 100 requests: {per_100}"
    );

    // Arrival thinning: the empirical mean interarrival stays within
    // three standard errors of 1/rate.
    let stream = WorkloadScenario {
        label: "stream".into(),
        request_rate: RequestRate::PerSecond(4.0),
        n_requests: 10_000,
        seed: 1,
        ..scenario.clone()
    };
    let w = inference::simulate_workload(&stream).unwrap();
    assert_eq!(w.arrivals.len(), 10_000);
    let mean = w.arrivals.last().unwrap() / w.arrivals.len() as f64;
    let se = 0.25 / (w.arrivals.len() as f64).sqrt();
    assert!((mean - 0.25).abs() <= 3.0 * se, "mean interarrival {mean}");

    // Energies are exactly linear in the scenario coefficients, so the
    // fit should give them back.
    let mut rows = Vec::new();
    for (i, rate) in [
        RequestRate::Batch,
        RequestRate::PerSecond(1.0),
        RequestRate::PerSecond(2.0),
        RequestRate::PerSecond(4.0),
        RequestRate::PerSecond(8.0),
        RequestRate::PerSecond(16.0),
    ]
    .into_iter()
    .enumerate()
    {
        for seed in [11u64, 12] {
            let s = WorkloadScenario {
                label: format!("fit-{i}-{seed}"),
                request_rate: rate,
                n_requests: 400,
                seed,
                input_tokens: TokenDist { mean: 150.0 + 40.0 * i as f64, dispersion: 0.5 },
                output_tokens: TokenDist { mean: 120.0 + 25.0 * i as f64, dispersion: 0.5 },
                coeffs,
                server: ServerModel::default(),
            };
            rows.push(inference::simulate_workload(&s).unwrap().measurement);
        }
    }
    let fitted = inference::fit_energy_model(&rows).unwrap();
    for (got, want) in [
        (fitted.per_input_token_kwh, coeffs.per_input_token_kwh),
        (fitted.per_output_token_kwh, coeffs.per_output_token_kwh),
        (fitted.per_active_second_kwh, coeffs.per_active_second_kwh),
    ] {
        assert!((got - want).abs() / want <= 1e-6, "fit {got} vs {want}");
    }

    println!(
        "[acceptance] criterion 8 PASS — bit-reproducible; {per_100:.2} s per 100 requests; coefficients recovered"
    );
}
