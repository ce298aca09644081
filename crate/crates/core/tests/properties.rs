//! Randomized invariants over the numeric core.

use proptest::prelude::*;

use wattprint::impact::{self, EnergyQuantity};
use wattprint::inference::{breakeven_requests, Breakeven};
use wattprint::profiles::presets;
use wattprint::render::round_sig_figs;
use wattprint::telemetry::{
    self, FluctuationConfig, PowerSample, PowerTrace,
};

fn trace_from(points: &[(i64, f64)]) -> PowerTrace {
    let samples = points
        .iter()
        .map(|&(t, p)| PowerSample {
            timestamp_ms: t,
            device_id: "gpu0".into(),
            power_w: p,
        })
        .collect();
    PowerTrace::from_samples(samples, 1, 1).0
}

/// Strictly increasing timestamps with sub-gap-threshold spacing.
fn points_strategy(max_len: usize) -> impl Strategy<Value = Vec<(i64, f64)>> {
    prop::collection::vec((1i64..5000, 0f64..770.0), 2..max_len).prop_map(|steps| {
        let mut t = 0i64;
        let mut out = Vec::with_capacity(steps.len());
        for (dt, p) in steps {
            out.push((t, p));
            t += dt;
        }
        out
    })
}

proptest! {
    #[test]
    fn energy_is_additive_across_a_split(points in points_strategy(60), split in 1usize..58) {
        prop_assume!(split < points.len() - 1);
        let whole = telemetry::integrate_energy(&trace_from(&points)).unwrap().kwh_per_node;
        let left = telemetry::integrate_energy(&trace_from(&points[..=split])).unwrap().kwh_per_node;
        let right = telemetry::integrate_energy(&trace_from(&points[split..])).unwrap().kwh_per_node;
        prop_assert!((left + right - whole).abs() <= 1e-9 * whole.max(1e-12));
    }

    #[test]
    fn energy_scales_linearly_with_power(points in points_strategy(40), scale in 0.1f64..10.0) {
        let base = telemetry::integrate_energy(&trace_from(&points)).unwrap().kwh_per_node;
        let scaled_points: Vec<_> = points.iter().map(|&(t, p)| (t, p * scale)).collect();
        let scaled = telemetry::integrate_energy(&trace_from(&scaled_points)).unwrap().kwh_per_node;
        prop_assert!((scaled - base * scale).abs() <= 1e-9 * (base * scale).max(1e-12));
    }

    #[test]
    fn duty_cycle_and_ramp_stay_in_range(points in points_strategy(60)) {
        let cfg = FluctuationConfig {
            device_max_w: 700.0,
            hi_frac: 0.85,
            lo_frac: 0.25,
            min_dwell_ms: 2000,
        };
        let report = telemetry::detect_fluctuations(&trace_from(&points), &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.duty_cycle_active));
        prop_assert!(report.max_ramp_w_per_s >= 0.0);
        prop_assert_eq!(report.event_count, report.events.len());
        for e in &report.events {
            prop_assert!(e.end_ms >= e.start_ms + 2000);
            prop_assert!(e.dip_mean_w < report.lo_threshold_w);
            prop_assert!(e.pre_dip_mean_w >= report.hi_threshold_w);
        }
    }

    #[test]
    fn operational_impact_is_additive(a in 0f64..1e6, b in 0f64..1e6, folded in any::<bool>()) {
        let facility = presets().facility("jupiter").unwrap();
        let qa = EnergyQuantity::new(a, folded).unwrap();
        let qb = EnergyQuantity::new(b, folded).unwrap();
        let qsum = EnergyQuantity::new(a + b, folded).unwrap();
        let sum = impact::operational_co2(&qa, facility) + impact::operational_co2(&qb, facility);
        let whole = impact::operational_co2(&qsum, facility);
        prop_assert!((sum - whole).abs() <= 1e-9 * whole.max(1e-12));
    }

    #[test]
    fn folding_the_pue_never_raises_the_footprint(kwh in 0f64..1e6) {
        // PUE >= 1, so billing at meter factors alone can only be lower.
        for name in ["jupiter", "augusta", "lumi"] {
            let facility = presets().facility(name).unwrap();
            let folded = impact::operational_co2(&EnergyQuantity::new(kwh, true).unwrap(), facility);
            let applied = impact::operational_co2(&EnergyQuantity::new(kwh, false).unwrap(), facility);
            prop_assert!(folded <= applied + 1e-12);
        }
    }

    #[test]
    fn breakeven_brackets_the_training_bill(training_t in 1e-3f64..1e4, per_g in 1e-6f64..10.0) {
        match breakeven_requests(training_t, per_g) {
            Breakeven::Count(n) => {
                let n = n as f64;
                let grams = training_t * 1e6;
                prop_assert!(n * per_g >= grams * (1.0 - 1e-9));
                if n > 0.0 {
                    prop_assert!((n - 1.0) * per_g < grams * (1.0 + 1e-9));
                }
            }
            Breakeven::NotComputable => prop_assert!(false, "positive inputs must compute"),
        }
    }

    #[test]
    fn breakeven_is_monotone_in_request_cost(training_t in 1e-3f64..1e4, g1 in 1e-6f64..10.0, g2 in 1e-6f64..10.0) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let n_cheap = match breakeven_requests(training_t, lo) { Breakeven::Count(n) => n, _ => unreachable!() };
        let n_dear = match breakeven_requests(training_t, hi) { Breakeven::Count(n) => n, _ => unreachable!() };
        prop_assert!(n_dear <= n_cheap);
    }

    #[test]
    fn sig_fig_rounding_is_idempotent(v in -1e12f64..1e12, sig in 1u32..9) {
        let once = round_sig_figs(v, sig);
        let twice = round_sig_figs(once, sig);
        prop_assert_eq!(once.to_bits(), twice.to_bits());
        if v != 0.0 {
            let rel = (once - v).abs() / v.abs();
            // Half a unit in the last kept digit.
            prop_assert!(rel <= 0.5 * 10f64.powi(1 - sig as i32) + 1e-15);
        }
    }

    #[test]
    fn canonical_trace_json_round_trips_bitwise(points in points_strategy(40)) {
        let trace = trace_from(&points);
        let text = telemetry::to_canonical_json(&trace);
        let back = telemetry::from_canonical_json(&text).unwrap();
        prop_assert_eq!(&trace, &back);
    }
}
