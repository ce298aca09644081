#!/usr/bin/env python3
"""Builds the wattprint_py extension and runs it through its paces.

Usage: python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
DATA = REPO / "crates" / "core" / "data"


def build_extension() -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "wattprint-py"],
        cwd=REPO,
        check=True,
    )
    built = REPO / "target" / "debug" / "libwattprint_py.so"
    if not built.exists():  # e.g. macOS
        built = REPO / "target" / "debug" / "libwattprint_py.dylib"
    stage = Path(tempfile.mkdtemp(prefix="wattprint-py-"))
    shutil.copy2(built, stage / "wattprint_py.so")
    return stage


def approx(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-12)


def main() -> None:
    sys.path.insert(0, str(build_extension()))
    import wattprint_py as wp

    # Presets are on board.
    names = wp.preset_names()
    assert "jupiter" in names["facilities"], names
    assert "h100" in names["hardware"], names

    jupiter = wp.Facility.preset("jupiter")
    assert jupiter.pue == 1.2 and jupiter.carbon_intensity == 0.332
    print("presets ok:", jupiter)

    # Trace integration: one node at a constant 600 W for an hour,
    # scaled out to the full 64-node job.
    energy = wp.integrate_trace(
        str(DATA / "traces" / "constant_600w.csv"), measured_nodes=1, nodes=64
    )
    assert approx(energy["kwh_per_node"], 0.6), energy
    assert approx(energy["kwh"], 38.4), energy
    assert energy["warnings"] == []
    print("integrate ok:", energy["kwh"], "kWh")

    # Checkpoint dips in the bundled trace.
    fl = wp.detect_fluctuations(str(DATA / "traces" / "checkpoint_dips.csv"))
    assert fl["event_count"] == 5, fl
    assert abs(fl["duty_cycle_active"] - 0.9) < 1e-9, fl
    assert fl["events"][0]["dip_mean_w"] < 175.0
    print("fluctuations ok:", fl["event_count"], "events")

    # Operational accounting, both conventions.
    co2_kg, water_l = wp.operational_impact(196_000.0, jupiter, pue_folded=True)
    assert approx(co2_kg, 65_072.0) and approx(water_l, 252_840.0)
    co2_applied, _ = wp.operational_impact(1000.0, jupiter, pue_folded=False)
    assert approx(co2_applied, 1000.0 * 1.2 * 0.332)
    print("operational ok:", co2_kg / 1000.0, "t for the 7B dev bill")

    # Embodied accounting.
    per_gpu = wp.embodied_per_gpu()
    assert approx(per_gpu[0], 462.5130146, rel=1e-6), per_gpu
    assert approx(per_gpu[1], 102.589), per_gpu
    total = wp.embodied_total(1_650_000.0)
    assert abs(total[0] / 1000.0 - 22.0) / 22.0 < 0.02
    print("embodied ok:", round(per_gpu[0], 1), "kg per GPU")

    eq = wp.equivalents(101_000.0, 892_000.0)
    assert eq["home_years_text"] == "21 years", eq
    assert math.isclose(eq["person_years"], 892.0 / 113.5)
    print("equivalents ok:", eq["home_years_text"])

    # Per-request pricing and the payback count.
    g = wp.per_request_co2_g(0.358, 2400, jupiter, pue_folded=True)
    assert approx(g, 0.358 / 2400 * 332.0), g
    n = wp.breakeven_requests(52.0, g)
    assert n is not None and abs(n - 52e6 / g) <= 1.0
    assert round(n / 1e9, 2) == 1.05, n
    assert wp.breakeven_requests(52.0, 0.0) is None
    print("breakeven ok:", n, "requests")

    # Simulation is deterministic and matches the measured cadence.
    coeffs = (2.1e-7, 9.4e-7, 6.5e-6)
    a = wp.simulate("synthetic", "1", 2400, coeffs, seed=1)
    b = wp.simulate("synthetic", "1", 2400, coeffs, seed=1)
    assert a == b, "same seed must give the same workload"
    assert 100.0 <= a["makespan_s"] / 24.0 <= 102.0, a
    print("simulate ok:", round(a["makespan_s"] / 24.0, 2), "s per 100 requests")

    # Fit recovers the coefficients that generated the data.
    rows = []
    for i, rate in enumerate(["batch", "1", "4", "16"]):
        for seed in (11, 12):
            rows.append(
                wp.simulate(
                    f"fit-{i}",
                    rate,
                    400,
                    coeffs,
                    seed=seed,
                    input_mean=150.0 + 40.0 * i,
                    output_mean=120.0 + 25.0 * i,
                )
            )
    fitted = wp.fit_energy_model(rows)
    for got, want in zip(fitted, coeffs):
        assert abs(got - want) / want < 1e-6, (fitted, coeffs)
    print("fit ok:", fitted)

    # Ledger aggregation against the bundled campaign.
    totals = wp.ledger_totals(
        str(DATA / "olmo_campaign.jsonl"),
        profiles_path=str(DATA / "profiles.toml"),
    )
    assert round(totals["final"]["energy_mwh"], 1) == 913.4, totals
    assert round(totals["final"]["co2_t"], 1) == 311.7, totals
    assert round(totals["final"]["water_kl"], 1) == 1921.1, totals
    report = wp.ledger_report(
        str(DATA / "olmo_campaign.jsonl"),
        profiles_path=str(DATA / "profiles.toml"),
    )
    assert "| Total | 913 | 312 |" in report
    print("ledger ok: final totals 913 MWh / 312 t / 1921 kL")

    findings = wp.ledger_audit(
        str(DATA / "olmo_campaign.jsonl"),
        profiles_path=str(DATA / "profiles.toml"),
    )
    flagged = {f["run_id"] for f in findings}
    assert "final-olmo2-13b" in flagged
    assert "final-olmo2-7b" not in flagged
    print("audit ok:", len(findings), "findings")

    # Errors arrive as the right Python exceptions.
    try:
        wp.Facility.preset("atlantis")
        raise AssertionError("unknown preset must raise")
    except ValueError:
        pass
    try:
        wp.integrate_trace("/nonexistent/trace.csv")
        raise AssertionError("missing file must raise")
    except IOError:
        pass
    print("errors ok")

    print("smoke test passed")


if __name__ == "__main__":
    main()
