//! Number and duration formatting shared by reports and the CLI.
//!
//! Stored values are never rounded; everything here is display-only.

/// Round half-up (0.5 always moves away from zero) at `decimals` places.
pub fn round_half_up(v: f64, decimals: u32) -> f64 {
    if !v.is_finite() {
        return v;
    }
    let f = 10f64.powi(decimals as i32);
    if v < 0.0 {
        -((-v * f + 0.5).floor()) / f
    } else {
        (v * f + 0.5).floor() / f
    }
}

/// Round to `sig` significant figures, half-up.
pub fn round_sig_figs(v: f64, sig: u32) -> f64 {
    assert!(sig >= 1, "need at least one significant figure");
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    // Route through decimal scientific notation so the result is the
    // closest f64 to the rounded decimal, not a rescaling artifact.
    format!("{:.*e}", sig as usize - 1, v)
        .parse()
        .expect("scientific notation round-trips")
}

/// Report-table cell format: one decimal below 10, whole numbers above,
/// no grouping separators. NaN/unknown renders "-".
pub fn fmt_quantity(v: f64) -> String {
    if !v.is_finite() {
        return "-".to_string();
    }
    if v.abs() < 10.0 {
        let r = round_half_up(v, 1);
        if r == 0.0 {
            "0".to_string()
        } else {
            let s = format!("{r:.1}");
            s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
        }
    } else {
        format!("{:.0}", round_half_up(v, 0))
    }
}

/// Float with up to six decimals, trailing zeros trimmed.
pub fn fmt_trim(v: f64) -> String {
    if !v.is_finite() {
        return "-".to_string();
    }
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Render a duration given in years as whole months: "0 mo", "7 mo",
/// "2 years", "13 yrs, 6 mo".
pub fn fmt_duration_years(years: f64) -> String {
    let months = round_half_up(years * 12.0, 0) as i64;
    let (y, m) = (months / 12, months % 12);
    match (y, m) {
        (0, m) => format!("{m} mo"),
        (1, 0) => "1 year".to_string(),
        (y, 0) => format!("{y} years"),
        (1, m) => format!("1 yr, {m} mo"),
        (y, m) => format!("{y} yrs, {m} mo"),
    }
}

/// Large counts in report style: three significant figures with a
/// million/billion/trillion suffix.
pub fn fmt_count_short(count: u128) -> String {
    let v = round_sig_figs(count as f64, 3);
    let (scaled, suffix) = if v >= 1e12 {
        (v / 1e12, " tril.")
    } else if v >= 1e9 {
        (v / 1e9, " bil.")
    } else if v >= 1e6 {
        (v / 1e6, " mil.")
    } else {
        return format!("{v:.0}");
    };
    let body = if scaled >= 100.0 {
        format!("{scaled:.0}")
    } else if scaled >= 10.0 {
        format!("{scaled:.1}")
    } else {
        format!("{scaled:.2}")
    };
    format!("{body}{suffix}")
}
