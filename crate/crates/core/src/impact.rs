//! Operational and embodied impact arithmetic.
//!
//! Internal units are kWh, kg CO2eq, and liters throughout; tonnes and
//! kiloliters appear only when rendering. Operational impacts follow
//!
//! ```text
//! co2   = energy * PUE * carbon_intensity
//! water = energy * PUE * (wue_onsite + wue_offsite)
//! ```
//!
//! where PUE is taken as 1.0 when the energy figure already includes
//! facility overhead (`pue_folded`). Embodied impacts amortize server
//! manufacturing plus rare-earth extraction over the hardware lifespan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{EquivalencyTable, FacilityProfile, HardwareProfile};
use crate::render::fmt_duration_years;

/// Whether a reported energy figure is IT-only (apply PUE) or already
/// includes facility overhead (fold PUE into 1.0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PueMode {
    Applied,
    Folded,
}

/// An energy amount plus the overhead convention it was measured under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyQuantity {
    pub kwh: f64,
    /// True when the figure already includes facility overhead.
    pub pue_folded: bool,
}

impl EnergyQuantity {
    pub fn new(kwh: f64, pue_folded: bool) -> Result<Self> {
        if !kwh.is_finite() || kwh < 0.0 {
            return Err(Error::Argument(format!("energy must be >= 0 kWh, got {kwh}")));
        }
        Ok(EnergyQuantity { kwh, pue_folded })
    }

    pub fn with_mode(kwh: f64, mode: PueMode) -> Result<Self> {
        Self::new(kwh, mode == PueMode::Folded)
    }

    fn effective_pue(&self, facility: &FacilityProfile) -> f64 {
        if self.pue_folded {
            1.0
        } else {
            facility.pue
        }
    }
}

/// CO2 and water amounts, in internal units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Amounts {
    pub co2_kg: f64,
    pub water_l: f64,
}

impl std::ops::Add for Amounts {
    type Output = Amounts;
    fn add(self, rhs: Amounts) -> Amounts {
        Amounts {
            co2_kg: self.co2_kg + rhs.co2_kg,
            water_l: self.water_l + rhs.water_l,
        }
    }
}

impl std::ops::AddAssign for Amounts {
    fn add_assign(&mut self, rhs: Amounts) {
        self.co2_kg += rhs.co2_kg;
        self.water_l += rhs.water_l;
    }
}

/// Impact of some activity, broken down by source. Totals are derived
/// from the breakdown, so they always reconcile exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImpactResult {
    pub energy_kwh: f64,
    pub operational: Amounts,
    pub embodied: Amounts,
}

impl ImpactResult {
    pub fn co2_kg(&self) -> f64 {
        self.operational.co2_kg + self.embodied.co2_kg
    }

    pub fn water_l(&self) -> f64 {
        self.operational.water_l + self.embodied.water_l
    }

    pub fn co2_t(&self) -> f64 {
        self.co2_kg() / 1000.0
    }

    pub fn water_kl(&self) -> f64 {
        self.water_l() / 1000.0
    }
}

impl std::ops::Add for ImpactResult {
    type Output = ImpactResult;
    fn add(self, rhs: ImpactResult) -> ImpactResult {
        ImpactResult {
            energy_kwh: self.energy_kwh + rhs.energy_kwh,
            operational: self.operational + rhs.operational,
            embodied: self.embodied + rhs.embodied,
        }
    }
}

impl std::ops::AddAssign for ImpactResult {
    fn add_assign(&mut self, rhs: ImpactResult) {
        *self = *self + rhs;
    }
}

/// kg CO2eq emitted generating (and delivering) the energy.
pub fn operational_co2(energy: &EnergyQuantity, facility: &FacilityProfile) -> f64 {
    energy.kwh * energy.effective_pue(facility) * facility.carbon_intensity
}

/// Liters of water consumed on-site and by generation.
pub fn operational_water(energy: &EnergyQuantity, facility: &FacilityProfile) -> f64 {
    energy.kwh * energy.effective_pue(facility) * facility.wue_total()
}

/// Both operational amounts as an [`ImpactResult`] with no embodied share.
pub fn operational_impact(energy: &EnergyQuantity, facility: &FacilityProfile) -> ImpactResult {
    ImpactResult {
        energy_kwh: energy.kwh,
        operational: Amounts {
            co2_kg: operational_co2(energy, facility),
            water_l: operational_water(energy, facility),
        },
        embodied: Amounts::default(),
    }
}

/// Manufacturing impact attributed to a single GPU: its share of the
/// server build plus rare-earth extraction.
pub fn embodied_per_gpu(hw: &HardwareProfile) -> Amounts {
    Amounts {
        co2_kg: hw.server_embodied_co2 / hw.gpus_per_server as f64
            + hw.rare_earth_mass * hw.rare_earth_co2_rate,
        water_l: hw.per_gpu_water + hw.rare_earth_mass * hw.rare_earth_water_rate,
    }
}

/// Embodied impact per GPU-hour, amortized over the hardware lifespan.
pub fn amortized_rate(hw: &HardwareProfile) -> Amounts {
    let per_gpu = embodied_per_gpu(hw);
    Amounts {
        co2_kg: per_gpu.co2_kg / hw.lifespan_hours,
        water_l: per_gpu.water_l / hw.lifespan_hours,
    }
}

/// Embodied impact attributed to `gpu_hours` of use.
pub fn embodied_total(gpu_hours: f64, hw: &HardwareProfile) -> Result<ImpactResult> {
    if !gpu_hours.is_finite() || gpu_hours < 0.0 {
        return Err(Error::Argument(format!(
            "gpu_hours must be >= 0, got {gpu_hours}"
        )));
    }
    let rate = amortized_rate(hw);
    Ok(ImpactResult {
        energy_kwh: 0.0,
        operational: Amounts::default(),
        embodied: Amounts {
            co2_kg: rate.co2_kg * gpu_hours,
            water_l: rate.water_l * gpu_hours,
        },
    })
}

/// Impact totals translated into everyday terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equivalencies {
    pub home_years: f64,
    pub tanker_trucks: f64,
    pub forest_acre_years: f64,
    pub person_years: f64,
}

impl Equivalencies {
    /// "21 years" style rendering of the home-energy equivalence.
    pub fn home_years_text(&self) -> String {
        fmt_duration_years(self.home_years)
    }

    /// "7 yrs, 10 mo" style rendering of the personal-water equivalence.
    pub fn person_years_text(&self) -> String {
        fmt_duration_years(self.person_years)
    }
}

/// Translate an impact into the table's everyday equivalents.
pub fn equivalize(impact: &ImpactResult, table: &EquivalencyTable) -> Equivalencies {
    equivalize_amounts(impact.co2_kg(), impact.water_l(), table)
}

pub fn equivalize_amounts(co2_kg: f64, water_l: f64, table: &EquivalencyTable) -> Equivalencies {
    let co2_t = co2_kg / 1000.0;
    let water_kl = water_l / 1000.0;
    Equivalencies {
        home_years: co2_t / table.co2_per_home_year,
        tanker_trucks: co2_t / table.co2_per_tanker_truck,
        forest_acre_years: co2_t / table.co2_per_forest_acre_year,
        person_years: water_kl / table.water_per_person_year,
    }
}
