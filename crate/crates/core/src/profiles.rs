//! Facility, hardware, and equivalency profiles.
//!
//! Profiles are plain data loaded from a sectioned key-value config
//! (TOML: `[facility.<name>]`, `[hardware.<name>]`, `[equivalency]`,
//! `#` comments). A built-in set ships with the crate; files loaded at
//! runtime are validated with the same rules.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Data-center operating profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacilityProfile {
    #[serde(skip)]
    pub name: String,
    /// Power usage effectiveness, facility draw over IT draw. >= 1.
    pub pue: f64,
    pub carbon_intensity: f64, // kg CO2eq per kWh
    pub wue_onsite: f64,       // L per kWh, evaporated at the site
    pub wue_offsite: f64,      // L per kWh, consumed generating the power
}

impl FacilityProfile {
    pub fn wue_total(&self) -> f64 {
        self.wue_onsite + self.wue_offsite
    }
}

/// Accelerator hardware description used for embodied-impact accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    #[serde(skip)]
    pub name: String,
    pub gpus_per_server: u32,
    pub server_embodied_co2: f64, // kg per server, manufacturing
    pub per_gpu_water: f64,       // L per GPU, manufacturing
    pub rare_earth_mass: f64,     // kg of rare-earth content per GPU
    pub rare_earth_co2_rate: f64, // kg CO2eq per kg extracted
    pub rare_earth_water_rate: f64, // L per kg extracted
    pub lifespan_hours: f64,      // amortization window
}

/// Everyday quantities used to translate totals for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalencyTable {
    pub co2_per_home_year: f64,        // t CO2eq, one US home's annual energy
    pub co2_per_tanker_truck: f64,     // t CO2eq, one fuel tanker of gasoline
    pub co2_per_forest_acre_year: f64, // t CO2eq sequestered per acre-year
    pub water_per_person_year: f64,    // kL, one person's annual direct use
}

/// A parsed profile config: any number of facilities and hardware
/// definitions plus at most one equivalency table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileSet {
    pub facilities: BTreeMap<String, FacilityProfile>,
    pub hardware: BTreeMap<String, HardwareProfile>,
    pub equivalencies: Option<EquivalencyTable>,
}

#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    #[serde(default)]
    facility: BTreeMap<String, FacilityProfile>,
    #[serde(default)]
    hardware: BTreeMap<String, HardwareProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    equivalency: Option<EquivalencyTable>,
}

impl ProfileSet {
    /// Facilities from `other` override same-named entries in `self`, etc.
    pub fn merge(mut self, other: ProfileSet) -> ProfileSet {
        self.facilities.extend(other.facilities);
        self.hardware.extend(other.hardware);
        if other.equivalencies.is_some() {
            self.equivalencies = other.equivalencies;
        }
        self
    }

    pub fn facility(&self, name: &str) -> Result<&FacilityProfile> {
        self.facilities
            .get(name)
            .ok_or_else(|| Error::UnknownFacility(name.to_string()))
    }

    pub fn hardware(&self, name: &str) -> Result<&HardwareProfile> {
        self.hardware
            .get(name)
            .ok_or_else(|| Error::UnknownHardware(name.to_string()))
    }
}

/// Parse and validate a profile config from text.
pub fn parse_profiles(text: &str) -> Result<ProfileSet> {
    let doc: ConfigDoc = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut set = ProfileSet {
        facilities: doc.facility,
        hardware: doc.hardware,
        equivalencies: doc.equivalency,
    };
    for (name, f) in set.facilities.iter_mut() {
        f.name = name.clone();
        validate_facility(f)?;
    }
    for (name, h) in set.hardware.iter_mut() {
        h.name = name.clone();
        validate_hardware(h)?;
    }
    if let Some(eq) = &set.equivalencies {
        validate_equivalencies(eq)?;
    }
    Ok(set)
}

/// Load and validate a profile config file.
pub fn load_profiles(path: impl AsRef<Path>) -> Result<ProfileSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text)
}

/// Render a profile set back to config text. `parse_profiles` of the
/// output yields an equal set.
pub fn to_config_string(set: &ProfileSet) -> String {
    let doc = ConfigDoc {
        facility: set.facilities.clone(),
        hardware: set.hardware.clone(),
        equivalency: set.equivalencies.clone(),
    };
    toml::to_string(&doc).expect("profile set serializes")
}

fn check(cond: bool, what: &str, key: &str, value: f64) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(format!("{what}: {key} = {value} is out of range")))
    }
}

fn validate_facility(f: &FacilityProfile) -> Result<()> {
    let what = format!("facility '{}'", f.name);
    check(f.pue.is_finite() && f.pue >= 1.0, &what, "pue", f.pue)?;
    check(
        f.carbon_intensity.is_finite() && f.carbon_intensity >= 0.0,
        &what,
        "carbon_intensity",
        f.carbon_intensity,
    )?;
    check(
        f.wue_onsite.is_finite() && f.wue_onsite >= 0.0,
        &what,
        "wue_onsite",
        f.wue_onsite,
    )?;
    check(
        f.wue_offsite.is_finite() && f.wue_offsite >= 0.0,
        &what,
        "wue_offsite",
        f.wue_offsite,
    )
}

fn validate_hardware(h: &HardwareProfile) -> Result<()> {
    let what = format!("hardware '{}'", h.name);
    check(h.gpus_per_server >= 1, &what, "gpus_per_server", h.gpus_per_server as f64)?;
    check(
        h.server_embodied_co2.is_finite() && h.server_embodied_co2 > 0.0,
        &what,
        "server_embodied_co2",
        h.server_embodied_co2,
    )?;
    check(
        h.per_gpu_water.is_finite() && h.per_gpu_water > 0.0,
        &what,
        "per_gpu_water",
        h.per_gpu_water,
    )?;
    check(
        h.rare_earth_mass.is_finite() && h.rare_earth_mass > 0.0,
        &what,
        "rare_earth_mass",
        h.rare_earth_mass,
    )?;
    check(
        h.rare_earth_co2_rate.is_finite() && h.rare_earth_co2_rate > 0.0,
        &what,
        "rare_earth_co2_rate",
        h.rare_earth_co2_rate,
    )?;
    check(
        h.rare_earth_water_rate.is_finite() && h.rare_earth_water_rate > 0.0,
        &what,
        "rare_earth_water_rate",
        h.rare_earth_water_rate,
    )?;
    check(
        h.lifespan_hours.is_finite() && h.lifespan_hours > 0.0,
        &what,
        "lifespan_hours",
        h.lifespan_hours,
    )
}

fn validate_equivalencies(eq: &EquivalencyTable) -> Result<()> {
    let what = "equivalency table";
    check(
        eq.co2_per_home_year.is_finite() && eq.co2_per_home_year > 0.0,
        what,
        "co2_per_home_year",
        eq.co2_per_home_year,
    )?;
    check(
        eq.co2_per_tanker_truck.is_finite() && eq.co2_per_tanker_truck > 0.0,
        what,
        "co2_per_tanker_truck",
        eq.co2_per_tanker_truck,
    )?;
    check(
        eq.co2_per_forest_acre_year.is_finite() && eq.co2_per_forest_acre_year > 0.0,
        what,
        "co2_per_forest_acre_year",
        eq.co2_per_forest_acre_year,
    )?;
    check(
        eq.water_per_person_year.is_finite() && eq.water_per_person_year > 0.0,
        what,
        "water_per_person_year",
        eq.water_per_person_year,
    )
}

/// The built-in profiles compiled into the crate.
pub fn presets() -> &'static ProfileSet {
    static PRESETS: OnceLock<ProfileSet> = OnceLock::new();
    PRESETS.get_or_init(|| {
        parse_profiles(include_str!("presets.toml")).expect("built-in presets are valid")
    })
}

pub fn facility_preset(name: &str) -> Result<FacilityProfile> {
    presets().facility(name).cloned()
}

pub fn hardware_preset(name: &str) -> Result<HardwareProfile> {
    presets().hardware(name).cloned()
}

pub fn default_equivalencies() -> EquivalencyTable {
    presets()
        .equivalencies
        .clone()
        .expect("built-in equivalency table")
}
