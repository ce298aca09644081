//! Energy, carbon, and water accounting for GPU training and inference
//! workloads.
//!
//! The crate covers the full pipeline: power telemetry in, footprint
//! numbers out. [`telemetry`] parses device power traces, integrates
//! them to energy, and finds checkpoint-style power dips. [`impact`]
//! turns energy into operational carbon and water under a facility
//! profile, and amortizes embodied hardware impacts over GPU-hours.
//! [`ledger`] keeps the books for a whole training campaign
//! (development runs, final runs, external baselines) and renders
//! report tables. [`inference`] measures or simulates serving
//! workloads, fits an energy model to them, and computes how many
//! requests it takes for inference to overtake training. [`profiles`]
//! holds the facility and hardware constants that drive all of it.

pub mod cli;
pub mod error;
pub mod impact;
pub mod inference;
pub mod ledger;
pub mod profiles;
pub mod render;
pub mod telemetry;

pub use error::{Error, Result};
pub use impact::{Amounts, EnergyQuantity, ImpactResult, PueMode};
pub use ledger::{Campaign, CampaignAggregate, RunKind, RunRecord};
pub use profiles::{EquivalencyTable, FacilityProfile, HardwareProfile, ProfileSet};
