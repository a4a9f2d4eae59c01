//! Exact estimands, design simulation and estimators for peer encouragement
//! designs under partial interference.

pub mod config;
pub mod design;
pub mod dgp;
pub mod error;
pub mod estimands;
pub mod estimators;
pub mod mechanisms;
pub mod montecarlo;
pub mod population;
pub mod rng;

pub use config::RunConfig;
pub use design::{run_design, run_design_replicate, Arm, DesignConfig, ExperimentData};
pub use dgp::{build_population, DgpConfig};
pub use error::{Error, Result};
pub use estimands::{BlockValues, ExactEngine};
pub use estimators::{estimate, EstimateReport};
pub use montecarlo::{replicate, verify_theorems, McSummary, VerificationReport};
pub use mechanisms::{AssignmentVector, Mechanism};
pub use population::{ComplianceType, Flags, Population};
