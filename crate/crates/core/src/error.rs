use thiserror::Error;

use crate::design::Arm;
use crate::population::ComplianceType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("arity mismatch: expected {expected} entries, found {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("enumeration of 2^{n} assignments exceeds the cap of n = {cap}{}", block_suffix(.block))]
    EnumerationTooLarge {
        n: usize,
        cap: usize,
        block: Option<usize>,
    },

    #[error("declared flag contradicts the data: {0}")]
    FlagMismatch(String),

    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("population generation failed: {0}")]
    GenerationFailed(String),

    #[error("outcome table of block {block}, unit {unit} depends on encouragements; an encouragement vector is required")]
    MissingTableEntry { block: usize, unit: usize },

    #[error("outcome of block {block}, unit {unit} depends on encouragements (exclusion restriction violated)")]
    ExclusionViolated { block: usize, unit: usize },

    #[error("block {block} has no {stratum:?} members")]
    EmptyStratumInBlock {
        block: usize,
        stratum: ComplianceType,
    },

    #[error("encouragement has no effect on treatment (ET = 0){}", block_suffix(.block))]
    ZeroEncouragementEffect { block: Option<usize> },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("no blocks were assigned to the {0:?} arm")]
    EmptyArm(Arm),

    #[error("encouragement-effect estimate undefined in every block")]
    AllBlocksUndefined,

    #[error("estimated encouragement effect is zero (|et_hat| < 1e-12)")]
    ZeroEncouragementEffectEstimate,

    #[error("invalid experiment data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn block_suffix(block: &Option<usize>) -> String {
    match block {
        Some(b) => format!(" (block {b})"),
        None => String::new(),
    }
}
