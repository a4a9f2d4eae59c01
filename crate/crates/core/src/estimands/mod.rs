//! Exact population estimands.
//!
//! All quantities are computed from the full set of potential outcomes by
//! averaging over every peer encouragement assignment (or the equivalent
//! treated-peer count distribution). Block values are computed
//! independently, possibly in parallel, and reduced in block order.

mod engine;
pub(crate) mod report;
mod theorems;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::Mechanism;
use crate::population::{ComplianceType, Population};

pub use engine::{treated_peer_pmf, ExactEngine, Strategy};
pub(crate) use engine::{LocalMode, Target};
pub use report::{estimand_report, EstimandEntry, EstimandReport, UndefinedEstimand};
pub use theorems::{
    identity_tolerance, theorem_1_check, theorem_2_check, theorem_3_check, theorem_3_mirror_check,
    AssumptionStatus, IdentityReport, Theorem,
};

/// Per-block values and their unweighted mean over blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockValues {
    pub blocks: Vec<f64>,
    pub population: f64,
}

impl BlockValues {
    pub fn new(blocks: Vec<f64>) -> Self {
        let population = mean(&blocks);
        Self { blocks, population }
    }

    fn zip_with(&self, other: &BlockValues, f: impl Fn(f64, f64) -> f64) -> BlockValues {
        BlockValues::new(
            self.blocks
                .iter()
                .zip(&other.blocks)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn minus(&self, other: &BlockValues) -> BlockValues {
        self.zip_with(other, |a, b| a - b)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn distinct(a: bool, b: bool, what: &str) -> Result<()> {
    if a == b {
        Err(Error::InvalidConfig(format!("{what} contrast needs two different values")))
    } else {
        Ok(())
    }
}

/// Mean over the members of `stratum` (everyone when `None`).
fn stratum_mean(
    pop: &Population,
    i: usize,
    values: &[f64],
    stratum: Option<ComplianceType>,
) -> Result<f64> {
    match stratum {
        None => Ok(mean(values)),
        Some(t) => {
            let members: Vec<f64> = pop
                .block(i)
                .individuals
                .iter()
                .zip(values)
                .filter(|(ind, _)| ind.pt.stratum() == t)
                .map(|(_, &v)| v)
                .collect();
            if members.is_empty() {
                Err(Error::EmptyStratumInBlock { block: i, stratum: t })
            } else {
                Ok(mean(&members))
            }
        }
    }
}

fn per_block(pop: &Population, f: impl Fn(usize) -> Result<f64> + Sync + Send) -> Result<BlockValues> {
    let blocks = (0..pop.num_blocks())
        .into_par_iter()
        .map(f)
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockValues::new(blocks))
}

impl ExactEngine {
    /// Block and population `Ybar(D(z), z, mech)`.
    pub fn ybar_itt(&self, pop: &Population, z: bool, mech: &Mechanism) -> Result<BlockValues> {
        per_block(pop, |i| Ok(mean(&self.block_values(pop, i, Target::Itt(z), mech)?)))
    }

    /// Block and population `Ybar(d, D_i(j), mech, stratum)`.
    pub fn ybar_local(
        &self,
        pop: &Population,
        d: bool,
        mech: &Mechanism,
        stratum: Option<ComplianceType>,
    ) -> Result<BlockValues> {
        self.ybar_local_mode(pop, d, mech, stratum, LocalMode::Strict)
    }

    pub(crate) fn ybar_local_mode(
        &self,
        pop: &Population,
        d: bool,
        mech: &Mechanism,
        stratum: Option<ComplianceType>,
        mode: LocalMode,
    ) -> Result<BlockValues> {
        per_block(pop, |i| {
            let v = self.block_values(pop, i, Target::Local(d, mode), mech)?;
            stratum_mean(pop, i, &v, stratum)
        })
    }

    pub fn ditt(&self, pop: &Population, z_hi: bool, z_lo: bool, mech: &Mechanism) -> Result<BlockValues> {
        distinct(z_hi, z_lo, "DITT")?;
        per_block(pop, |i| {
            let hi = self.block_values(pop, i, Target::Itt(z_hi), mech)?;
            let lo = self.block_values(pop, i, Target::Itt(z_lo), mech)?;
            Ok(mean(&hi) - mean(&lo))
        })
    }

    pub fn pitt(&self, pop: &Population, z: bool, mech_a: &Mechanism, mech_b: &Mechanism) -> Result<BlockValues> {
        per_block(pop, |i| {
            let a = self.block_values(pop, i, Target::Itt(z), mech_a)?;
            let b = self.block_values(pop, i, Target::Itt(z), mech_b)?;
            Ok(mean(&a) - mean(&b))
        })
    }

    pub fn ldt(
        &self,
        pop: &Population,
        d_hi: bool,
        d_lo: bool,
        mech: &Mechanism,
        stratum: ComplianceType,
    ) -> Result<BlockValues> {
        self.ldt_mode(pop, d_hi, d_lo, mech, Some(stratum), LocalMode::Strict)
    }

    pub(crate) fn ldt_mode(
        &self,
        pop: &Population,
        d_hi: bool,
        d_lo: bool,
        mech: &Mechanism,
        stratum: Option<ComplianceType>,
        mode: LocalMode,
    ) -> Result<BlockValues> {
        distinct(d_hi, d_lo, "LDT")?;
        per_block(pop, |i| {
            let hi = self.block_values(pop, i, Target::Local(d_hi, mode), mech)?;
            let lo = self.block_values(pop, i, Target::Local(d_lo, mode), mech)?;
            Ok(stratum_mean(pop, i, &hi, stratum)? - stratum_mean(pop, i, &lo, stratum)?)
        })
    }

    /// Local peer treatment effect; `stratum = None` averages over everyone.
    pub fn lpt(
        &self,
        pop: &Population,
        d: bool,
        mech_a: &Mechanism,
        mech_b: &Mechanism,
        stratum: Option<ComplianceType>,
    ) -> Result<BlockValues> {
        self.lpt_mode(pop, d, mech_a, mech_b, stratum, LocalMode::Strict)
    }

    pub(crate) fn lpt_mode(
        &self,
        pop: &Population,
        d: bool,
        mech_a: &Mechanism,
        mech_b: &Mechanism,
        stratum: Option<ComplianceType>,
        mode: LocalMode,
    ) -> Result<BlockValues> {
        per_block(pop, |i| {
            let a = self.block_values(pop, i, Target::Local(d, mode), mech_a)?;
            let b = self.block_values(pop, i, Target::Local(d, mode), mech_b)?;
            Ok(stratum_mean(pop, i, &a, stratum)? - stratum_mean(pop, i, &b, stratum)?)
        })
    }
}

/// Effect of encouragement on uptake, `ET_i(z', z) = (1/n_i) sum_j D_ij(z') - D_ij(z)`.
pub fn et(pop: &Population, z_hi: bool, z_lo: bool) -> Result<BlockValues> {
    distinct(z_hi, z_lo, "ET")?;
    Ok(BlockValues::new(
        pop.blocks()
            .iter()
            .map(|b| {
                let diff: i64 = b
                    .individuals
                    .iter()
                    .map(|ind| ind.pt.at(z_hi) as i64 - ind.pt.at(z_lo) as i64)
                    .sum();
                diff as f64 / b.len() as f64
            })
            .collect(),
    ))
}

pub fn ybar_indiv_itt(pop: &Population, i: usize, j: usize, z: bool, mech: &Mechanism) -> Result<f64> {
    ExactEngine::default().ybar_indiv_itt(pop, i, j, z, mech)
}

pub fn ybar_indiv_local(pop: &Population, i: usize, j: usize, d: bool, mech: &Mechanism) -> Result<f64> {
    ExactEngine::default().ybar_indiv_local(pop, i, j, d, mech)
}

pub fn ditt(pop: &Population, z_hi: bool, z_lo: bool, mech: &Mechanism) -> Result<BlockValues> {
    ExactEngine::default().ditt(pop, z_hi, z_lo, mech)
}

pub fn pitt(pop: &Population, z: bool, mech_a: &Mechanism, mech_b: &Mechanism) -> Result<BlockValues> {
    ExactEngine::default().pitt(pop, z, mech_a, mech_b)
}

pub fn ldt(
    pop: &Population,
    d_hi: bool,
    d_lo: bool,
    mech: &Mechanism,
    stratum: ComplianceType,
) -> Result<BlockValues> {
    ExactEngine::default().ldt(pop, d_hi, d_lo, mech, stratum)
}

pub fn lpt(
    pop: &Population,
    d: bool,
    mech_a: &Mechanism,
    mech_b: &Mechanism,
    stratum: Option<ComplianceType>,
) -> Result<BlockValues> {
    ExactEngine::default().lpt(pop, d, mech_a, mech_b, stratum)
}
