//! Exact identification identities.
//!
//! Theorems 1 and 2 hold block by block: `DITT_i = ET_i * LDT_i` and
//! `PITT_i(1) - PITT_i(0) = ET_i * (LPT_i(1, Co) - LPT_i(0, Co))` under
//! monotonicity and the exclusion restriction. The population left-hand side
//! is therefore the mean of the block ratios. The ratio of population means
//! (`pooled_lhs`) coincides with it only when `ET_i` is constant across
//! blocks; it is reported alongside for comparison.

use serde::{Deserialize, Serialize};

use super::{et, mean, BlockValues, ExactEngine, LocalMode};
use crate::error::{Error, Result};
use crate::mechanisms::Mechanism;
use crate::population::{inspect, ComplianceType, Population};

const REL_TOL: f64 = 1e-9;
const ABS_TOL: f64 = 1e-12;

/// Tolerance used to compare the two sides of an identity whose right-hand
/// side is `rhs`.
pub fn identity_tolerance(rhs: f64) -> f64 {
    (REL_TOL * rhs.abs()).max(ABS_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// `DITT(1,0,phi) / ET(1,0) = LDT(1,0,phi,Co)`.
    Thm1,
    /// `(PITT(1) - PITT(0)) / ET(1,0) = LPT(1,Co) - LPT(0,Co)`.
    Thm2,
    /// `PITT(0) = LPT(0)` under one-sided compliance.
    Thm3,
    /// `PITT(1) = LPT(1)` when everyone takes treatment under encouragement.
    Thm3Mirror,
}

impl Theorem {
    pub fn key(self) -> &'static str {
        match self {
            Theorem::Thm1 => "thm1",
            Theorem::Thm2 => "thm2",
            Theorem::Thm3 => "thm3",
            Theorem::Thm3Mirror => "thm3_mirror",
        }
    }
}

/// Which assumptions the population's data satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionStatus {
    pub monotone: bool,
    pub one_sided: bool,
    pub exclusion_ok: bool,
    /// Every individual has `D(1) = 1`.
    pub all_take_when_encouraged: bool,
}

impl AssumptionStatus {
    pub fn of(pop: &Population) -> Self {
        let found = inspect(pop).found;
        Self {
            monotone: found.monotone,
            one_sided: found.one_sided,
            exclusion_ok: found.exclusion_ok,
            all_take_when_encouraged: pop
                .blocks()
                .iter()
                .flat_map(|b| &b.individuals)
                .all(|ind| ind.pt.d1),
        }
    }

    pub fn hold_for(&self, theorem: Theorem) -> bool {
        self.exclusion_ok
            && match theorem {
                Theorem::Thm1 | Theorem::Thm2 => self.monotone,
                Theorem::Thm3 => self.one_sided,
                Theorem::Thm3Mirror => self.all_take_when_encouraged,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub theorem: Theorem,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub tolerance: f64,
    /// Population gap and every block gap within tolerance.
    pub holds: bool,
    pub block_lhs: Vec<f64>,
    pub block_rhs: Vec<f64>,
    pub max_block_gap: f64,
    /// Ratio of population means (Theorems 1 and 2 only).
    pub pooled_lhs: Option<f64>,
    pub pooled_gap: Option<f64>,
    pub assumptions: AssumptionStatus,
    pub assumptions_hold: bool,
    /// Set when the right-hand side had to be evaluated on an outcome that
    /// depends on encouragements.
    pub rhs_convention: Option<String>,
}

impl IdentityReport {
    fn build(
        theorem: Theorem,
        block_lhs: Vec<f64>,
        block_rhs: Vec<f64>,
        pooled_lhs: Option<f64>,
        assumptions: AssumptionStatus,
        mode: LocalMode,
    ) -> Self {
        let lhs = mean(&block_lhs);
        let rhs = mean(&block_rhs);
        let gap = lhs - rhs;
        let tolerance = identity_tolerance(rhs);
        let block_ok = block_lhs
            .iter()
            .zip(&block_rhs)
            .all(|(l, r)| (l - r).abs() <= identity_tolerance(*r));
        let max_block_gap = block_lhs
            .iter()
            .zip(&block_rhs)
            .map(|(l, r)| (l - r).abs())
            .fold(0.0, f64::max);
        Self {
            theorem,
            lhs,
            rhs,
            gap,
            tolerance,
            holds: gap.abs() <= tolerance && block_ok,
            block_lhs,
            block_rhs,
            max_block_gap,
            pooled_lhs,
            pooled_gap: pooled_lhs.map(|p| p - rhs),
            assumptions,
            assumptions_hold: assumptions.hold_for(theorem),
            rhs_convention: match mode {
                LocalMode::Strict => None,
                LocalMode::OwnEncouragementMatchesTreatment => Some(
                    "own encouragement set to the pinned treatment value; peers at natural encouragements"
                        .into(),
                ),
            },
        }
    }
}

fn local_mode(status: &AssumptionStatus) -> LocalMode {
    if status.exclusion_ok {
        LocalMode::Strict
    } else {
        LocalMode::OwnEncouragementMatchesTreatment
    }
}

fn nonzero_et(pop: &Population) -> Result<BlockValues> {
    let e = et(pop, true, false)?;
    if let Some(i) = e.blocks.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroEncouragementEffect { block: Some(i) });
    }
    Ok(e)
}

fn ratio(num: &BlockValues, den: &BlockValues) -> Vec<f64> {
    num.blocks.iter().zip(&den.blocks).map(|(n, d)| n / d).collect()
}

pub fn theorem_1_check(engine: &ExactEngine, pop: &Population, mech: &Mechanism) -> Result<IdentityReport> {
    let status = AssumptionStatus::of(pop);
    let mode = local_mode(&status);
    let e = nonzero_et(pop)?;
    let ditt = engine.ditt(pop, true, false, mech)?;
    let ldt = engine.ldt_mode(pop, true, false, mech, Some(ComplianceType::Complier), mode)?;
    Ok(IdentityReport::build(
        Theorem::Thm1,
        ratio(&ditt, &e),
        ldt.blocks,
        Some(ditt.population / e.population),
        status,
        mode,
    ))
}

pub fn theorem_2_check(
    engine: &ExactEngine,
    pop: &Population,
    mech_a: &Mechanism,
    mech_b: &Mechanism,
) -> Result<IdentityReport> {
    let status = AssumptionStatus::of(pop);
    let mode = local_mode(&status);
    let e = nonzero_et(pop)?;
    let pitt_diff = engine
        .pitt(pop, true, mech_a, mech_b)?
        .minus(&engine.pitt(pop, false, mech_a, mech_b)?);
    let co = Some(ComplianceType::Complier);
    let lpt_diff = engine
        .lpt_mode(pop, true, mech_a, mech_b, co, mode)?
        .minus(&engine.lpt_mode(pop, false, mech_a, mech_b, co, mode)?);
    Ok(IdentityReport::build(
        Theorem::Thm2,
        ratio(&pitt_diff, &e),
        lpt_diff.blocks,
        Some(pitt_diff.population / e.population),
        status,
        mode,
    ))
}

fn peer_identity(
    theorem: Theorem,
    z: bool,
    engine: &ExactEngine,
    pop: &Population,
    mech_a: &Mechanism,
    mech_b: &Mechanism,
) -> Result<IdentityReport> {
    let status = AssumptionStatus::of(pop);
    let mode = local_mode(&status);
    let pitt = engine.pitt(pop, z, mech_a, mech_b)?;
    let lpt = engine.lpt_mode(pop, z, mech_a, mech_b, None, mode)?;
    Ok(IdentityReport::build(theorem, pitt.blocks, lpt.blocks, None, status, mode))
}

pub fn theorem_3_check(
    engine: &ExactEngine,
    pop: &Population,
    mech_a: &Mechanism,
    mech_b: &Mechanism,
) -> Result<IdentityReport> {
    peer_identity(Theorem::Thm3, false, engine, pop, mech_a, mech_b)
}

pub fn theorem_3_mirror_check(
    engine: &ExactEngine,
    pop: &Population,
    mech_a: &Mechanism,
    mech_b: &Mechanism,
) -> Result<IdentityReport> {
    peer_identity(Theorem::Thm3Mirror, true, engine, pop, mech_a, mech_b)
}
