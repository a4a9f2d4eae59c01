//! Synthetic data-generating process for finite populations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::entry_bit;
use crate::population::{
    validate, Block, ComplianceType, Flags, Individual, OutcomeFunction, OutcomeTable, Population,
    StructuralOutcome, MAX_TABLE_BLOCK, MAX_Z_TABLE_BLOCK,
};

const COMPLIER_FLOOR_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockSize {
    Fixed(usize),
    Range { min: usize, max: usize },
}

/// Probability mass of each compliance stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrataMix {
    #[serde(default)]
    pub always_taker: f64,
    #[serde(default)]
    pub complier: f64,
    #[serde(default)]
    pub never_taker: f64,
    #[serde(default)]
    pub defier: f64,
}

impl StrataMix {
    fn weights(&self) -> [(ComplianceType, f64); 4] {
        [
            (ComplianceType::AlwaysTaker, self.always_taker),
            (ComplianceType::Complier, self.complier),
            (ComplianceType::NeverTaker, self.never_taker),
            (ComplianceType::Defier, self.defier),
        ]
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ComplianceType {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (t, w) in self.weights() {
            acc += w;
            if u < acc {
                return t;
            }
        }
        // u landed in the rounding slack above the cumulative sum
        self.weights()
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map(|(t, _)| *t)
            .unwrap_or(ComplianceType::Complier)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Structural,
    Table,
    /// Each individual independently gets a table with `table_fraction` probability.
    Mixed,
}

/// Outcome family. Every individual draws a frozen effect
/// `u ~ N(baseline_mean, baseline_sd)`; the outcome is
/// `u + direct*d + peer*k + interaction*d*k + peer_sq*k^2`, with tables adding
/// independent `N(0, entry_sd)` jitter per entry and `z_effect * z_own`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    #[serde(default)]
    pub representation: Representation,
    #[serde(default)]
    pub baseline_mean: f64,
    #[serde(default = "one")]
    pub baseline_sd: f64,
    #[serde(default)]
    pub direct: f64,
    #[serde(default)]
    pub peer: f64,
    #[serde(default)]
    pub interaction: f64,
    #[serde(default)]
    pub peer_sq: f64,
    #[serde(default)]
    pub entry_sd: f64,
    #[serde(default)]
    pub z_effect: f64,
    #[serde(default = "half")]
    pub table_fraction: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

impl Default for OutcomeModel {
    fn default() -> Self {
        Self {
            representation: Representation::Structural,
            baseline_mean: 0.0,
            baseline_sd: 1.0,
            direct: 0.0,
            peer: 0.0,
            interaction: 0.0,
            peer_sq: 0.0,
            entry_sd: 0.0,
            z_effect: 0.0,
            table_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub blocks: usize,
    pub block_size: BlockSize,
    pub strata: StrataMix,
    #[serde(default)]
    pub outcome: OutcomeModel,
    #[serde(default)]
    pub monotone: bool,
    #[serde(default)]
    pub one_sided: bool,
    #[serde(default = "yes")]
    pub exclusion: bool,
    #[serde(default = "yes")]
    pub complier_floor: bool,
}

impl DgpConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.blocks < 2 {
            return bad(format!("blocks must be at least 2, got {}", self.blocks));
        }
        let (lo, hi) = match self.block_size {
            BlockSize::Fixed(n) => (n, n),
            BlockSize::Range { min, max } => (min, max),
        };
        if lo == 0 || lo > hi {
            return bad(format!("invalid block size range [{lo}, {hi}]"));
        }
        let weights = self.strata.weights();
        if weights.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return bad("stratum masses must be finite and non-negative".into());
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("stratum masses sum to {total}, expected 1"));
        }
        if self.monotone && self.strata.defier > 0.0 {
            return bad("defier mass must be 0 when monotone is requested".into());
        }
        if self.one_sided && (self.strata.defier > 0.0 || self.strata.always_taker > 0.0) {
            return bad("always-taker and defier mass must be 0 when one_sided is requested".into());
        }
        let o = &self.outcome;
        let params = [
            o.baseline_mean,
            o.baseline_sd,
            o.direct,
            o.peer,
            o.interaction,
            o.peer_sq,
            o.entry_sd,
            o.z_effect,
            o.table_fraction,
        ];
        if params.iter().any(|v| !v.is_finite()) || o.baseline_sd < 0.0 || o.entry_sd < 0.0 {
            return bad("outcome parameters must be finite with non-negative sds".into());
        }
        if !(0.0..=1.0).contains(&o.table_fraction) {
            return bad("table_fraction must lie in [0, 1]".into());
        }
        let uses_tables = o.representation != Representation::Structural;
        if o.z_effect != 0.0 {
            if !uses_tables {
                return bad("z_effect requires table outcomes".into());
            }
            if self.exclusion {
                return bad("z_effect != 0 violates the exclusion restriction; set exclusion=false".into());
            }
        }
        if o.entry_sd > 0.0 && !uses_tables {
            return bad("entry_sd requires table outcomes".into());
        }
        if uses_tables {
            let limit = if o.z_effect != 0.0 { MAX_Z_TABLE_BLOCK } else { MAX_TABLE_BLOCK };
            if hi > limit {
                return bad(format!(
                    "table outcomes support blocks of at most {limit} units, block_size allows {hi}"
                ));
            }
        }
        Ok(())
    }
}

fn sample_outcome<R: Rng + ?Sized>(
    model: &OutcomeModel,
    j: usize,
    n: usize,
    rng: &mut R,
) -> Result<OutcomeFunction> {
    let noise = Normal::new(model.baseline_mean, model.baseline_sd)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let u = noise.sample(rng);
    let structural = StructuralOutcome {
        baseline: u,
        direct: model.direct,
        peer: model.peer,
        interaction: model.interaction,
        peer_sq: model.peer_sq,
    };
    let table = match model.representation {
        Representation::Structural => false,
        Representation::Table => true,
        Representation::Mixed => rng.random_bool(model.table_fraction),
    };
    if !table {
        return Ok(OutcomeFunction::Structural(structural));
    }
    let jitter = Normal::new(0.0, model.entry_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let own_bit = entry_bit(j, n);
    let base: Vec<f64> = (0..1usize << n)
        .map(|d| {
            let own = d & own_bit != 0;
            let k = d.count_ones() as usize - own as usize;
            let e = if model.entry_sd > 0.0 { jitter.sample(rng) } else { 0.0 };
            structural.value(own, k) + e
        })
        .collect();
    let values = if model.z_effect != 0.0 {
        base.iter()
            .flat_map(|&y| {
                (0..1usize << n).map(move |z| y + if z & own_bit != 0 { model.z_effect } else { 0.0 })
            })
            .collect()
    } else {
        base
    };
    Ok(OutcomeFunction::Table(OutcomeTable {
        values,
        z_dependent: model.z_effect != 0.0,
    }))
}

/// Builds a population from `cfg`; deterministic given the state of `rng`.
pub fn build_population<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<Population> {
    cfg.check()?;
    if cfg.complier_floor && cfg.strata.complier == 0.0 {
        return Err(Error::GenerationFailed(
            "complier_floor requires positive complier mass".into(),
        ));
    }
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for i in 0..cfg.blocks {
        let n = match cfg.block_size {
            BlockSize::Fixed(n) => n,
            BlockSize::Range { min, max } => rng.random_range(min..=max),
        };
        let mut strata = Vec::new();
        for attempt in 0.. {
            strata = (0..n).map(|_| cfg.strata.draw(rng)).collect();
            if !cfg.complier_floor || strata.contains(&ComplianceType::Complier) {
                break;
            }
            if attempt + 1 == COMPLIER_FLOOR_ATTEMPTS {
                return Err(Error::GenerationFailed(format!(
                    "block {i} drew no complier in {COMPLIER_FLOOR_ATTEMPTS} attempts"
                )));
            }
        }
        let individuals = strata
            .iter()
            .enumerate()
            .map(|(j, t)| {
                Ok(Individual {
                    pt: t.treatment(),
                    outcome: sample_outcome(&cfg.outcome, j, n, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        blocks.push(Block::new(individuals));
    }
    let flags = Flags {
        monotone: cfg.monotone,
        one_sided: cfg.one_sided,
        exclusion_ok: cfg.exclusion,
    };
    let pop = Population::new(blocks, flags)?;
    validate(&pop)?;
    Ok(pop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::inspect;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn base_cfg() -> DgpConfig {
        DgpConfig {
            blocks: 10,
            block_size: BlockSize::Fixed(5),
            strata: StrataMix {
                always_taker: 0.2,
                complier: 0.5,
                never_taker: 0.3,
                defier: 0.0,
            },
            outcome: OutcomeModel {
                direct: 2.0,
                peer: 0.5,
                ..Default::default()
            },
            monotone: true,
            one_sided: false,
            exclusion: true,
            complier_floor: true,
        }
    }

    #[test]
    fn builds_requested_population() {
        let pop = build_population(&base_cfg(), &mut stream(1)).unwrap();
        assert_eq!(pop.num_blocks(), 10);
        assert!(pop.blocks().iter().all(|b| b.len() == 5));
        let r = inspect(&pop);
        assert!(r.found.monotone && r.found.exclusion_ok);
        assert!(r.blocks.iter().all(|b| b.counts.complier >= 1));
        assert_eq!(pop, build_population(&base_cfg(), &mut stream(1)).unwrap());
    }

    #[test]
    fn defiers_with_monotone_rejected() {
        let mut cfg = base_cfg();
        cfg.strata.defier = 0.1;
        cfg.strata.never_taker = 0.2;
        assert!(matches!(
            build_population(&cfg, &mut stream(1)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn z_dependent_tables_clear_exclusion() {
        let mut cfg = base_cfg();
        cfg.outcome.representation = Representation::Table;
        cfg.outcome.z_effect = 0.7;
        assert!(matches!(build_population(&cfg, &mut stream(1)), Err(Error::InvalidConfig(_))));
        cfg.exclusion = false;
        let pop = build_population(&cfg, &mut stream(1)).unwrap();
        assert!(!pop.flags().exclusion_ok);
        assert!(!inspect(&pop).found.exclusion_ok);
    }

    #[test]
    fn complier_floor_unreachable() {
        let mut cfg = base_cfg();
        cfg.strata = StrataMix {
            always_taker: 0.5,
            complier: 0.0,
            never_taker: 0.5,
            defier: 0.0,
        };
        assert!(matches!(
            build_population(&cfg, &mut stream(1)),
            Err(Error::GenerationFailed(_))
        ));
        cfg.complier_floor = false;
        assert!(build_population(&cfg, &mut stream(1)).is_ok());
    }

    fn cfg_strategy() -> impl Strategy<Value = DgpConfig> {
        (
            2usize..8,
            1usize..7,
            0usize..4,
            prop::array::uniform4(0.05f64..1.0),
            0u8..3,
            prop::bool::ANY,
        )
            .prop_map(|(b, lo, extra, w, rep, ones)| {
                let total: f64 = w.iter().sum();
                let mut strata = StrataMix {
                    always_taker: w[0] / total,
                    complier: w[1] / total,
                    never_taker: w[2] / total,
                    defier: w[3] / total,
                };
                let (monotone, one_sided) = if ones {
                    strata.complier += strata.always_taker + strata.defier;
                    strata.always_taker = 0.0;
                    strata.defier = 0.0;
                    (true, true)
                } else {
                    (false, false)
                };
                DgpConfig {
                    blocks: b,
                    block_size: BlockSize::Range { min: lo, max: lo + extra },
                    strata,
                    outcome: OutcomeModel {
                        representation: [Representation::Structural, Representation::Table, Representation::Mixed][rep as usize],
                        direct: 1.0,
                        peer: 0.3,
                        ..Default::default()
                    },
                    monotone,
                    one_sided,
                    exclusion: true,
                    complier_floor: true,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn generated_populations_validate(cfg in cfg_strategy(), seed in any::<u64>()) {
            let pop = build_population(&cfg, &mut stream(seed)).unwrap();
            let r = validate(&pop).unwrap();
            prop_assert_eq!(r.counts.total(), pop.num_units());
            for b in &r.blocks {
                if r.found.monotone {
                    let frac = b.counts.complier as f64 / b.size as f64;
                    prop_assert!((b.encouragement_effect - frac).abs() < 1e-15);
                }
            }
        }
    }
}
