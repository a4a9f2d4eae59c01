//! Two-stage peer encouragement design: `K` of `B` blocks receive mechanism
//! `phi`, the rest `psi`; encouragements are then drawn independently within
//! each block and realized treatments and outcomes are read off the
//! population's potential-outcome functions.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::report::finish_csv;
use crate::mechanisms::{entry_bit, sample_block_assignment, AssignmentVector, Mechanism};
use crate::population::{Block, Population};
use crate::rng::DesignStreams;

/// Largest block size handled by [`design_prob_check`].
pub const MAX_FREQUENCY_BLOCK: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// `S_i = 1`.
    Phi,
    /// `S_i = 0`.
    Psi,
}

impl Arm {
    pub fn from_s(s: bool) -> Self {
        if s {
            Arm::Phi
        } else {
            Arm::Psi
        }
    }

    pub fn s(self) -> bool {
        self == Arm::Phi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// `phi`, assigned to `K` blocks.
    pub mech_a: Mechanism,
    /// `psi`, assigned to the remaining blocks.
    pub mech_b: Mechanism,
    pub k: usize,
    pub seed: u64,
}

impl DesignConfig {
    pub fn new(mech_a: Mechanism, mech_b: Mechanism, k: usize, seed: u64) -> Self {
        Self {
            mech_a,
            mech_b,
            k,
            seed,
        }
    }

    pub fn mechanism(&self, arm: Arm) -> &Mechanism {
        match arm {
            Arm::Phi => &self.mech_a,
            Arm::Psi => &self.mech_b,
        }
    }

    /// Checks `1 <= K <= B - 1`, mechanism arities against every block and
    /// that the mechanisms differ for at least one individual.
    pub fn check(&self, pop: &Population) -> Result<()> {
        let b = pop.num_blocks();
        if self.k == 0 || self.k >= b {
            return Err(Error::InvalidDesign(format!(
                "K = {} must lie in 1..={} for B = {b} blocks",
                self.k,
                b - 1
            )));
        }
        let mut differ = false;
        for (i, blk) in pop.blocks().iter().enumerate() {
            let a = self.mech_a.marginals(i, blk.len())?;
            let m = self.mech_b.marginals(i, blk.len())?;
            differ |= a.as_slice() != m.as_slice();
        }
        if !differ {
            return Err(Error::InvalidDesign(format!(
                "mechanisms '{}' and '{}' assign identical probabilities to every individual",
                self.mech_a.name(),
                self.mech_b.name()
            )));
        }
        Ok(())
    }
}

/// Realized data of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockData {
    /// `S_i`: true when the block received `phi`.
    pub s: bool,
    pub z: Vec<bool>,
    pub d: Vec<bool>,
    pub y: Vec<f64>,
}

impl BlockData {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn arm(&self) -> Arm {
        Arm::from_s(self.s)
    }
}

/// Realized `(S_i, Z_ij, D_ij, Y_ij)` from one run of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentData {
    pub blocks: Vec<BlockData>,
}

const CSV_HEADER: [&str; 6] = ["block_id", "S", "unit_id", "Z", "D", "Y"];

impl ExperimentData {
    pub fn new(blocks: Vec<BlockData>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidData("no blocks".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidData(format!("block {i} has no units")));
            }
            if b.d.len() != b.len() || b.y.len() != b.len() {
                return Err(Error::InvalidData(format!(
                    "block {i}: Z, D and Y columns differ in length"
                )));
            }
            if let Some(j) = b.y.iter().position(|y| !y.is_finite()) {
                return Err(Error::InvalidData(format!("block {i}, unit {j}: outcome is not finite")));
            }
        }
        Ok(Self { blocks })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(BlockData::len).collect()
    }

    /// Number of blocks in `arm`.
    pub fn arm_size(&self, arm: Arm) -> usize {
        self.blocks.iter().filter(|b| b.arm() == arm).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for (i, b) in self.blocks.iter().enumerate() {
            for j in 0..b.len() {
                w.write_record([
                    i.to_string(),
                    (b.s as u8).to_string(),
                    j.to_string(),
                    (b.z[j] as u8).to_string(),
                    (b.d[j] as u8).to_string(),
                    b.y[j].to_string(),
                ])?;
            }
        }
        finish_csv(w)
    }

    /// Parses the CSV schema written by [`ExperimentData::to_csv`]. Blocks
    /// must be numbered `0..B` and units `0..n_i`; rows may come in any order.
    pub fn from_csv(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            block_id: usize,
            #[serde(rename = "S")]
            s: u8,
            unit_id: usize,
            #[serde(rename = "Z")]
            z: u8,
            #[serde(rename = "D")]
            d: u8,
            #[serde(rename = "Y")]
            y: f64,
        }
        let bit = |v: u8, col: &str, line: usize| -> Result<bool> {
            match v {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::InvalidData(format!("line {line}: {col} must be 0 or 1, got {v}"))),
            }
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if let Some(missing) = CSV_HEADER.iter().find(|h| !headers.iter().any(|x| x == **h)) {
            return Err(Error::InvalidData(format!("missing column '{missing}'")));
        }
        let mut cells: Vec<Vec<Option<(bool, bool, f64)>>> = Vec::new();
        let mut arms: Vec<Option<bool>> = Vec::new();
        for (k, row) in rdr.deserialize::<Row>().enumerate() {
            let line = k + 2;
            let r = row?;
            let (s, z, d) = (bit(r.s, "S", line)?, bit(r.z, "Z", line)?, bit(r.d, "D", line)?);
            if r.block_id >= cells.len() {
                cells.resize(r.block_id + 1, Vec::new());
                arms.resize(r.block_id + 1, None);
            }
            match arms[r.block_id] {
                Some(prev) if prev != s => {
                    return Err(Error::InvalidData(format!(
                        "line {line}: block {} has inconsistent S",
                        r.block_id
                    )))
                }
                _ => arms[r.block_id] = Some(s),
            }
            let units = &mut cells[r.block_id];
            if r.unit_id >= units.len() {
                units.resize(r.unit_id + 1, None);
            }
            if units[r.unit_id].replace((z, d, r.y)).is_some() {
                return Err(Error::InvalidData(format!(
                    "line {line}: duplicate row for block {}, unit {}",
                    r.block_id, r.unit_id
                )));
            }
        }
        let blocks = cells
            .into_iter()
            .zip(arms)
            .enumerate()
            .map(|(i, (units, s))| {
                let s = s.ok_or_else(|| Error::InvalidData(format!("block {i} has no rows")))?;
                let mut b = BlockData {
                    s,
                    z: Vec::with_capacity(units.len()),
                    d: Vec::with_capacity(units.len()),
                    y: Vec::with_capacity(units.len()),
                };
                for (j, u) in units.into_iter().enumerate() {
                    let (z, d, y) =
                        u.ok_or_else(|| Error::InvalidData(format!("block {i} is missing unit {j}")))?;
                    b.z.push(z);
                    b.d.push(d);
                    b.y.push(y);
                }
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }
}

fn realize_block(block: &Block, i: usize, s: bool, z: AssignmentVector) -> Result<BlockData> {
    let n = block.len();
    let z_mask = z.index();
    let d_mask = Block::treatment_mask(block.treatment_masks(), z_mask);
    let y = block
        .individuals
        .iter()
        .enumerate()
        .map(|(j, ind)| {
            ind.outcome
                .eval_mask(j, n, d_mask, Some(z_mask))
                .ok_or(Error::MissingTableEntry { block: i, unit: j })
        })
        .collect::<Result<Vec<_>>>()?;
    let d = (0..n).map(|j| d_mask & entry_bit(j, n) != 0).collect();
    Ok(BlockData {
        s,
        z: z.bits().to_vec(),
        d,
        y,
    })
}

/// Block arms for one replication: a uniformly random `K`-subset gets `phi`.
pub fn assign_arms(num_blocks: usize, k: usize, streams: &DesignStreams) -> Vec<bool> {
    let mut rng = streams.arm_stream();
    let mut s = vec![false; num_blocks];
    for i in sample(&mut rng, num_blocks, k) {
        s[i] = true;
    }
    s
}

/// Runs the design with explicit replication streams.
pub fn run_design_with(pop: &Population, cfg: &DesignConfig, streams: &DesignStreams) -> Result<ExperimentData> {
    cfg.check(pop)?;
    let arms = assign_arms(pop.num_blocks(), cfg.k, streams);
    let blocks = pop
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, blk)| {
            let mech = cfg.mechanism(Arm::from_s(arms[i]));
            let z = sample_block_assignment(mech, i, blk.len(), &mut streams.block_stream(i))?;
            realize_block(blk, i, arms[i], z)
        })
        .collect::<Result<Vec<_>>>()?;
    ExperimentData::new(blocks)
}

/// Replication `replicate` of the design under `cfg.seed`.
pub fn run_design_replicate(pop: &Population, cfg: &DesignConfig, replicate: u64) -> Result<ExperimentData> {
    run_design_with(pop, cfg, &DesignStreams::new(cfg.seed, replicate))
}

/// One run of the design (replication 0 of `cfg.seed`).
pub fn run_design(pop: &Population, cfg: &DesignConfig) -> Result<ExperimentData> {
    run_design_replicate(pop, cfg, 0)
}

/// Observed versus design frequencies of every encouragement vector of one
/// block, conditional on the block's arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentFrequencies {
    pub block: usize,
    pub arm: Arm,
    pub size: usize,
    /// Replications in which the block received `arm`.
    pub runs: usize,
    /// Indexed by [`AssignmentVector::index`].
    pub counts: Vec<u64>,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub replications: usize,
    pub k: usize,
    pub num_blocks: usize,
    /// Empirical `P(S_i = 1)` per block.
    pub arm_rate: Vec<f64>,
    /// Blocks larger than [`MAX_FREQUENCY_BLOCK`] are skipped.
    pub skipped_blocks: Vec<usize>,
    pub assignments: Vec<AssignmentFrequencies>,
}

impl FrequencyReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "replications: {}  K = {} of B = {}", self.replications, self.k, self.num_blocks);
        for f in &self.assignments {
            let _ = writeln!(
                s,
                "block {:>3} {:?}: runs {:>7}  chi2 {:>10.4} on {} df",
                f.block, f.arm, f.runs, f.chi_square, f.degrees_of_freedom
            );
        }
        s
    }
}

/// Tallies realized encouragement vectors over `replications` runs of the
/// design and compares them with the mechanism probabilities.
pub fn design_prob_check(cfg: &DesignConfig, pop: &Population, replications: usize) -> Result<FrequencyReport> {
    cfg.check(pop)?;
    let b = pop.num_blocks();
    let small: Vec<usize> = (0..b).filter(|&i| pop.block(i).len() <= MAX_FREQUENCY_BLOCK).collect();
    let draws = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let streams = DesignStreams::new(cfg.seed, r);
            let arms = assign_arms(b, cfg.k, &streams);
            let z = small
                .iter()
                .map(|&i| {
                    let mech = cfg.mechanism(Arm::from_s(arms[i]));
                    let z = sample_block_assignment(mech, i, pop.block(i).len(), &mut streams.block_stream(i))?;
                    Ok(z.index())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((arms, z))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut arm_hits = vec![0usize; b];
    let mut tallies: Vec<[Vec<u64>; 2]> = small
        .iter()
        .map(|&i| {
            let cells = 1usize << pop.block(i).len();
            [vec![0; cells], vec![0; cells]]
        })
        .collect();
    for (arms, z) in &draws {
        for (i, &s) in arms.iter().enumerate() {
            arm_hits[i] += s as usize;
        }
        for (k, &i) in small.iter().enumerate() {
            tallies[k][arms[i] as usize][z[k]] += 1;
        }
    }

    let mut assignments = Vec::new();
    for (k, &i) in small.iter().enumerate() {
        let n = pop.block(i).len();
        for arm in [Arm::Phi, Arm::Psi] {
            let counts = tallies[k][arm.s() as usize].clone();
            let runs: u64 = counts.iter().sum();
            if runs == 0 {
                continue;
            }
            let marg = cfg.mechanism(arm).marginals(i, n)?;
            let expected: Vec<f64> = (0..counts.len())
                .map(|idx| marg.prob(&AssignmentVector::from_index(idx, n)))
                .collect();
            let observed: Vec<f64> = counts.iter().map(|&c| c as f64 / runs as f64).collect();
            let chi_square = counts
                .iter()
                .zip(&expected)
                .map(|(&c, &p)| {
                    let e = p * runs as f64;
                    (c as f64 - e).powi(2) / e
                })
                .sum();
            assignments.push(AssignmentFrequencies {
                block: i,
                arm,
                size: n,
                runs: runs as usize,
                counts,
                observed,
                expected,
                chi_square,
                degrees_of_freedom: (1usize << n) - 1,
            });
        }
    }

    Ok(FrequencyReport {
        replications,
        k: cfg.k,
        num_blocks: b,
        arm_rate: arm_hits.iter().map(|&h| h as f64 / replications.max(1) as f64).collect(),
        skipped_blocks: (0..b).filter(|i| !small.contains(i)).collect(),
        assignments,
    })
}
