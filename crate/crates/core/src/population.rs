//! Finite populations of blocks, individuals, potential treatments and
//! potential outcomes.
//!
//! Potential treatments are stored as `(d0, d1)` pairs, so an individual's
//! uptake can only depend on their own encouragement. Outcomes are either a
//! full table over the block's treatment vector (optionally also over its
//! encouragement vector) or a structural function of own treatment and the
//! number of treated peers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{entry_bit, AssignmentVector};

/// Largest block size accepted for a treatment-indexed outcome table.
pub const MAX_TABLE_BLOCK: usize = 16;
/// Largest block size accepted for a treatment-and-encouragement table.
pub const MAX_Z_TABLE_BLOCK: usize = 8;

mod bit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(serde::de::Error::custom(format!("expected 0 or 1, got {v}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PotentialTreatment {
    #[serde(with = "bit")]
    pub d0: bool,
    #[serde(with = "bit")]
    pub d1: bool,
}

impl PotentialTreatment {
    pub fn new(d0: bool, d1: bool) -> Self {
        Self { d0, d1 }
    }

    /// Treatment taken under own encouragement `z`.
    #[inline]
    pub fn at(&self, z: bool) -> bool {
        if z {
            self.d1
        } else {
            self.d0
        }
    }

    pub fn stratum(&self) -> ComplianceType {
        classify(*self)
    }

    /// `P(D = 1)` when own encouragement is Bernoulli(`p`).
    #[inline]
    pub fn uptake_prob(&self, p: f64) -> f64 {
        match (self.d0, self.d1) {
            (false, false) => 0.0,
            (true, true) => 1.0,
            (false, true) => p,
            (true, false) => 1.0 - p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceType {
    AlwaysTaker,
    Complier,
    NeverTaker,
    Defier,
}

impl ComplianceType {
    pub const ALL: [ComplianceType; 4] = [
        ComplianceType::AlwaysTaker,
        ComplianceType::Complier,
        ComplianceType::NeverTaker,
        ComplianceType::Defier,
    ];

    pub fn treatment(self) -> PotentialTreatment {
        match self {
            ComplianceType::AlwaysTaker => PotentialTreatment::new(true, true),
            ComplianceType::Complier => PotentialTreatment::new(false, true),
            ComplianceType::NeverTaker => PotentialTreatment::new(false, false),
            ComplianceType::Defier => PotentialTreatment::new(true, false),
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            ComplianceType::AlwaysTaker => "AT",
            ComplianceType::Complier => "Co",
            ComplianceType::NeverTaker => "NT",
            ComplianceType::Defier => "De",
        }
    }
}

pub fn classify(pt: PotentialTreatment) -> ComplianceType {
    match (pt.d0, pt.d1) {
        (true, true) => ComplianceType::AlwaysTaker,
        (false, true) => ComplianceType::Complier,
        (false, false) => ComplianceType::NeverTaker,
        (true, false) => ComplianceType::Defier,
    }
}

/// `y = baseline + direct*d + peer*k + interaction*d*k + peer_sq*k^2` where
/// `d` is own treatment and `k` the number of treated peers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralOutcome {
    pub baseline: f64,
    #[serde(default)]
    pub direct: f64,
    #[serde(default)]
    pub peer: f64,
    #[serde(default)]
    pub interaction: f64,
    #[serde(default)]
    pub peer_sq: f64,
}

impl StructuralOutcome {
    #[inline]
    pub fn value(&self, own: bool, treated_peers: usize) -> f64 {
        let d = own as u8 as f64;
        let k = treated_peers as f64;
        self.baseline + self.direct * d + self.peer * k + self.interaction * d * k + self.peer_sq * k * k
    }
}

/// Outcome values indexed by the lexicographic index of the block treatment
/// vector; when `z_dependent`, by `d_index * 2^n + z_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeTable {
    pub values: Vec<f64>,
    #[serde(default)]
    pub z_dependent: bool,
}

impl OutcomeTable {
    pub fn expected_len(n: usize, z_dependent: bool) -> usize {
        if z_dependent {
            1usize << (2 * n)
        } else {
            1usize << n
        }
    }

    /// Whether some treatment vector has outcomes that vary with encouragements.
    pub fn varies_with_encouragement(&self, n: usize) -> bool {
        if !self.z_dependent {
            return false;
        }
        let width = 1usize << n;
        self.values
            .chunks_exact(width)
            .any(|row| row.iter().any(|v| v.to_bits() != row[0].to_bits()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeFunction {
    Table(OutcomeTable),
    Structural(StructuralOutcome),
}

impl OutcomeFunction {
    pub fn constant(c: f64) -> Self {
        OutcomeFunction::Structural(StructuralOutcome {
            baseline: c,
            ..Default::default()
        })
    }

    /// Evaluates the outcome of unit `j` in a block of size `n` given the
    /// block treatment mask and, for encouragement-dependent tables, the
    /// encouragement mask.
    #[inline]
    pub(crate) fn eval_mask(
        &self,
        j: usize,
        n: usize,
        d_mask: usize,
        z_mask: Option<usize>,
    ) -> Option<f64> {
        match self {
            OutcomeFunction::Structural(s) => {
                let own = d_mask & entry_bit(j, n) != 0;
                let k = d_mask.count_ones() as usize - own as usize;
                Some(s.value(own, k))
            }
            OutcomeFunction::Table(t) if t.z_dependent => {
                z_mask.map(|z| t.values[(d_mask << n) | z])
            }
            OutcomeFunction::Table(t) => Some(t.values[d_mask]),
        }
    }

    pub fn depends_on_encouragement(&self, n: usize) -> bool {
        match self {
            OutcomeFunction::Table(t) => t.varies_with_encouragement(n),
            OutcomeFunction::Structural(_) => false,
        }
    }

    /// Whether evaluation needs an encouragement vector.
    pub fn needs_encouragement(&self) -> bool {
        matches!(self, OutcomeFunction::Table(t) if t.z_dependent)
    }

    pub fn is_table(&self) -> bool {
        matches!(self, OutcomeFunction::Table(_))
    }

    fn check(&self, n: usize) -> std::result::Result<(), String> {
        match self {
            OutcomeFunction::Structural(s) => {
                let all = [s.baseline, s.direct, s.peer, s.interaction, s.peer_sq];
                if all.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err("structural parameters must be finite".into())
                }
            }
            OutcomeFunction::Table(t) => {
                let limit = if t.z_dependent { MAX_Z_TABLE_BLOCK } else { MAX_TABLE_BLOCK };
                if n > limit {
                    return Err(format!(
                        "outcome tables support blocks of at most {limit} units, block has {n}"
                    ));
                }
                let expected = OutcomeTable::expected_len(n, t.z_dependent);
                if t.values.len() != expected {
                    return Err(format!(
                        "outcome table has {} entries, expected {expected}",
                        t.values.len()
                    ));
                }
                if t.values.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err("outcome table entries must be finite".into())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Individual {
    #[serde(flatten)]
    pub pt: PotentialTreatment,
    pub outcome: OutcomeFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub individuals: Vec<Individual>,
}

impl Block {
    pub fn new(individuals: Vec<Individual>) -> Self {
        Self { individuals }
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Mask of units with `d1 = 1` and of units with `d0 = 1`.
    pub(crate) fn treatment_masks(&self) -> (usize, usize) {
        let n = self.len();
        self.individuals
            .iter()
            .enumerate()
            .fold((0, 0), |(m1, m0), (j, ind)| {
                let b = entry_bit(j, n);
                (
                    m1 | if ind.pt.d1 { b } else { 0 },
                    m0 | if ind.pt.d0 { b } else { 0 },
                )
            })
    }

    /// Realized treatment mask under encouragement mask `z_mask`.
    #[inline]
    pub(crate) fn treatment_mask(masks: (usize, usize), z_mask: usize) -> usize {
        (z_mask & masks.0) | (!z_mask & masks.1)
    }

    pub fn counts(&self) -> StratumCounts {
        let mut c = StratumCounts::default();
        for ind in &self.individuals {
            c.add(ind.pt.stratum());
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    pub monotone: bool,
    pub one_sided: bool,
    pub exclusion_ok: bool,
}

/// An immutable finite population of at least two non-empty blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPopulation")]
pub struct Population {
    flags: Flags,
    blocks: Vec<Block>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPopulation {
    flags: Flags,
    blocks: Vec<Block>,
}

impl TryFrom<RawPopulation> for Population {
    type Error = Error;

    fn try_from(raw: RawPopulation) -> Result<Self> {
        Population::new(raw.blocks, raw.flags)
    }
}

impl Population {
    /// Checks structural invariants; flag consistency is checked by [`validate`].
    pub fn new(blocks: Vec<Block>, flags: Flags) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::InvalidPopulation(format!(
                "a population needs at least 2 blocks, got {}",
                blocks.len()
            )));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidPopulation(format!("block {i} is empty")));
            }
            if b.len() >= usize::BITS as usize - 1 {
                return Err(Error::InvalidPopulation(format!("block {i} is too large")));
            }
            for (j, ind) in b.individuals.iter().enumerate() {
                ind.outcome
                    .check(b.len())
                    .map_err(|e| Error::InvalidPopulation(format!("block {i}, unit {j}: {e}")))?;
            }
        }
        Ok(Self { flags, blocks })
    }

    pub fn flags(&self) -> Flags {
        self.flags
    }

    pub fn with_flags(mut self, flags: Flags) -> Self {
        self.flags = flags;
        self
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Block::len).collect()
    }

    pub fn num_units(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    pub fn individual(&self, i: usize, j: usize) -> &Individual {
        &self.blocks[i].individuals[j]
    }

    pub fn counts(&self) -> StratumCounts {
        self.blocks.iter().fold(StratumCounts::default(), |mut acc, b| {
            acc.merge(&b.counts());
            acc
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Potential outcome `Y_ij(d, z)`.
pub fn outcome(
    pop: &Population,
    i: usize,
    j: usize,
    d: &AssignmentVector,
    z: Option<&AssignmentVector>,
) -> Result<f64> {
    let n = pop.block(i).len();
    if d.len() != n {
        return Err(Error::ArityMismatch {
            expected: n,
            found: d.len(),
        });
    }
    if let Some(z) = z {
        if z.len() != n {
            return Err(Error::ArityMismatch {
                expected: n,
                found: z.len(),
            });
        }
    }
    pop.individual(i, j)
        .outcome
        .eval_mask(j, n, d.index(), z.map(AssignmentVector::index))
        .ok_or(Error::MissingTableEntry { block: i, unit: j })
}

/// `D_ij(z)`.
pub fn potential_treatment(pop: &Population, i: usize, j: usize, z: bool) -> bool {
    pop.individual(i, j).pt.at(z)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCounts {
    pub always_taker: usize,
    pub complier: usize,
    pub never_taker: usize,
    pub defier: usize,
}

impl StratumCounts {
    pub fn add(&mut self, t: ComplianceType) {
        *self.get_mut(t) += 1;
    }

    pub fn get(&self, t: ComplianceType) -> usize {
        match t {
            ComplianceType::AlwaysTaker => self.always_taker,
            ComplianceType::Complier => self.complier,
            ComplianceType::NeverTaker => self.never_taker,
            ComplianceType::Defier => self.defier,
        }
    }

    fn get_mut(&mut self, t: ComplianceType) -> &mut usize {
        match t {
            ComplianceType::AlwaysTaker => &mut self.always_taker,
            ComplianceType::Complier => &mut self.complier,
            ComplianceType::NeverTaker => &mut self.never_taker,
            ComplianceType::Defier => &mut self.defier,
        }
    }

    pub fn merge(&mut self, other: &StratumCounts) {
        for t in ComplianceType::ALL {
            *self.get_mut(t) += other.get(t);
        }
    }

    pub fn total(&self) -> usize {
        self.always_taker + self.complier + self.never_taker + self.defier
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockValidation {
    pub block: usize,
    pub size: usize,
    pub counts: StratumCounts,
    /// `(1/n_i) * sum_j (d1 - d0)`.
    pub encouragement_effect: f64,
    pub monotone: bool,
    pub one_sided: bool,
    pub exclusion_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationWarning {
    EncouragementIneffective { block: usize },
    NoCompliers { block: usize },
}

/// What the data actually satisfy, alongside the declared flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub declared: Flags,
    pub found: Flags,
    pub num_blocks: usize,
    pub num_units: usize,
    pub counts: StratumCounts,
    pub blocks: Vec<BlockValidation>,
    pub warnings: Vec<ValidationWarning>,
}

impl ValidationReport {
    /// Declared flags that the data contradict.
    pub fn mismatches(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.declared.monotone && !self.found.monotone {
            out.push("monotone");
        }
        if self.declared.one_sided && !self.found.one_sided {
            out.push("one_sided");
        }
        if self.declared.exclusion_ok && !self.found.exclusion_ok {
            out.push("exclusion_ok");
        }
        out
    }

    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let c = &self.counts;
        let _ = writeln!(
            s,
            "blocks: {}  units: {}  strata: AT={} Co={} NT={} De={}",
            self.num_blocks, self.num_units, c.always_taker, c.complier, c.never_taker, c.defier
        );
        let _ = writeln!(
            s,
            "flags (declared/found): monotone {}/{}  one_sided {}/{}  exclusion_ok {}/{}",
            self.declared.monotone,
            self.found.monotone,
            self.declared.one_sided,
            self.found.one_sided,
            self.declared.exclusion_ok,
            self.found.exclusion_ok
        );
        let _ = writeln!(s, "{:>6} {:>5} {:>4} {:>4} {:>4} {:>4} {:>10}", "block", "n", "AT", "Co", "NT", "De", "ET_i");
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "{:>6} {:>5} {:>4} {:>4} {:>4} {:>4} {:>10.6}",
                b.block,
                b.size,
                b.counts.always_taker,
                b.counts.complier,
                b.counts.never_taker,
                b.counts.defier,
                b.encouragement_effect
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w:?}");
        }
        s
    }
}

/// Computes what the population's data satisfy without enforcing flags.
pub fn inspect(pop: &Population) -> ValidationReport {
    let mut blocks = Vec::with_capacity(pop.num_blocks());
    let mut warnings = Vec::new();
    let mut counts = StratumCounts::default();
    for (i, b) in pop.blocks().iter().enumerate() {
        let c = b.counts();
        counts.merge(&c);
        let n = b.len();
        let effect = b
            .individuals
            .iter()
            .map(|ind| ind.pt.d1 as i64 - ind.pt.d0 as i64)
            .sum::<i64>() as f64
            / n as f64;
        if effect == 0.0 {
            warnings.push(ValidationWarning::EncouragementIneffective { block: i });
        }
        if c.complier == 0 {
            warnings.push(ValidationWarning::NoCompliers { block: i });
        }
        blocks.push(BlockValidation {
            block: i,
            size: n,
            counts: c,
            encouragement_effect: effect,
            monotone: c.defier == 0,
            one_sided: b.individuals.iter().all(|ind| !ind.pt.d0),
            exclusion_ok: b
                .individuals
                .iter()
                .all(|ind| !ind.outcome.depends_on_encouragement(n)),
        });
    }
    let found = Flags {
        monotone: blocks.iter().all(|b| b.monotone),
        one_sided: blocks.iter().all(|b| b.one_sided),
        exclusion_ok: blocks.iter().all(|b| b.exclusion_ok),
    };
    ValidationReport {
        declared: pop.flags(),
        found,
        num_blocks: pop.num_blocks(),
        num_units: pop.num_units(),
        counts,
        blocks,
        warnings,
    }
}

/// Like [`inspect`], but fails when a declared flag is contradicted.
pub fn validate(pop: &Population) -> Result<ValidationReport> {
    let report = inspect(pop);
    let bad = report.mismatches();
    if bad.is_empty() {
        Ok(report)
    } else {
        Err(Error::FlagMismatch(format!(
            "declared {} but the data violate it",
            bad.join(", ")
        )))
    }
}
