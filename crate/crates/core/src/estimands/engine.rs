//! Individual-level exact averages by enumeration or convolution.
//!
//! Every average is accumulated as `Y_ref + sum_w w * (Y - Y_ref)`, where
//! `Y_ref` is the outcome at the first configuration visited. When the
//! outcome does not react to peers, every difference is exactly zero and the
//! average is exactly `Y_ref`, so contrasts that vanish in theory vanish in
//! floating point too.

use crate::error::{Error, Result};
use crate::mechanisms::{entry_bit, Marginals, Mechanism, DEFAULT_ENUMERATION_CAP, MAX_ENUMERATION_CAP};
use crate::population::{Block, OutcomeFunction, Population, StructuralOutcome};

/// How individual averages are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Convolution for structural outcomes, enumeration for tables.
    #[default]
    Auto,
    /// Full enumeration of peer encouragements for every outcome form.
    Enumerate,
}

/// How the own encouragement is set when evaluating local averages of an
/// outcome that depends on encouragements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LocalMode {
    /// Refuse: local averages are only defined under the exclusion restriction.
    Strict,
    /// Own encouragement equals the pinned treatment; peers keep their
    /// natural encouragements.
    OwnEncouragementMatchesTreatment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactEngine {
    pub enumeration_cap: usize,
    pub strategy: Strategy,
}

impl Default for ExactEngine {
    fn default() -> Self {
        Self {
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            strategy: Strategy::Auto,
        }
    }
}

/// Which individual-level average to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Target {
    /// `Ybar_ij(D_ij(z), z, mech)`: own encouragement fixed at `z`, everyone
    /// at natural treatments.
    Itt(bool),
    /// `Ybar_ij(d, D_i(j), mech)`: own treatment pinned to `d`, peers natural.
    Local(bool, LocalMode),
}

impl ExactEngine {
    pub fn enumerating() -> Self {
        Self {
            strategy: Strategy::Enumerate,
            ..Self::default()
        }
    }

    fn check_cap(&self, block: usize, n: usize) -> Result<()> {
        let cap = self.enumeration_cap.min(MAX_ENUMERATION_CAP);
        if n > cap {
            Err(Error::EnumerationTooLarge {
                n,
                cap,
                block: Some(block),
            })
        } else {
            Ok(())
        }
    }

    /// Averages of `target` for every individual of block `i`.
    pub(crate) fn block_values(
        &self,
        pop: &Population,
        i: usize,
        target: Target,
        mech: &Mechanism,
    ) -> Result<Vec<f64>> {
        let block = pop.block(i);
        let n = block.len();
        let m = mech.marginals(i, n)?;
        let masks = block.treatment_masks();
        (0..n)
            .map(|j| {
                let outcome = &block.individuals[j].outcome;
                if let (Target::Local(_, LocalMode::Strict), true) =
                    (target, outcome.depends_on_encouragement(n))
                {
                    return Err(Error::ExclusionViolated { block: i, unit: j });
                }
                match (self.strategy, outcome) {
                    (Strategy::Auto, OutcomeFunction::Structural(s)) => {
                        Ok(convolve(block, j, &m, s, target))
                    }
                    _ => {
                        self.check_cap(i, n)?;
                        Ok(enumerate(block, masks, j, &m, outcome, target))
                    }
                }
            })
            .collect()
    }

    pub fn ybar_indiv_itt(
        &self,
        pop: &Population,
        i: usize,
        j: usize,
        z: bool,
        mech: &Mechanism,
    ) -> Result<f64> {
        self.single(pop, i, j, Target::Itt(z), mech)
    }

    pub fn ybar_indiv_local(
        &self,
        pop: &Population,
        i: usize,
        j: usize,
        d: bool,
        mech: &Mechanism,
    ) -> Result<f64> {
        self.single(pop, i, j, Target::Local(d, LocalMode::Strict), mech)
    }

    fn single(&self, pop: &Population, i: usize, j: usize, target: Target, mech: &Mechanism) -> Result<f64> {
        let block = pop.block(i);
        let n = block.len();
        let m = mech.marginals(i, n)?;
        let outcome = &block.individuals[j].outcome;
        if let (Target::Local(_, LocalMode::Strict), true) = (target, outcome.depends_on_encouragement(n)) {
            return Err(Error::ExclusionViolated { block: i, unit: j });
        }
        match (self.strategy, outcome) {
            (Strategy::Auto, OutcomeFunction::Structural(s)) => Ok(convolve(block, j, &m, s, target)),
            _ => {
                self.check_cap(i, n)?;
                Ok(enumerate(block, block.treatment_masks(), j, &m, outcome, target))
            }
        }
    }
}

/// Sums over every encouragement vector of the peers in lexicographic order.
fn enumerate(
    block: &Block,
    masks: (usize, usize),
    j: usize,
    m: &Marginals<'_>,
    outcome: &OutcomeFunction,
    target: Target,
) -> f64 {
    let n = block.len();
    let own = entry_bit(j, n);
    let own_pt = block.individuals[j].pt;
    let (own_z, own_d) = match target {
        Target::Itt(z) => (z, own_pt.at(z)),
        Target::Local(d, _) => (d, d),
    };
    let mut reference: Option<f64> = None;
    let mut acc = 0.0;
    for full in 0..1usize << n {
        if (full & own != 0) != own_z {
            continue;
        }
        let w = m.prob_mask_excluding(full, j);
        let natural = Block::treatment_mask(masks, full);
        let d_mask = (natural & !own) | if own_d { own } else { 0 };
        let y = outcome
            .eval_mask(j, n, d_mask, Some(full))
            .expect("encouragement mask always supplied");
        let r = *reference.get_or_insert(y);
        acc += w * (y - r);
    }
    reference.unwrap_or(0.0) + acc
}

/// Exact expectation over the Poisson-binomial count of treated peers.
fn convolve(block: &Block, j: usize, m: &Marginals<'_>, s: &StructuralOutcome, target: Target) -> f64 {
    let own_d = match target {
        Target::Itt(z) => block.individuals[j].pt.at(z),
        Target::Local(d, _) => d,
    };
    let pmf = treated_peer_pmf(block, j, m);
    let reference = s.value(own_d, 0);
    let acc: f64 = pmf
        .iter()
        .enumerate()
        .map(|(k, w)| w * (s.value(own_d, k) - reference))
        .sum();
    reference + acc
}

/// Distribution of the number of treated peers of unit `j`, where peer `k`
/// takes treatment with probability `P(D_k = 1)` under its own Bernoulli
/// encouragement.
pub fn treated_peer_pmf(block: &Block, j: usize, m: &Marginals<'_>) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(block.len());
    pmf.push(1.0);
    for (k, ind) in block.individuals.iter().enumerate() {
        if k == j {
            continue;
        }
        let q = ind.pt.uptake_prob(m.p(k));
        pmf.push(0.0);
        for c in (1..pmf.len()).rev() {
            pmf[c] = pmf[c] * (1.0 - q) + pmf[c - 1] * q;
        }
        pmf[0] *= 1.0 - q;
    }
    pmf
}
