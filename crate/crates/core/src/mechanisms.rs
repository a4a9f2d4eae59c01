//! Independent-Bernoulli encouragement mechanisms and assignment vectors.
//!
//! A mechanism assigns each individual of a block an encouragement
//! probability strictly inside (0, 1); the probability of a whole assignment
//! vector is the product of the per-individual Bernoulli factors.
//!
//! Assignment vectors are indexed lexicographically: entry 0 is the most
//! significant bit, so `index = sum_j z_j * 2^(n-1-j)` and enumerating
//! `0..2^n` visits the vectors in lexicographic order.

use std::borrow::Cow;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest block size for which assignments are enumerated by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Hard ceiling on any enumeration, independent of configuration.
pub const MAX_ENUMERATION_CAP: usize = 30;

/// Bit of entry `j` in the lexicographic index of a length-`n` vector.
#[inline]
pub fn entry_bit(j: usize, n: usize) -> usize {
    1usize << (n - 1 - j)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssignmentVector(Vec<bool>);

impl AssignmentVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn from_index(index: usize, n: usize) -> Self {
        Self((0..n).map(|j| index & entry_bit(j, n) != 0).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    /// Lexicographic index of this vector.
    pub fn index(&self) -> usize {
        let n = self.0.len();
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0, |acc, (j, _)| acc | entry_bit(j, n))
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for AssignmentVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (j, &b) in self.0.iter().enumerate() {
            if j > 0 {
                f.write_str(",")?;
            }
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

impl Serialize for AssignmentVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|&b| b as u8))
    }
}

impl<'de> Deserialize<'de> for AssignmentVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "assignment entries must be 0 or 1, got {other}"
                ))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Self)
    }
}

/// How a mechanism stores its encouragement probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum Probs {
    /// One probability broadcast to every individual of every block.
    Scalar(f64),
    /// One probability per individual; usable with blocks of exactly this size.
    PerUnit(Vec<f64>),
    /// One probability vector per block of a specific population.
    PerBlock(Vec<Vec<f64>>),
}

/// A named independent-Bernoulli encouragement law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MechanismSpec", into = "MechanismSpec")]
pub struct Mechanism {
    name: String,
    probs: Probs,
}

fn check_prob(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidMechanism(format!(
            "encouragement probability {p} is not strictly inside (0, 1)"
        )))
    }
}

impl Mechanism {
    pub fn scalar(name: impl Into<String>, p: f64) -> Result<Self> {
        check_prob(p)?;
        Ok(Self {
            name: name.into(),
            probs: Probs::Scalar(p),
        })
    }

    pub fn per_unit(name: impl Into<String>, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidMechanism("empty probability vector".into()));
        }
        probs.iter().try_for_each(|&p| check_prob(p))?;
        Ok(Self {
            name: name.into(),
            probs: Probs::PerUnit(probs),
        })
    }

    pub fn per_block(name: impl Into<String>, probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(Vec::is_empty) {
            return Err(Error::InvalidMechanism(
                "block probability lists must be non-empty".into(),
            ));
        }
        probs.iter().flatten().try_for_each(|&p| check_prob(p))?;
        Ok(Self {
            name: name.into(),
            probs: Probs::PerBlock(probs),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn probs(&self) -> &Probs {
        &self.probs
    }

    /// Per-individual marginals `P(Z_ij = 1)` for block `block` of size `n`.
    pub fn marginals(&self, block: usize, n: usize) -> Result<Marginals<'_>> {
        match &self.probs {
            Probs::Scalar(p) => Ok(Marginals(Cow::Owned(vec![*p; n]))),
            Probs::PerUnit(v) => {
                if v.len() == n {
                    Ok(Marginals(Cow::Borrowed(v)))
                } else {
                    Err(Error::ArityMismatch {
                        expected: n,
                        found: v.len(),
                    })
                }
            }
            Probs::PerBlock(blocks) => {
                let v = blocks.get(block).ok_or_else(|| {
                    Error::InvalidMechanism(format!(
                        "mechanism '{}' defines {} blocks, block {block} requested",
                        self.name,
                        blocks.len()
                    ))
                })?;
                if v.len() == n {
                    Ok(Marginals(Cow::Borrowed(v)))
                } else {
                    Err(Error::ArityMismatch {
                        expected: n,
                        found: v.len(),
                    })
                }
            }
        }
    }

    /// Probability of assignment vector `z` for a mechanism that is not
    /// block-specific.
    pub fn prob(&self, z: &AssignmentVector) -> Result<f64> {
        if matches!(self.probs, Probs::PerBlock(_)) {
            return Err(Error::InvalidMechanism(format!(
                "mechanism '{}' is block-specific; use block_prob",
                self.name
            )));
        }
        Ok(self.marginals(0, z.len())?.prob(z))
    }

    pub fn block_prob(&self, block: usize, z: &AssignmentVector) -> Result<f64> {
        Ok(self.marginals(block, z.len())?.prob(z))
    }
}

/// Serialized form: `{ name, p }`, `{ name, probs: [...] }` or
/// `{ name, block_probs: [[...], ...] }`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MechanismSpec {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block_probs: Option<Vec<Vec<f64>>>,
}

impl TryFrom<MechanismSpec> for Mechanism {
    type Error = Error;

    fn try_from(spec: MechanismSpec) -> Result<Self> {
        match (spec.p, spec.probs, spec.block_probs) {
            (Some(p), None, None) => Mechanism::scalar(spec.name, p),
            (None, Some(v), None) => Mechanism::per_unit(spec.name, v),
            (None, None, Some(b)) => Mechanism::per_block(spec.name, b),
            _ => Err(Error::InvalidMechanism(format!(
                "mechanism '{}' must set exactly one of p, probs, block_probs",
                spec.name
            ))),
        }
    }
}

impl From<Mechanism> for MechanismSpec {
    fn from(m: Mechanism) -> Self {
        let (p, probs, block_probs) = match m.probs {
            Probs::Scalar(p) => (Some(p), None, None),
            Probs::PerUnit(v) => (None, Some(v), None),
            Probs::PerBlock(b) => (None, None, Some(b)),
        };
        MechanismSpec {
            name: m.name,
            p,
            probs,
            block_probs,
        }
    }
}

/// Encouragement marginals of one block under one mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals<'a>(Cow<'a, [f64]>);

impl Marginals<'_> {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `P(Z_j = 1)`.
    pub fn p(&self, j: usize) -> f64 {
        self.0[j]
    }

    /// `P(Z_j = z)`.
    pub fn p_of(&self, j: usize, z: bool) -> f64 {
        if z {
            self.0[j]
        } else {
            1.0 - self.0[j]
        }
    }

    pub fn prob(&self, z: &AssignmentVector) -> f64 {
        assert_eq!(z.len(), self.len(), "assignment length must match marginals");
        z.bits()
            .iter()
            .enumerate()
            .fold(1.0, |acc, (j, &b)| acc * self.p_of(j, b))
    }

    /// Probability of the vector with lexicographic index `mask`, restricted
    /// to the entries other than `skip`.
    pub fn prob_mask_excluding(&self, mask: usize, skip: usize) -> f64 {
        let n = self.len();
        let mut acc = 1.0;
        for j in 0..n {
            if j != skip {
                acc *= self.p_of(j, mask & entry_bit(j, n) != 0);
            }
        }
        acc
    }
}

/// Every binary vector of length `n` in lexicographic order.
pub fn enumerate_assignments(n: usize) -> Result<Vec<AssignmentVector>> {
    enumerate_assignments_capped(n, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_assignments_capped(n: usize, cap: usize) -> Result<Vec<AssignmentVector>> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "assignment length must be at least 1".into(),
        ));
    }
    let cap = cap.min(MAX_ENUMERATION_CAP);
    if n > cap {
        return Err(Error::EnumerationTooLarge { n, cap, block: None });
    }
    Ok((0..1usize << n)
        .map(|i| AssignmentVector::from_index(i, n))
        .collect())
}

/// `P_mech(Z = z)` as a product of independent Bernoulli factors.
pub fn mech_prob(mech: &Mechanism, z: &AssignmentVector) -> Result<f64> {
    mech.prob(z)
}

/// Draws one encouragement vector of length `n` with independent entries.
pub fn sample_assignment<R: Rng + ?Sized>(
    mech: &Mechanism,
    n: usize,
    rng: &mut R,
) -> Result<AssignmentVector> {
    sample_block_assignment(mech, 0, n, rng)
}

pub fn sample_block_assignment<R: Rng + ?Sized>(
    mech: &Mechanism,
    block: usize,
    n: usize,
    rng: &mut R,
) -> Result<AssignmentVector> {
    let m = mech.marginals(block, n)?;
    Ok(AssignmentVector::new(
        (0..n).map(|j| rng.random_bool(m.p(j))).collect(),
    ))
}
