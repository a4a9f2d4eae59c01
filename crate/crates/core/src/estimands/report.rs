use std::fmt::Write as _;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use super::{et, BlockValues, ExactEngine, Strategy};
use crate::error::{Error, Result};
use crate::mechanisms::{Mechanism, MAX_ENUMERATION_CAP};
use crate::population::{ComplianceType, Population};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimandEntry {
    pub family: &'static str,
    pub label: String,
    pub values: BlockValues,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UndefinedEstimand {
    pub family: &'static str,
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockEnumeration {
    pub block: usize,
    pub size: usize,
    /// Peer assignments visited per individual average, or 0 when every
    /// outcome of the block was handled by convolution.
    pub assignments_per_average: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimandReport {
    pub mech_a: Mechanism,
    pub mech_b: Mechanism,
    pub enumeration: Vec<BlockEnumeration>,
    pub entries: Vec<EstimandEntry>,
    pub undefined: Vec<UndefinedEstimand>,
}

struct Families<'a>(&'a [EstimandEntry]);

impl Serialize for Families<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut families: Vec<(&str, Vec<&EstimandEntry>)> = Vec::new();
        for e in self.0 {
            match families.iter_mut().find(|(f, _)| *f == e.family) {
                Some((_, v)) => v.push(e),
                None => families.push((e.family, vec![e])),
            }
        }
        let mut map = s.serialize_map(Some(families.len()))?;
        for (family, entries) in &families {
            map.serialize_entry(family, &Labels(entries))?;
        }
        map.end()
    }
}

struct Labels<'a>(&'a [&'a EstimandEntry]);

impl Serialize for Labels<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for e in self.0 {
            map.serialize_entry(&e.label, &e.values)?;
        }
        map.end()
    }
}

impl Serialize for EstimandReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(5))?;
        map.serialize_entry("mechanisms", &[&self.mech_a, &self.mech_b])?;
        map.serialize_entry("enumeration", &self.enumeration)?;
        map.serialize_entry("estimands", &Families(&self.entries))?;
        map.serialize_entry("undefined", &self.undefined)?;
        map.end()
    }
}

impl EstimandReport {
    pub fn get(&self, family: &str, label: &str) -> Option<&BlockValues> {
        self.entries
            .iter()
            .find(|e| e.family == family && e.label == label)
            .map(|e| &e.values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per (estimand, block) plus a `population` row per estimand.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["family", "estimand", "block", "value"])?;
        for e in &self.entries {
            for (i, v) in e.values.blocks.iter().enumerate() {
                w.write_record([e.family, e.label.as_str(), &i.to_string(), &v.to_string()])?;
            }
            w.write_record([e.family, e.label.as_str(), "population", &e.values.population.to_string()])?;
        }
        finish_csv(w)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mechanisms: {} vs {}", self.mech_a.name(), self.mech_b.name());
        let _ = writeln!(s, "{:<12} {:<28} {:>16}", "family", "estimand", "population");
        for e in &self.entries {
            let _ = writeln!(s, "{:<12} {:<28} {:>16.10}", e.family, e.label, e.values.population);
        }
        for u in &self.undefined {
            let _ = writeln!(s, "{:<12} {:<28} {:>16}  ({})", u.family, u.label, "undefined", u.reason);
        }
        s
    }
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidData(e.to_string()))
}

fn zo(b: bool) -> u8 {
    b as u8
}

/// Evaluates every estimand family for the mechanism pair `(a, b)`.
///
/// Enumeration and arity errors abort; stratum-restricted estimands that are
/// undefined because a block lacks members of the stratum are listed in
/// `undefined` instead.
pub fn estimand_report(
    engine: &ExactEngine,
    pop: &Population,
    mech_a: &Mechanism,
    mech_b: &Mechanism,
) -> Result<EstimandReport> {
    let mut entries = Vec::new();
    let mut undefined = Vec::new();
    let (a, b) = (mech_a.name(), mech_b.name());
    let mut push = |family: &'static str, label: String, r: Result<BlockValues>| -> Result<()> {
        match r {
            Ok(values) => entries.push(EstimandEntry { family, label, values }),
            Err(e @ (Error::EmptyStratumInBlock { .. } | Error::ExclusionViolated { .. })) => {
                undefined.push(UndefinedEstimand {
                    family,
                    label,
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
        Ok(())
    };
    let co = ComplianceType::Complier;

    for (name, m) in [(a, mech_a), (b, mech_b)] {
        for z in [true, false] {
            push("ybar_itt", format!("z={},{name}", zo(z)), engine.ybar_itt(pop, z, m))?;
        }
    }
    for (name, m) in [(a, mech_a), (b, mech_b)] {
        push("ditt", format!("1,0,{name}"), engine.ditt(pop, true, false, m))?;
    }
    for z in [true, false] {
        push("pitt", format!("z={},{a},{b}", zo(z)), engine.pitt(pop, z, mech_a, mech_b))?;
    }
    push("et", "1,0".into(), et(pop, true, false))?;
    for (name, m) in [(a, mech_a), (b, mech_b)] {
        for d in [true, false] {
            push("ybar_local", format!("d={},{name},all", zo(d)), engine.ybar_local(pop, d, m, None))?;
            push("ybar_local", format!("d={},{name},Co", zo(d)), engine.ybar_local(pop, d, m, Some(co)))?;
        }
    }
    for (name, m) in [(a, mech_a), (b, mech_b)] {
        push("ldt", format!("1,0,{name},Co"), engine.ldt(pop, true, false, m, co))?;
    }
    for d in [true, false] {
        push("lpt", format!("d={},{a},{b},Co", zo(d)), engine.lpt(pop, d, mech_a, mech_b, Some(co)))?;
    }
    for d in [true, false] {
        push("lpt_all", format!("d={},{a},{b}", zo(d)), engine.lpt(pop, d, mech_a, mech_b, None))?;
    }

    let enumeration = pop
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, blk)| {
            let n = blk.len();
            let enumerated = engine.strategy == Strategy::Enumerate
                || blk.individuals.iter().any(|ind| ind.outcome.is_table());
            BlockEnumeration {
                block: i,
                size: n,
                assignments_per_average: if enumerated && n <= MAX_ENUMERATION_CAP {
                    1usize << (n - 1)
                } else {
                    0
                },
            }
        })
        .collect();

    Ok(EstimandReport {
        mech_a: mech_a.clone(),
        mech_b: mech_b.clone(),
        enumeration,
        entries,
        undefined,
    })
}
