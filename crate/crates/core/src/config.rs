//! Run configuration shared by the command-line and Python front ends.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::design::DesignConfig;
use crate::dgp::{build_population, DgpConfig};
use crate::error::{Error, Result};
use crate::estimands::ExactEngine;
use crate::mechanisms::{Mechanism, DEFAULT_ENUMERATION_CAP};
use crate::population::Population;
use crate::rng::{derive_seed, stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
    Text,
}

/// Mechanisms are referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub mech_a: String,
    pub mech_b: String,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Master seed of the design replicates; derived from the run seed
    /// when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_replications() -> usize {
    1000
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            replications: default_replications(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mechanisms: Vec<Mechanism>,
    #[serde(default)]
    pub dgp: Option<DgpConfig>,
    pub design: DesignSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Mechanism names must be unique and the design must reference two
    /// distinct defined mechanisms.
    pub fn check(&self) -> Result<()> {
        for (k, m) in self.mechanisms.iter().enumerate() {
            if self.mechanisms[..k].iter().any(|o| o.name() == m.name()) {
                return Err(Error::InvalidConfig(format!("mechanism '{}' is defined more than once", m.name())));
            }
        }
        if self.design.mech_a == self.design.mech_b {
            return Err(Error::InvalidConfig("design.mech_a and design.mech_b must differ".into()));
        }
        self.mechanism(&self.design.mech_a)?;
        self.mechanism(&self.design.mech_b)?;
        if let Some(d) = &self.dgp {
            d.check()?;
        }
        Ok(())
    }

    pub fn mechanism(&self, name: &str) -> Result<&Mechanism> {
        self.mechanisms
            .iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("mechanism '{name}' is not defined")))
    }

    pub fn population_seed(&self) -> u64 {
        derive_seed(self.seed, tag::POPULATION, 0)
    }

    pub fn design_seed(&self) -> u64 {
        self.mc.seed.unwrap_or_else(|| derive_seed(self.seed, tag::MONTE_CARLO, 0))
    }

    pub fn design_config(&self) -> Result<DesignConfig> {
        Ok(DesignConfig::new(
            self.mechanism(&self.design.mech_a)?.clone(),
            self.mechanism(&self.design.mech_b)?.clone(),
            self.design.k,
            self.design_seed(),
        ))
    }

    pub fn engine(&self) -> ExactEngine {
        ExactEngine {
            enumeration_cap: self.enumeration_cap,
            ..ExactEngine::default()
        }
    }

    pub fn build_population(&self) -> Result<Population> {
        let dgp = self
            .dgp
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config has no 'dgp' section".into()))?;
        build_population(dgp, &mut stream(self.population_seed()))
    }
}
