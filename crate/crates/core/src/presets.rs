//! Named experiment presets: corpus sizes, architecture and training defaults.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machines::{Logic, MachineKind};
use crate::nn::Architecture;
use crate::rng::derive_seed;
use crate::traces::{Source, TracePreset, TraceSetSpec};
use crate::trainer::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentPreset {
    #[serde(rename = "ds1")]
    Ds1,
    #[serde(rename = "ds2")]
    Ds2,
    #[serde(rename = "ds3")]
    Ds3,
    #[serde(rename = "desk-ds1")]
    DeskDs1,
    #[serde(rename = "desk-ds2")]
    DeskDs2,
    #[serde(rename = "desk-ds3")]
    DeskDs3,
}

/// Automata per class list for the automaton presets.
pub const AUTOMATON_CLASSES: usize = 5;

impl ExperimentPreset {
    pub const ALL: [ExperimentPreset; 6] = [Self::Ds1, Self::Ds2, Self::Ds3, Self::DeskDs1, Self::DeskDs2, Self::DeskDs3];

    pub fn id(self) -> &'static str {
        match self {
            Self::Ds1 => "ds1",
            Self::Ds2 => "ds2",
            Self::Ds3 => "ds3",
            Self::DeskDs1 => "desk-ds1",
            Self::DeskDs2 => "desk-ds2",
            Self::DeskDs3 => "desk-ds3",
        }
    }

    pub fn is_desk(self) -> bool {
        matches!(self, Self::DeskDs1 | Self::DeskDs2 | Self::DeskDs3)
    }

    /// The full-scale preset this one is derived from.
    pub fn base(self) -> Self {
        match self {
            Self::DeskDs1 => Self::Ds1,
            Self::DeskDs2 => Self::Ds2,
            Self::DeskDs3 => Self::Ds3,
            other => other,
        }
    }

    pub fn trace_preset(self) -> TracePreset {
        match self {
            Self::Ds1 => TracePreset::Ds1,
            Self::Ds2 => TracePreset::Ds2,
            Self::Ds3 => TracePreset::Ds3,
            _ => TracePreset::Desk,
        }
    }

    pub fn arch(self) -> Architecture {
        match self.base() {
            Self::Ds3 => Architecture::ds3(),
            _ => Architecture::ds1(),
        }
    }

    pub fn training(self, seed: u64) -> TrainingConfig {
        if self.is_desk() {
            TrainingConfig::desk(seed)
        } else {
            TrainingConfig { seed, ..TrainingConfig::default() }
        }
    }

    pub fn trace_spec(self, source: Source, seed: u64) -> TraceSetSpec {
        TraceSetSpec::preset(self.trace_preset(), source, seed)
    }

    /// Default class list: clean machines, backdoored machines, or seeded automata.
    pub fn default_sources(self, seed: u64) -> Vec<Source> {
        match self.base() {
            Self::Ds1 => Logic::ALL.iter().map(|&l| Source::Machine(MachineKind::clean(l))).collect(),
            Self::Ds2 => Logic::ALL.iter().map(|&l| Source::Machine(MachineKind::modified(l))).collect(),
            _ => (0..AUTOMATON_CLASSES as u64)
                .map(|i| Source::Automaton(derive_seed(seed, 0xA000 + i)))
                .collect(),
        }
    }
}

impl fmt::Display for ExperimentPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExperimentPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.id() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}
