use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of loss categories.
pub const N_CLASSES: usize = 3;

/// Relative loss category, ordered from least to most attenuation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossClass {
    Low,
    Medium,
    High,
}

impl LossClass {
    pub const ALL: [LossClass; N_CLASSES] = [LossClass::Low, LossClass::Medium, LossClass::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossClass::Low => "low",
            LossClass::Medium => "medium",
            LossClass::High => "high",
        }
    }
}

impl fmt::Display for LossClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(LossClass::Low),
            "medium" | "med" => Ok(LossClass::Medium),
            "high" => Ok(LossClass::High),
            other => Err(format!("unknown loss class `{other}`")),
        }
    }
}

/// Link type of a relative loss observation; doubles as the learning task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkType {
    #[serde(rename = "o2i")]
    O2I,
    #[serde(rename = "i2i")]
    I2I,
}

impl LinkType {
    pub const ALL: [LinkType; 2] = [LinkType::O2I, LinkType::I2I];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkType::O2I => "o2i",
            LinkType::I2I => "i2i",
        }
    }
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "o2i" => Ok(LinkType::O2I),
            "i2i" => Ok(LinkType::I2I),
            other => Err(format!("unknown link type `{other}`")),
        }
    }
}

/// Index of the largest probability; ties go to the higher loss class.
pub fn argmax_high(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v >= values[best] {
            best = i;
        }
    }
    best
}
