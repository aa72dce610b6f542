use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::model::{ConditioningMode, ModelConfig};

/// Signal-processing and network defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 8 kHz audio, 257 bins, narrow network.
    Desk,
    /// 16 kHz audio, 601 bins, full-width network.
    Paper,
}

impl Profile {
    pub fn stft(self) -> StftConfig {
        match self {
            Self::Desk => StftConfig::desk(),
            Self::Paper => StftConfig::paper(),
        }
    }

    pub fn model(self, mode: ConditioningMode) -> ModelConfig {
        let bins = self.stft().freq_bins();
        match self {
            Self::Desk => ModelConfig::desk(bins, mode),
            Self::Paper => ModelConfig::paper(bins, mode),
        }
    }

    pub fn sample_rate(self) -> u32 {
        self.stft().sample_rate
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Paper => "paper",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Usage(format!(
                "unknown profile '{other}' (expected desk or paper)"
            ))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
