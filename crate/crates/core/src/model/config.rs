use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which identity embeddings condition the mask network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    Voice,
    Face,
    VoiceAndFace,
}

impl ConditioningMode {
    pub fn uses_voice(self) -> bool {
        matches!(self, Self::Voice | Self::VoiceAndFace)
    }

    pub fn uses_face(self) -> bool {
        matches!(self, Self::Face | Self::VoiceAndFace)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Voice => "voice",
            Self::Face => "face",
            Self::VoiceAndFace => "voice_and_face",
        }
    }
}

impl std::str::FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voice" => Ok(Self::Voice),
            "face" => Ok(Self::Face),
            "voice_and_face" | "voice+face" => Ok(Self::VoiceAndFace),
            other => Err(Error::Usage(format!(
                "unknown conditioning mode '{other}' (expected voice, face or voice_and_face)"
            ))),
        }
    }
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    /// (time, frequency)
    pub kernel: (usize, usize),
    /// (time, frequency)
    pub dilation: (usize, usize),
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        Self {
            channels,
            kernel,
            dilation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub voice: usize,
    pub face: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub freq_bins: usize,
    pub convs: Vec<ConvSpec>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub fc_sizes: Vec<usize>,
    pub embedding_dims: EmbeddingDims,
    pub conditioning_mode: ConditioningMode,
    pub bn_momentum: f64,
}

/// Kernel and dilation of the seven conv layers; widths vary by profile.
const CONV_SHAPES: [((usize, usize), (usize, usize)); 7] = [
    ((1, 7), (1, 1)),
    ((7, 1), (1, 1)),
    ((5, 5), (2, 1)),
    ((5, 5), (4, 1)),
    ((5, 5), (8, 1)),
    ((5, 5), (16, 1)),
    ((1, 1), (1, 1)),
];

fn conv_stack(hidden: usize, last: usize) -> Vec<ConvSpec> {
    CONV_SHAPES
        .iter()
        .enumerate()
        .map(|(i, &(k, d))| ConvSpec::new(if i == 6 { last } else { hidden }, k, d))
        .collect()
}

impl ModelConfig {
    /// Full-width network: 128-channel convs, 8-channel bottleneck,
    /// 400-unit BiLSTMs, two FC layers of `freq_bins`.
    pub fn paper(freq_bins: usize, mode: ConditioningMode) -> Self {
        Self {
            freq_bins,
            convs: conv_stack(128, 8),
            lstm_hidden: 400,
            lstm_layers: 2,
            fc_sizes: vec![freq_bins, freq_bins],
            embedding_dims: EmbeddingDims {
                voice: 256,
                face: 512,
            },
            conditioning_mode: mode,
            bn_momentum: 0.1,
        }
    }

    /// Same topology, narrowed to train on a single CPU core in minutes.
    pub fn desk(freq_bins: usize, mode: ConditioningMode) -> Self {
        Self {
            freq_bins,
            convs: conv_stack(2, 1),
            lstm_hidden: 32,
            lstm_layers: 2,
            fc_sizes: vec![freq_bins, freq_bins],
            embedding_dims: EmbeddingDims {
                voice: 64,
                face: 128,
            },
            conditioning_mode: mode,
            bn_momentum: 0.1,
        }
    }

    pub fn conv_out_channels(&self) -> usize {
        self.convs.last().map_or(1, |c| c.channels)
    }

    /// Width of the per-frame conv features after flattening.
    pub fn conv_flat_dim(&self) -> usize {
        self.conv_out_channels() * self.freq_bins
    }

    pub fn conditioning_dim(&self) -> usize {
        let mut d = 0;
        if self.conditioning_mode.uses_voice() {
            d += self.embedding_dims.voice;
        }
        if self.conditioning_mode.uses_face() {
            d += self.embedding_dims.face;
        }
        d
    }

    /// Input width of the first BiLSTM.
    pub fn lstm_input_dim(&self) -> usize {
        self.conv_flat_dim() + self.conditioning_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.freq_bins == 0 {
            return Err(Error::validation("freq_bins must be positive"));
        }
        for (i, c) in self.convs.iter().enumerate() {
            if c.channels == 0
                || c.kernel.0 % 2 == 0
                || c.kernel.1 % 2 == 0
                || c.dilation.0 == 0
                || c.dilation.1 == 0
            {
                return Err(Error::validation(format!(
                    "conv layer {} is invalid: {c:?}",
                    i + 1
                )));
            }
        }
        if self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return Err(Error::validation(
                "lstm_hidden and lstm_layers must be positive",
            ));
        }
        if self.fc_sizes.last() != Some(&self.freq_bins) {
            return Err(Error::validation(format!(
                "last fc size {:?} must equal freq_bins {}",
                self.fc_sizes.last(),
                self.freq_bins
            )));
        }
        if self.fc_sizes.contains(&0) {
            return Err(Error::validation("fc sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::validation("bn_momentum must be in [0, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_dimensions() {
        let c = ModelConfig::paper(601, ConditioningMode::VoiceAndFace);
        c.validate().unwrap();
        assert_eq!(c.convs.len(), 7);
        assert_eq!(c.conv_out_channels(), 8);
        assert_eq!(c.conv_flat_dim(), 4808);
        assert_eq!(c.lstm_input_dim(), 5576);
        assert_eq!(c.convs[4].dilation, (8, 1));
        assert_eq!(c.fc_sizes, vec![601, 601]);
    }

    #[test]
    fn mode_parsing() {
        for m in [
            ConditioningMode::Voice,
            ConditioningMode::Face,
            ConditioningMode::VoiceAndFace,
        ] {
            assert_eq!(m.as_str().parse::<ConditioningMode>().unwrap(), m);
        }
        assert!("lips".parse::<ConditioningMode>().is_err());
    }
}
