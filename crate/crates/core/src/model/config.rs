use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Concat,
    Sum,
    Max,
    Min,
    Mean,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [
        Aggregation::Concat,
        Aggregation::Sum,
        Aggregation::Max,
        Aggregation::Min,
        Aggregation::Mean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Concat => "concat",
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
            Aggregation::Min => "min",
            Aggregation::Mean => "mean",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown aggregation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub graph_encoder: bool,
    pub structure_encoder: bool,
    pub attribute_encoder: bool,
    pub feature_fusion: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            graph_encoder: true,
            structure_encoder: true,
            attribute_encoder: true,
            feature_fusion: true,
        }
    }
}

/// Single-component removals used in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoGe,
    NoSe,
    NoAe,
    NoFf,
}

impl Variant {
    pub const ABLATIONS: [Variant; 4] =
        [Variant::NoGe, Variant::NoSe, Variant::NoAe, Variant::NoFf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGe => "noGE",
            Variant::NoSe => "noSE",
            Variant::NoAe => "noAE",
            Variant::NoFf => "noFF",
        }
    }

    pub fn apply(self, config: &ModelConfig) -> ModelConfig {
        let mut c = config.clone();
        match self {
            Variant::Full => {}
            Variant::NoGe => c.components.graph_encoder = false,
            Variant::NoSe => c.components.structure_encoder = false,
            Variant::NoAe => c.components.attribute_encoder = false,
            Variant::NoFf => c.components.feature_fusion = false,
        }
        c
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts the component codes `ge`, `se`, `ae`, `ff` as well as the
    /// variant names.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Variant::Full),
            "ge" | "noge" => Ok(Variant::NoGe),
            "se" | "nose" => Ok(Variant::NoSe),
            "ae" | "noae" => Ok(Variant::NoAe),
            "ff" | "noff" => Ok(Variant::NoFf),
            _ => Err(Error::Config(format!("unknown component `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Per-encoder channel size of each layer; the last entry is the
    /// channel size feeding the output head.
    pub channels: Vec<usize>,
    pub aggregation: Aggregation,
    pub dropout: f64,
    pub components: Components,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![128, 128, 1],
            aggregation: Aggregation::Concat,
            dropout: 0.5,
            components: Components::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("channel sizes must be positive".into()));
        }
        if self.encoders() == 0 {
            return Err(Error::Config("at least one encoder must be enabled".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.channels.len()
    }

    /// Number of enabled encoders.
    pub fn encoders(&self) -> usize {
        let c = &self.components;
        [c.graph_encoder, c.structure_encoder, c.attribute_encoder]
            .into_iter()
            .filter(|&b| b)
            .count()
    }

    /// Width of the fusion output of layer `l` (1-based).
    pub fn fused_width(&self, l: usize) -> usize {
        let d = self.channels[l - 1];
        match self.aggregation {
            Aggregation::Concat => self.encoders() * d,
            _ => d,
        }
    }

    /// Whether hidden-layer fusion outputs feed another encoder.
    pub fn fusion_feeds_back(&self) -> bool {
        let c = &self.components;
        c.feature_fusion && (c.structure_encoder || c.attribute_encoder)
    }

    /// Width of the structure-encoder input at layer index `l` (0-based).
    pub fn structure_input_width(&self, l: usize) -> usize {
        match l {
            0 => 1,
            _ if self.components.feature_fusion => self.fused_width(l),
            _ => self.channels[l - 1],
        }
    }

    /// Width of the attribute-side state `H_F` entering layer index `l`.
    pub fn attribute_state_width(&self, l: usize) -> usize {
        self.structure_input_width(l)
    }

    /// Width of the graph-encoder input at layer index `l`, given `d` attributes.
    pub fn graph_input_width(&self, l: usize, d: usize) -> usize {
        if l == 0 {
            d
        } else {
            self.channels[l - 1]
        }
    }

    /// Embedding-export width: one block of the last channel size per encoder.
    pub fn embedding_width(&self) -> usize {
        self.encoders() * self.channels[self.layers() - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_widths() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.fused_width(1), 384);
        assert_eq!(c.fused_width(3), 3);
        assert_eq!(c.attribute_state_width(1), 384);
        let no_ae = Variant::NoAe.apply(&c);
        assert_eq!(no_ae.fused_width(1), 256);
        let no_ff = Variant::NoFf.apply(&c);
        assert_eq!(no_ff.structure_input_width(2), 128);
        let sum = ModelConfig {
            aggregation: Aggregation::Sum,
            ..c
        };
        assert_eq!(sum.fused_width(1), 128);
    }

    #[test]
    fn rejects_invalid() {
        let mut c = ModelConfig::default();
        c.components = Components {
            graph_encoder: false,
            structure_encoder: false,
            attribute_encoder: false,
            feature_fusion: true,
        };
        assert!(c.validate().is_err());
        assert!(ModelConfig {
            channels: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            channels: vec![4, 0],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            dropout: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("ff".parse::<Variant>().unwrap(), Variant::NoFf);
        assert_eq!("noGE".parse::<Variant>().unwrap(), Variant::NoGe);
        assert_eq!("mean".parse::<Aggregation>().unwrap(), Aggregation::Mean);
        assert!("avg".parse::<Aggregation>().is_err());
    }
}
