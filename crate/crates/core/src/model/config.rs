use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Precision;

/// How the recurrent state is updated from the update gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruUpdate {
    /// `h_t = z * x_t + (1 - z) * o_t`
    #[default]
    InputCarry,
    /// `h_t = z * h_{t-1} + (1 - z) * o_t`
    Standard,
}

/// Aggregation of encoder tokens before the final linear layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Mean over the valid frames.
    #[default]
    Mean,
    /// The last valid frame.
    LastToken,
}

fn default_graph() -> String {
    "kimore".into()
}

/// Architecture and widths. Every field has a default, so a config file
/// only needs the fields it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Built-in graph name or path to a graph JSON file.
    #[serde(default = "default_graph")]
    pub graph: String,
    pub input_channels: usize,
    /// Center on `root_joint` and scale by the root-to-`torso_joint`
    /// distance before the network sees a sequence.
    pub normalize: bool,
    pub root_joint: usize,
    pub torso_joint: usize,
    /// Hop orders whose normalized adjacency enters the graph convolution.
    pub hops: Vec<usize>,
    /// Dense spatio-temporal blocks.
    pub blocks: usize,
    pub augment_kernel: usize,
    pub augment_channels: usize,
    pub gcn_channels: usize,
    pub bank_kernels: Vec<usize>,
    pub bank_filters: usize,
    pub gru_update: GruUpdate,
    pub encoder_layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Token width inside the encoder (output width of the feed-forward).
    pub model_width: usize,
    pub ff_hidden: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub positional_encoding: bool,
    pub readout: Readout,
    /// Block whose joint attention feeds the feedback export.
    pub feedback_block: usize,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            graph: default_graph(),
            input_channels: 3,
            normalize: true,
            root_joint: 0,
            torso_joint: 20,
            hops: vec![0, 1, 2],
            blocks: 3,
            augment_kernel: 9,
            augment_channels: 64,
            gcn_channels: 64,
            bank_kernels: vec![9, 15, 20],
            bank_filters: 16,
            gru_update: GruUpdate::InputCarry,
            encoder_layers: 2,
            heads: 6,
            head_dim: 128,
            model_width: 128,
            ff_hidden: 80,
            dropout: 0.1,
            layer_norm_eps: 1e-6,
            positional_encoding: true,
            readout: Readout::Mean,
            feedback_block: 0,
            precision: Precision::F32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small widths for tests and quick experiments.
    pub fn tiny() -> Self {
        ModelConfig {
            blocks: 2,
            augment_channels: 8,
            gcn_channels: 8,
            bank_filters: 4,
            encoder_layers: 1,
            heads: 2,
            head_dim: 8,
            model_width: 16,
            ff_hidden: 16,
            ..Self::default()
        }
    }

    /// Channels produced by one block's temporal bank.
    pub fn bank_width(&self) -> usize {
        self.bank_kernels.len() * self.bank_filters
    }

    /// Channels after input augmentation of the raw coordinates.
    pub fn augmented_width(&self) -> usize {
        self.input_channels + self.augment_channels
    }

    /// Input channels of block `i` under dense wiring.
    pub fn block_input_width(&self, i: usize) -> usize {
        if i == 0 {
            self.input_channels
        } else {
            self.augmented_width() + i * self.bank_width()
        }
    }

    pub fn attention_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("blocks", self.blocks),
            ("augment_kernel", self.augment_kernel),
            ("augment_channels", self.augment_channels),
            ("gcn_channels", self.gcn_channels),
            ("bank_filters", self.bank_filters),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("model_width", self.model_width),
            ("ff_hidden", self.ff_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.hops.is_empty() {
            return Err(Error::Config("hop set must not be empty".into()));
        }
        if self.augment_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "augment kernel {} must be odd",
                self.augment_kernel
            )));
        }
        if self.bank_kernels.is_empty() || self.bank_kernels.contains(&0) {
            return Err(Error::Config(format!(
                "bad temporal bank kernels {:?}",
                self.bank_kernels
            )));
        }
        if self.model_width % 2 != 0 {
            return Err(Error::Config(format!(
                "model width {} must be even for positional encoding",
                self.model_width
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        if self.feedback_block >= self.blocks {
            return Err(Error::Config(format!(
                "feedback block {} out of range for {} blocks",
                self.feedback_block, self.blocks
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_widths() {
        let c = ModelConfig::default();
        assert_eq!(c.augmented_width(), 67);
        assert_eq!(c.bank_width(), 48);
        assert_eq!(c.block_input_width(1), 67 + 48);
        assert_eq!(c.block_input_width(2), 67 + 48 + 48);
        assert_eq!(c.attention_width(), 768);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"blocks": 1, "gru_update": "standard"}"#).unwrap();
        assert_eq!(c.blocks, 1);
        assert_eq!(c.gru_update, GruUpdate::Standard);
        assert_eq!(c.heads, 6);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"blockz": 1}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
        let odd = ModelConfig {
            model_width: 15,
            ..ModelConfig::tiny()
        };
        assert!(odd.validate().is_err());
    }
}
