use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Plain,
    /// Attention weights rescaled by source word length and renormalized.
    LengthBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Base,
    Aux,
    AuxRatio,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Plain => "plain",
            AttentionMode::LengthBias => "length_bias",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(AttentionMode::Plain),
            "length_bias" => Ok(AttentionMode::LengthBias),
            _ => Err(ModelError::InvalidHyperParams(format!("unknown attention_mode `{s}`"))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Base => "base",
            LossMode::Aux => "aux",
            LossMode::AuxRatio => "aux_ratio",
        })
    }
}

impl FromStr for LossMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(LossMode::Base),
            "aux" => Ok(LossMode::Aux),
            "aux_ratio" => Ok(LossMode::AuxRatio),
            _ => Err(ModelError::InvalidHyperParams(format!("unknown loss_mode `{s}`"))),
        }
    }
}

/// Architecture and training settings. Defaults are the reference setup:
/// 64-dimensional everything, dropout 0.5, 800 epochs with a wait of 200,
/// batches of 64 and a learning rate of 0.001.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub embedding_dim: usize,
    /// Per direction; encoder states are twice this wide.
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_hidden: usize,
    pub dropout_rate: f64,
    pub temperature: f64,
    pub attention_mode: AttentionMode,
    pub epochs: usize,
    pub wait: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_mode: LossMode,
    pub ratio: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embedding_dim: 64,
            encoder_hidden: 64,
            decoder_hidden: 64,
            attention_hidden: 64,
            dropout_rate: 0.5,
            temperature: 1.0,
            attention_mode: AttentionMode::Plain,
            epochs: 800,
            wait: 200,
            batch_size: 64,
            learning_rate: 0.001,
            loss_mode: LossMode::Base,
            ratio: 1.0,
            seed: 1,
        }
    }
}

/// Keys accepted by [`HyperParams::set`], in serialization order.
pub const HYPERPARAM_KEYS: [&str; 14] = [
    "embedding_dim",
    "encoder_hidden",
    "decoder_hidden",
    "attention_hidden",
    "dropout_rate",
    "temperature",
    "attention_mode",
    "epochs",
    "wait",
    "batch_size",
    "learning_rate",
    "loss_mode",
    "ratio",
    "seed",
];

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidHyperParams(m));
        for (name, v) in [
            ("embedding_dim", self.embedding_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_hidden", self.attention_hidden),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if self.wait > self.epochs {
            return bad(format!("wait {} exceeds epochs {}", self.wait, self.epochs));
        }
        if !(self.ratio > 0.0 && self.ratio.is_finite()) {
            return bad(format!("ratio {} must be positive", self.ratio));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ModelError> {
            value
                .parse()
                .map_err(|_| ModelError::InvalidHyperParams(format!("bad value `{value}` for {key}")))
        }
        match key {
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "encoder_hidden" => self.encoder_hidden = num(key, value)?,
            "decoder_hidden" => self.decoder_hidden = num(key, value)?,
            "attention_hidden" => self.attention_hidden = num(key, value)?,
            "dropout_rate" => self.dropout_rate = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "attention_mode" => self.attention_mode = value.parse()?,
            "epochs" => self.epochs = num(key, value)?,
            "wait" => self.wait = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "loss_mode" => self.loss_mode = value.parse()?,
            "ratio" => self.ratio = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(ModelError::InvalidHyperParams(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs in [`HYPERPARAM_KEYS`] order. Floats use a
    /// round-trip exact representation.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("embedding_dim", self.embedding_dim.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("decoder_hidden", self.decoder_hidden.to_string()),
            ("attention_hidden", self.attention_hidden.to_string()),
            ("dropout_rate", format!("{:?}", self.dropout_rate)),
            ("temperature", format!("{:?}", self.temperature)),
            ("attention_mode", self.attention_mode.to_string()),
            ("epochs", self.epochs.to_string()),
            ("wait", self.wait.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("loss_mode", self.loss_mode.to_string()),
            ("ratio", format!("{:?}", self.ratio)),
            ("seed", self.seed.to_string()),
        ]
    }
}
