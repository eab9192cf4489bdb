//! Encoder-decoder dialogue models, their training loop, checkpoints and
//! encoder representations.

mod infer;
mod io;
mod layout;
mod nets;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradkernel::KernelError;

pub use infer::{export_representations, initial_params, sequence_loss, token_accuracy, Model};
pub use io::{
    read_checkpoint, read_representations, write_checkpoint, write_representations, Checkpoint, RepresentationRecord,
    CHECKPOINT_MAGIC, REPR_MAGIC,
};
pub use layout::{param_count, param_shapes, ParamSpec};
pub use nets::{EncoderInput, Pair, MEMORY_MASK};
pub use train::{train, validation_bleu, DivergenceRecord, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lstm,
    LstmAttn,
    BilstmAttn,
    Hred,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Lstm, ModelKind::LstmAttn, ModelKind::BilstmAttn, ModelKind::Hred, ModelKind::Transformer];

    /// The four recurrent kinds.
    pub const SEQ2SEQ: [ModelKind; 4] = [ModelKind::Lstm, ModelKind::LstmAttn, ModelKind::BilstmAttn, ModelKind::Hred];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::LstmAttn => "lstm_attn",
            ModelKind::BilstmAttn => "bilstm_attn",
            ModelKind::Hred => "hred",
            ModelKind::Transformer => "transformer",
        }
    }

    pub fn is_recurrent(self) -> bool {
        self != ModelKind::Transformer
    }

    /// Recurrent kinds whose decoder attends over encoder states.
    pub fn has_attention(self) -> bool {
        matches!(self, ModelKind::LstmAttn | ModelKind::BilstmAttn | ModelKind::Hred)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown model kind {s:?}")))
    }
}

/// How the transformer turns per-token encoder states into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Transformer only.
    pub heads: usize,
    /// Transformer feed-forward width.
    pub ff_dim: usize,
    pub window: usize,
    pub max_decode_len: usize,
    pub pooling: Pooling,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-size hyperparameters.
    pub fn paper_scale(kind: ModelKind, vocab_size: usize) -> Self {
        let (embed, hidden, layers, ff) = match kind {
            ModelKind::Transformer => (512, 512, 4, 2048),
            _ => (128, 256, 2, 0),
        };
        ModelConfig {
            kind,
            vocab_size,
            embed_dim: embed,
            hidden_dim: hidden,
            layers,
            heads: 2,
            ff_dim: ff,
            window: 100,
            max_decode_len: 30,
            pooling: Pooling::Mean,
            seed: 0,
        }
    }

    /// Small hyperparameters for laptop runs.
    pub fn desk_scale(kind: ModelKind, vocab_size: usize) -> Self {
        let (embed, ff) = match kind {
            ModelKind::Transformer => (64, 128),
            _ => (32, 0),
        };
        ModelConfig { embed_dim: embed, hidden_dim: 64, ff_dim: ff, ..Self::paper_scale(kind, vocab_size) }
    }

    /// Number of transformer encoder layers; the rest decode.
    pub fn encoder_layers(&self) -> usize {
        match self.kind {
            ModelKind::Transformer => self.layers / 2,
            _ => self.layers,
        }
    }

    pub fn decoder_layers(&self) -> usize {
        match self.kind {
            ModelKind::Transformer => self.layers - self.layers / 2,
            _ => self.layers,
        }
    }

    /// Dimension of the probed encoder vector.
    pub fn probe_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.vocab_size < 4 {
            return bad(format!("vocabulary of {} cannot hold the 4 specials", self.vocab_size));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return bad("embedding, hidden and layer sizes must be positive".into());
        }
        if self.kind == ModelKind::Transformer {
            if self.layers < 2 {
                return bad("a transformer needs at least 2 layers to split between encoder and decoder".into());
            }
            if self.embed_dim != self.hidden_dim {
                return bad(format!(
                    "transformer embed_dim {} must equal hidden_dim {}",
                    self.embed_dim, self.hidden_dim
                ));
            }
            if self.heads == 0 || self.hidden_dim % self.heads != 0 {
                return bad(format!("hidden_dim {} is not divisible by {} heads", self.hidden_dim, self.heads));
            }
            if self.ff_dim == 0 {
                return bad("transformer ff_dim must be positive".into());
            }
        }
        Ok(())
    }
}

/// Checkpoint stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Untrained,
    Epoch(usize),
    BestBleu,
    LastEpoch,
}

impl Stage {
    pub fn name(&self) -> String {
        match self {
            Stage::Untrained => "untrained".into(),
            Stage::Epoch(n) => format!("epoch-{n}"),
            Stage::BestBleu => "bestbleu".into(),
            Stage::LastEpoch => "lastepoch".into(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Stage {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_lowercase().as_str() {
            "untrained" => Ok(Stage::Untrained),
            "bestbleu" => Ok(Stage::BestBleu),
            "lastepoch" => Ok(Stage::LastEpoch),
            other => other
                .strip_prefix("epoch-")
                .and_then(|n| n.parse().ok())
                .map(Stage::Epoch)
                .ok_or_else(|| ModelError::Config(format!("unknown stage {s:?}"))),
        }
    }
}

impl Serialize for Stage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Stage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
