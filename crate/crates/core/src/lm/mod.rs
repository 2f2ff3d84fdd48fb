//! Small trainable language models.
//!
//! [`Lm`] is a causal self-attention network: each target is predicted from
//! strictly earlier tokens. [`BiLm`] runs two such towers with no shared
//! weights, one left-to-right and one right-to-left, and concatenates their
//! hidden states before a single output head, so every content token is
//! predicted from both sides while never seeing itself.
//!
//! Gradients are derived by hand, layer by layer, in double precision;
//! [`gradient_check`] compares them against central differences.

mod checkpoint;
mod gradcheck;
mod model;
mod table;
mod tower;
mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, TokenId, EOS, PAD};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{BiLm, Lm, Model, ScoringModel};
pub use table::{LossRow, LossTable};
pub use train::{train_lm, LossMaskMode, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    /// Attention heads per layer; must divide `model_dim`.
    pub num_heads: usize,
    /// Width of the feed-forward sublayer.
    pub ff_dim: usize,
    /// Longest input sequence (in positions) the model accepts.
    pub context_window: usize,
    pub seed: u64,
}

impl LmConfig {
    /// Config with one attention head per 16 dimensions and a feed-forward
    /// width of twice the model dimension.
    pub fn new(vocab_size: usize, model_dim: usize, num_layers: usize, context_window: usize, seed: u64) -> Self {
        LmConfig {
            vocab_size,
            model_dim,
            num_layers,
            num_heads: (model_dim / 16).max(1),
            ff_dim: 2 * model_dim,
            context_window,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.model_dim < 8 {
            return fail(format!("model_dim must be at least 8, got {}", self.model_dim));
        }
        if self.num_layers < 1 {
            return fail("num_layers must be at least 1".into());
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return fail(format!(
                "num_heads ({}) must divide model_dim ({})",
                self.num_heads, self.model_dim
            ));
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be positive".into());
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.context_window < 1 {
            return fail("context_window must be positive".into());
        }
        Ok(())
    }

    /// Parameters in one tower (embeddings, blocks, final norm).
    pub fn tower_parameter_count(&self) -> usize {
        let (v, d, f, w) = (self.vocab_size, self.model_dim, self.ff_dim, self.context_window);
        let block = 2 * d + 4 * d * d + d * f + f + f * d + d;
        v * d + w * d + self.num_layers * block + d
    }

    /// Parameters of a unidirectional model: one tower plus a `d x V` head with bias.
    pub fn parameter_count(&self) -> usize {
        self.tower_parameter_count() + self.model_dim * self.vocab_size + self.vocab_size
    }

    /// Parameters of a bidirectional model: two towers plus a `2d x V` head with bias.
    pub fn bi_parameter_count(&self) -> usize {
        2 * self.tower_parameter_count() + 2 * self.model_dim * self.vocab_size + self.vocab_size
    }
}

/// What a prediction target is, relative to the original sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    /// A content token of the original sentence.
    Content,
    /// Anything before the original content: context tokens, SEP and BOS.
    Context,
    /// The EOS closing the sentence.
    End,
    Pad,
}

impl TargetKind {
    /// Suffix used in the TSV table formats.
    pub fn suffix(self) -> &'static str {
        match self {
            TargetKind::Content => "",
            TargetKind::Context => "c",
            TargetKind::End => "e",
            TargetKind::Pad => "p",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        match s {
            "" => Some(TargetKind::Content),
            "c" => Some(TargetKind::Context),
            "e" => Some(TargetKind::End),
            "p" => Some(TargetKind::Pad),
            _ => None,
        }
    }
}

/// An input sequence with the kind of every prediction target:
/// `kinds[t]` describes `ids[t + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmExample {
    pub ids: Vec<TokenId>,
    pub kinds: Vec<TargetKind>,
}

impl LmExample {
    pub fn new(ids: Vec<TokenId>, kinds: Vec<TargetKind>) -> Result<Self> {
        if ids.len() < 2 || kinds.len() + 1 != ids.len() {
            return Err(Error::Misaligned(format!(
                "{} ids need {} target kinds, got {}",
                ids.len(),
                ids.len().saturating_sub(1),
                kinds.len()
            )));
        }
        Ok(LmExample { ids, kinds })
    }

    /// The plain language-modelling example for a padded sentence.
    pub fn from_sentence(sentence: &Sentence) -> Self {
        let kinds = sentence.ids[1..]
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                if i < sentence.true_len {
                    TargetKind::Content
                } else if id == EOS && i == sentence.true_len {
                    TargetKind::End
                } else {
                    debug_assert_eq!(id, PAD);
                    TargetKind::Pad
                }
            })
            .collect();
        LmExample {
            ids: sentence.ids.clone(),
            kinds,
        }
    }

    pub fn num_targets(&self) -> usize {
        self.kinds.len()
    }

    /// Flags the content targets at `positions` (0 = first word) as context,
    /// so their losses are reported but left out of content averages.
    pub fn with_condition_mask(mut self, positions: &[usize]) -> Result<Self> {
        for &p in positions {
            match self.kinds.get_mut(p) {
                Some(k @ TargetKind::Content) => *k = TargetKind::Context,
                _ => {
                    return Err(Error::InvalidArgument(format!("position {p} is not a content target")));
                }
            }
        }
        Ok(self)
    }
}
