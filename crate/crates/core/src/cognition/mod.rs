//! Cognitive operations over the knowledge layer: recall by iterative
//! reconstruction, association by spreading activation, dual-path reasoning,
//! sequence prediction, strategy reflection and conflict-aware updating.

pub mod associate;
pub mod predict;
pub mod reason;
pub mod recall;
pub mod reflect;
pub mod update;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use associate::Activation;
pub use predict::Prediction;
pub use reason::{Answer, Derivation, Pattern, ProofResult, Rule, Strategy, Suggestion, Term};
pub use recall::{ReconstructionResult, SlotFill};
pub use reflect::{ReflectOutcome, StrategyWeights};
pub use update::{Decision, Resolution, UpdateOutcome, UpdateProposal};

/// Query bundle for recall and association.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Cue {
    pub text_tokens: Vec<String>,
    pub embedding: Option<Vec<f32>>,
    pub entities: Vec<String>,
    pub time_window: Option<(i64, i64)>,
    /// Named slots a reconstruction should fill, e.g. "where", "what".
    pub slots: Vec<String>,
    /// Extra tokens marking what matters to the caller; matched like text tokens.
    pub salience_tags: Vec<String>,
}

impl Cue {
    pub fn validate(&self) -> Result<()> {
        if self.text_tokens.is_empty() && self.embedding.is_none() && self.entities.is_empty() && self.time_window.is_none() {
            return Err(CoreError::InvalidCue(
                "needs text tokens, an embedding, entities or a time window".into(),
            ));
        }
        Ok(())
    }

    pub fn entities(entities: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            entities: entities.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }
}
