//! Emotion-based trust management: contracts, observed violations, the
//! per-service emotional state and policy-driven service selection.

pub mod contract;
pub mod ledger;
pub mod policy;
pub mod state;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use contract::{observe, transfer_contract, Contract, Direction, Expectation, InvocationRecord, Resource};
pub use ledger::{select_service, Ledger};
pub use policy::{Expr, Policy};
pub use state::{EmotionEvent, EmotionState};

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("amounts must be non-negative")]
    NegativeAmount,
    #[error("record {record} does not match contract {contract}")]
    ContractMismatch { contract: String, record: String },
    #[error("record lacks `{0}`")]
    MissingAmount(String),
    #[error("a contract needs at least one resource")]
    NoResources,
    #[error("transfer expectations apply to money only")]
    TransferOnNonMoney,
    #[error("unknown resource `{0}`")]
    UnknownResource(String),
    #[error("event seq {got} does not follow {expected}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("event for `{event}` applied to state of `{state}`")]
    WrongService { state: String, event: String },
    #[error("intensity {0} outside [0, 1]")]
    IntensityRange(f64),
    #[error("policy syntax error at byte {at}: {msg}")]
    PolicySyntax { at: usize, msg: String },
    #[error("event log of `{service}`, line {line}: {msg}")]
    LogSyntax { service: String, line: usize, msg: String },
    #[error("decay must lie in [0, 1), got {0}")]
    Decay(f64),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("parsing trust config: {0}")]
    Config(String),
}

/// Emotion labels for each kind of event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmotionMap {
    pub money_undershoot: String,
    pub money_overshoot: String,
    pub time: String,
    pub compute: String,
    pub data: String,
    pub favorable: String,
}

impl Default for EmotionMap {
    fn default() -> Self {
        Self {
            money_undershoot: "sadness".into(),
            money_overshoot: "surprise".into(),
            time: "boredom".into(),
            compute: "boredom".into(),
            data: "anxiety".into(),
            favorable: "contentment".into(),
        }
    }
}

impl EmotionMap {
    pub fn unfavorable(&self, resource: Resource, overshoot: bool) -> String {
        match resource {
            Resource::Money if overshoot => self.money_overshoot.clone(),
            Resource::Money => self.money_undershoot.clone(),
            Resource::Time => self.time.clone(),
            Resource::Compute => self.compute.clone(),
            Resource::Data => self.data.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustConfig {
    /// λ in `mean′ = λ·mean + (1 − λ)·intensity`.
    pub decay: f64,
    /// `bored(R)` holds when the last event on R overshot by more than this
    /// fraction of the expected cost.
    pub bored_margin: f64,
    pub emotions: EmotionMap,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self { decay: 0.9, bored_margin: 0.2, emotions: EmotionMap::default() }
    }
}

impl TrustConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, TrustError> {
        let cfg: TrustConfig = toml::from_str(text).map_err(|e| TrustError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&cfg.decay) {
            return Err(TrustError::Decay(cfg.decay));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrustError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrustError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_toml_str(&text)
    }
}
