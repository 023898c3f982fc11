//! Protocol fixture directories: `kb.toml`, `protocol.toml` and an optional
//! tone lexicon.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::distance::{AnswerValue, DistanceError, DistanceKind, DistanceSpec};
use crate::emotion::{EmotionError, ToneLexicon};
use crate::knowledge::{KnowledgeBase, KnowledgeError};
use crate::protocol::FALLBACK_QUESTION;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Emotion(#[from] EmotionError),
    #[error("theory_cost distance needs a theory")]
    MissingTheory,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    premise: String,
    question: Option<String>,
    reveal: AnswerValue,
    distance: Option<String>,
    theory: Option<String>,
    lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub knowledge: KnowledgeBase,
    pub premise: String,
    /// Explicit Q, if the teller states one.
    pub question: Option<String>,
    pub reveal: AnswerValue,
    pub distance: DistanceSpec,
    pub lexicon: Option<ToneLexicon>,
}

fn read(path: &Path) -> Result<String, FixtureError> {
    std::fs::read_to_string(path).map_err(|e| FixtureError::Io { path: path.display().to_string(), msg: e.to_string() })
}

/// Builds a spec from a kind name and the optional theory parameter.
pub fn distance_spec(kind: &str, theory: Option<&str>) -> Result<DistanceSpec, FixtureError> {
    Ok(match kind.parse::<DistanceKind>()? {
        DistanceKind::NumericAbs => DistanceSpec::NumericAbs,
        DistanceKind::NumericRelative => DistanceSpec::NumericRelative,
        DistanceKind::TokenSimilarity => DistanceSpec::token_similarity(),
        DistanceKind::TheoryCost => DistanceSpec::theory_cost(theory.ok_or(FixtureError::MissingTheory)?),
    })
}

impl Fixture {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let dir = dir.as_ref();
        let knowledge = KnowledgeBase::load(dir.join("kb.toml"))?;
        let proto_path = dir.join("protocol.toml");
        let raw: RawProtocol = toml::from_str(&read(&proto_path)?)
            .map_err(|e| FixtureError::Parse { path: proto_path.display().to_string(), msg: e.to_string() })?;
        let distance = distance_spec(raw.distance.as_deref().unwrap_or("token_similarity"), raw.theory.as_deref())?;
        distance.validate(&knowledge)?;
        let lexicon = raw.lexicon.map(|p| ToneLexicon::load(dir.join(p))).transpose()?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| knowledge.id().to_string());
        Ok(Self {
            name,
            knowledge,
            premise: raw.premise,
            question: raw.question,
            reveal: raw.reveal,
            distance,
            lexicon,
        })
    }

    /// Q as the listener uses it: explicit, else the kb's default, else a
    /// generic "what next".
    pub fn effective_question(&self) -> String {
        self.question
            .clone()
            .or_else(|| self.knowledge.default_question().map(str::to_string))
            .unwrap_or_else(|| FALLBACK_QUESTION.to_string())
    }

    pub fn lexicon_or_default(&self) -> ToneLexicon {
        self.lexicon.clone().unwrap_or_else(ToneLexicon::default_lexicon)
    }
}
