//! Distance functions and the aporia level π.
//!
//! Four kinds are provided: absolute and relative numeric distance, token
//! Jaccard distance, and the thresholded theory cost `γ(φ) if γ(φ) < T else 0`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{least_cost_explanation, KnowledgeBase, KnowledgeError, Statement, TruthValue};

#[derive(Debug, Error, PartialEq)]
pub enum DistanceError {
    #[error("{kind} distance needs numeric answers, got `{value}`")]
    NotNumeric { kind: DistanceKind, value: String },
    #[error("theory_cost distance needs a knowledge base; use compute_aporia")]
    NeedsKnowledge,
    #[error("unknown distance kind `{0}`")]
    UnknownKind(String),
    #[error("unknown tokenizer `{0}`")]
    UnknownTokenizer(String),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

/// Answer payload as seen by a distance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Number(f64),
    Text(String),
}

impl AnswerValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AnswerValue::Number(n) => Some(*n),
            AnswerValue::Text(s) => s.trim().parse::<f64>().ok(),
        }
        .filter(|n| n.is_finite())
    }

    pub fn as_text(&self) -> String {
        match self {
            AnswerValue::Number(n) => n.to_string(),
            AnswerValue::Text(s) => s.clone(),
        }
    }
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_text())
    }
}

impl From<&str> for AnswerValue {
    fn from(s: &str) -> Self {
        AnswerValue::Text(s.to_string())
    }
}

impl From<f64> for AnswerValue {
    fn from(n: f64) -> Self {
        AnswerValue::Number(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    NumericAbs,
    #[serde(rename = "numeric_rel")]
    NumericRelative,
    TokenSimilarity,
    TheoryCost,
}

impl DistanceKind {
    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::NumericAbs => "numeric_abs",
            DistanceKind::NumericRelative => "numeric_rel",
            DistanceKind::TokenSimilarity => "token_similarity",
            DistanceKind::TheoryCost => "theory_cost",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceKind {
    type Err = DistanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numeric_abs" => Ok(DistanceKind::NumericAbs),
            "numeric_rel" => Ok(DistanceKind::NumericRelative),
            "token_similarity" => Ok(DistanceKind::TokenSimilarity),
            "theory_cost" => Ok(DistanceKind::TheoryCost),
            other => Err(DistanceError::UnknownKind(other.to_string())),
        }
    }
}

/// Text tokenizer used by the similarity distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Lowercase, split on anything that is not alphanumeric.
    #[default]
    Default,
    /// Lowercase, split on whitespace only.
    Whitespace,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        match self {
            Tokenizer::Default => lower
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect(),
            Tokenizer::Whitespace => lower.split_whitespace().map(str::to_string).collect(),
        }
    }
}

impl FromStr for Tokenizer {
    type Err = DistanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Tokenizer::Default),
            "whitespace" => Ok(Tokenizer::Whitespace),
            other => Err(DistanceError::UnknownTokenizer(other.to_string())),
        }
    }
}

/// Which distance `d` a protocol uses, with its kind-specific parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceSpec {
    NumericAbs,
    #[serde(rename = "numeric_rel")]
    NumericRelative,
    TokenSimilarity {
        #[serde(default)]
        tokenizer: Tokenizer,
    },
    TheoryCost {
        theory: String,
    },
}

impl DistanceSpec {
    pub fn token_similarity() -> Self {
        DistanceSpec::TokenSimilarity { tokenizer: Tokenizer::Default }
    }

    pub fn theory_cost(theory: impl Into<String>) -> Self {
        DistanceSpec::TheoryCost { theory: theory.into() }
    }

    pub fn kind(&self) -> DistanceKind {
        match self {
            DistanceSpec::NumericAbs => DistanceKind::NumericAbs,
            DistanceSpec::NumericRelative => DistanceKind::NumericRelative,
            DistanceSpec::TokenSimilarity { .. } => DistanceKind::TokenSimilarity,
            DistanceSpec::TheoryCost { .. } => DistanceKind::TheoryCost,
        }
    }

    /// Whether every π produced under this spec lies in `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        !matches!(self, DistanceSpec::NumericAbs)
    }

    /// Checks the parameters against a knowledge base.
    pub fn validate(&self, kb: &KnowledgeBase) -> Result<(), DistanceError> {
        if let DistanceSpec::TheoryCost { theory } = self {
            kb.theory(theory)?;
        }
        Ok(())
    }
}

/// Inputs that produced an aporia level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub kind: DistanceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<String>,
    pub r: AnswerValue,
    pub r_prime: AnswerValue,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Decomposition {
    fn new(kind: DistanceKind, r: AnswerValue, r_prime: AnswerValue) -> Self {
        Self { kind, p: None, q: None, r, r_prime, rejected: Vec::new(), gamma: None, threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AporiaResult {
    pub pi: f64,
    pub normalized: bool,
    pub decomposition: Decomposition,
}

/// `π = γ(φ)` if `γ(φ) < T`, otherwise 0.
pub fn theory_distance(theory_id: &str, kb: &KnowledgeBase) -> Result<AporiaResult, DistanceError> {
    rejection_distance(&[theory_id.to_string()], kb, AnswerValue::Text(String::new()), AnswerValue::Text(String::new()))
}

/// Thresholded cost of rejecting a set of theories jointly; γ of a set is the
/// sum of member costs.
fn rejection_distance(
    rejected: &[String],
    kb: &KnowledgeBase,
    r: AnswerValue,
    r_prime: AnswerValue,
) -> Result<AporiaResult, DistanceError> {
    let gamma = rejected
        .iter()
        .map(|id| kb.theory(id).map(|t| t.cost_of_rejecting().value()))
        .sum::<Result<f64, _>>()?;
    let threshold = kb.threshold().value();
    let pi = if gamma < threshold { gamma } else { 0.0 };
    let mut decomposition = Decomposition::new(DistanceKind::TheoryCost, r, r_prime);
    decomposition.rejected = rejected.to_vec();
    decomposition.gamma = Some(gamma);
    decomposition.threshold = Some(threshold);
    Ok(AporiaResult { pi, normalized: true, decomposition })
}

fn numbers(kind: DistanceKind, r: &AnswerValue, r_prime: &AnswerValue) -> Result<(f64, f64), DistanceError> {
    let num = |v: &AnswerValue| {
        v.as_number().ok_or_else(|| DistanceError::NotNumeric { kind, value: v.as_text() })
    };
    Ok((num(r)?, num(r_prime)?))
}

/// Jaccard distance between token sets; two empty sets are identical.
pub fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    let common = a.intersection(b).count();
    1.0 - common as f64 / union as f64
}

/// Distance between two answers under a knowledge-free spec.
pub fn answer_distance(
    r: &AnswerValue,
    r_prime: &AnswerValue,
    spec: &DistanceSpec,
) -> Result<AporiaResult, DistanceError> {
    let kind = spec.kind();
    let pi = match spec {
        DistanceSpec::NumericAbs => {
            let (a, b) = numbers(kind, r, r_prime)?;
            (a - b).abs()
        }
        DistanceSpec::NumericRelative => {
            let (a, b) = numbers(kind, r, r_prime)?;
            let scale = a.abs().max(b.abs()).max(1.0);
            ((a - b).abs() / scale).min(1.0)
        }
        DistanceSpec::TokenSimilarity { tokenizer } => {
            let a: BTreeSet<String> = tokenizer.tokenize(&r.as_text()).into_iter().collect();
            let b: BTreeSet<String> = tokenizer.tokenize(&r_prime.as_text()).into_iter().collect();
            jaccard_distance(&a, &b)
        }
        DistanceSpec::TheoryCost { .. } => return Err(DistanceError::NeedsKnowledge),
    };
    Ok(AporiaResult {
        pi,
        normalized: spec.is_normalized(),
        decomposition: Decomposition::new(kind, r.clone(), r_prime.clone()),
    })
}

/// Theories under which the two answers receive opposite determinate truth
/// values; moving from `r` to `r_prime` requires abandoning one of them.
pub fn rejection_candidates(kb: &KnowledgeBase, r: &AnswerValue, r_prime: &AnswerValue) -> Vec<Vec<String>> {
    let (sr, srp) = (Statement::parse(&r.as_text()), Statement::parse(&r_prime.as_text()));
    kb.theories()
        .filter(|t| {
            match (kb.evaluate_statement(&sr, t), kb.evaluate_statement(&srp, t)) {
                (Some(a), Some(b)) => {
                    a != TruthValue::Undetermined && b != TruthValue::Undetermined && a != b
                }
                _ => false,
            }
        })
        .map(|t| vec![t.id().to_string()])
        .collect()
}

fn identical(spec: &DistanceSpec, r: &AnswerValue, r_prime: &AnswerValue) -> bool {
    match spec {
        DistanceSpec::NumericAbs | DistanceSpec::NumericRelative => {
            matches!((r.as_number(), r_prime.as_number()), (Some(a), Some(b)) if a == b)
        }
        DistanceSpec::TokenSimilarity { .. } => r.as_text() == r_prime.as_text(),
        DistanceSpec::TheoryCost { .. } => {
            Statement::parse(&r.as_text()) == Statement::parse(&r_prime.as_text())
        }
    }
}

/// `π = d(K, P, Q, R, R′)`.
///
/// Knowledge-free kinds delegate to [`answer_distance`]. For theory cost, the
/// theory to reject is chosen by [`least_cost_explanation`] among
/// [`rejection_candidates`]; with no candidate the spec's own theory is used.
pub fn compute_aporia(
    kb: &KnowledgeBase,
    p: Option<&str>,
    q: Option<&str>,
    r: &AnswerValue,
    r_prime: &AnswerValue,
    spec: &DistanceSpec,
) -> Result<AporiaResult, DistanceError> {
    spec.validate(kb)?;
    let mut result = if identical(spec, r, r_prime) {
        AporiaResult {
            pi: 0.0,
            normalized: spec.is_normalized(),
            decomposition: Decomposition::new(spec.kind(), r.clone(), r_prime.clone()),
        }
    } else {
        match spec {
            DistanceSpec::TheoryCost { theory } => {
                let mut candidates = rejection_candidates(kb, r, r_prime);
                if candidates.is_empty() {
                    candidates.push(vec![theory.clone()]);
                }
                let chosen = least_cost_explanation(&r_prime.as_text(), &candidates, kb)?;
                rejection_distance(&chosen.rejected, kb, r.clone(), r_prime.clone())?
            }
            _ => answer_distance(r, r_prime, spec)?,
        }
    };
    result.decomposition.p = p.map(str::to_string);
    result.decomposition.q = q.map(str::to_string);
    Ok(result)
}
