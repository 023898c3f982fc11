//! Theories, rejection costs and the common knowledge shared by Teller and
//! Listener.
//!
//! Propositions are opaque ids. A theory holds some of them and the
//! negations of others; there is no inference engine. Each theory carries a
//! cost in `[0, 1]` (the price of abandoning it) and a knowledge base carries
//! the listener's threshold above which no theory is ever abandoned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pattern that matches every premise.
pub const CATCH_ALL: &str = "*";

#[derive(Debug, Error, PartialEq)]
pub enum KnowledgeError {
    #[error("value {value} for {what} is outside [0, 1]")]
    OutOfRange { what: String, value: f64 },
    #[error("duplicate theory id `{0}`")]
    DuplicateTheory(String),
    #[error("theory `{theory}` holds both `{proposition}` and its negation")]
    SelfContradictory { theory: String, proposition: String },
    #[error("knowledge base `{0}` has no catch-all rule (pattern \"*\")")]
    MissingCatchAll(String),
    #[error("rule pattern must not be empty")]
    EmptyPattern,
    #[error("unknown proposition `{0}`")]
    UnknownProposition(String),
    #[error("unknown theory `{0}`")]
    UnknownTheory(String),
    #[error("no candidate explanations given")]
    NoCandidates,
    #[error("failed to read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("malformed knowledge base: {0}")]
    Parse(String),
}

/// Subjective price of rejecting a theory, or a listener threshold.
/// Always within `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Cost(f64);

impl Cost {
    pub fn new(value: f64) -> Result<Self, KnowledgeError> {
        Self::checked("cost", value)
    }

    fn checked(what: &str, value: f64) -> Result<Self, KnowledgeError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(KnowledgeError::OutOfRange { what: what.to_string(), value })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthValue {
    True,
    False,
    Undetermined,
}

impl TruthValue {
    fn negate(self) -> Self {
        match self {
            TruthValue::True => TruthValue::False,
            TruthValue::False => TruthValue::True,
            TruthValue::Undetermined => TruthValue::Undetermined,
        }
    }
}

/// A named belief bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theory {
    id: String,
    cost: Cost,
    propositions: BTreeSet<String>,
    negations: BTreeSet<String>,
}

impl Theory {
    pub fn new<I, J, S, T>(
        id: impl Into<String>,
        cost: f64,
        propositions: I,
        negations: J,
    ) -> Result<Self, KnowledgeError>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        let id = id.into();
        let cost = Cost::checked(&format!("cost of theory `{id}`"), cost)?;
        let propositions: BTreeSet<String> = propositions.into_iter().map(Into::into).collect();
        let negations: BTreeSet<String> = negations.into_iter().map(Into::into).collect();
        if let Some(p) = propositions.intersection(&negations).next() {
            return Err(KnowledgeError::SelfContradictory { theory: id, proposition: p.clone() });
        }
        Ok(Self { id, cost, propositions, negations })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The cost of rejecting this theory.
    pub fn cost_of_rejecting(&self) -> Cost {
        self.cost
    }

    /// Membership lookup. Registration of the proposition is the caller's
    /// concern; see [`KnowledgeBase::evaluate`].
    pub fn evaluate(&self, proposition: &str) -> TruthValue {
        if self.propositions.contains(proposition) {
            TruthValue::True
        } else if self.negations.contains(proposition) {
            TruthValue::False
        } else {
            TruthValue::Undetermined
        }
    }

    pub fn propositions(&self) -> impl Iterator<Item = &str> {
        self.propositions.iter().map(String::as_str)
    }

    pub fn negations(&self) -> impl Iterator<Item = &str> {
        self.negations.iter().map(String::as_str)
    }
}

/// A proposition id, possibly negated. Parsed from answer payloads such as
/// `"they-are-right"` or `"not they-are-right"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub proposition: String,
    pub negated: bool,
}

impl Statement {
    pub fn parse(text: &str) -> Self {
        let mut rest = text.trim().to_lowercase();
        let mut negated = false;
        loop {
            let stripped = if let Some(s) = rest.strip_prefix("not ") {
                s
            } else if let Some(s) = rest.strip_prefix('¬') {
                s
            } else if let Some(s) = rest.strip_prefix('!') {
                s
            } else {
                break;
            };
            rest = stripped.trim_start().to_string();
            negated = !negated;
        }
        Self { proposition: rest, negated }
    }
}

/// Premise pattern mapped to the listener's canonical answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub pattern: String,
    pub answer: String,
}

impl Rule {
    pub fn is_catch_all(&self) -> bool {
        self.pattern == CATCH_ALL
    }

    fn matches(&self, haystacks: &[String]) -> bool {
        if self.is_catch_all() {
            return true;
        }
        let needle = self.pattern.to_lowercase();
        haystacks.iter().any(|h| h.contains(&needle))
    }
}

/// A set of rejected theories together with its joint cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub rejected: Vec<String>,
    pub total_cost: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTheory {
    id: String,
    cost: f64,
    #[serde(default)]
    propositions: Vec<String>,
    #[serde(default)]
    negations: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKnowledgeBase {
    id: String,
    threshold: f64,
    #[serde(default)]
    default_question: Option<String>,
    #[serde(default)]
    propositions: Vec<String>,
    #[serde(default)]
    theories: Vec<RawTheory>,
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    pattern: String,
    answer: String,
}

/// The common knowledge `K`: theories, responder rules and the threshold `T`.
///
/// Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnowledgeBase {
    id: String,
    threshold: Cost,
    default_question: Option<String>,
    theories: BTreeMap<String, Theory>,
    registered: BTreeSet<String>,
    rules: Vec<Rule>,
}

impl KnowledgeBase {
    pub fn new(
        id: impl Into<String>,
        threshold: f64,
        theories: Vec<Theory>,
        rules: Vec<Rule>,
    ) -> Result<Self, KnowledgeError> {
        Self::build(id.into(), threshold, None, Vec::new(), theories, rules)
    }

    fn build(
        id: String,
        threshold: f64,
        default_question: Option<String>,
        extra_propositions: Vec<String>,
        theories: Vec<Theory>,
        rules: Vec<Rule>,
    ) -> Result<Self, KnowledgeError> {
        let threshold = Cost::checked("threshold", threshold)?;
        let mut registered: BTreeSet<String> = extra_propositions.into_iter().collect();
        let mut by_id = BTreeMap::new();
        for theory in theories {
            registered.extend(theory.propositions.iter().cloned());
            registered.extend(theory.negations.iter().cloned());
            let key = theory.id.clone();
            if by_id.insert(key.clone(), theory).is_some() {
                return Err(KnowledgeError::DuplicateTheory(key));
            }
        }
        if rules.iter().any(|r| r.pattern.is_empty()) {
            return Err(KnowledgeError::EmptyPattern);
        }
        if !rules.iter().any(Rule::is_catch_all) {
            return Err(KnowledgeError::MissingCatchAll(id));
        }
        Ok(Self { id, threshold, default_question, theories: by_id, registered, rules })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, KnowledgeError> {
        let raw: RawKnowledgeBase =
            toml::from_str(text).map_err(|e| KnowledgeError::Parse(e.to_string()))?;
        let theories = raw
            .theories
            .into_iter()
            .map(|t| Theory::new(t.id, t.cost, t.propositions, t.negations))
            .collect::<Result<Vec<_>, _>>()?;
        let rules = raw
            .rules
            .into_iter()
            .map(|r| Rule { pattern: r.pattern, answer: r.answer })
            .collect();
        Self::build(raw.id, raw.threshold, raw.default_question, raw.propositions, theories, rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KnowledgeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn threshold(&self) -> Cost {
        self.threshold
    }

    /// Question assumed when a premise arrives without one.
    pub fn default_question(&self) -> Option<&str> {
        self.default_question.as_deref()
    }

    pub fn theory(&self, id: &str) -> Result<&Theory, KnowledgeError> {
        self.theories.get(id).ok_or_else(|| KnowledgeError::UnknownTheory(id.to_string()))
    }

    pub fn theories(&self) -> impl Iterator<Item = &Theory> {
        self.theories.values()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_registered(&self, proposition: &str) -> bool {
        self.registered.contains(proposition)
    }

    /// Evaluates a registered proposition under one of this base's theories.
    pub fn evaluate(&self, proposition: &str, theory_id: &str) -> Result<TruthValue, KnowledgeError> {
        if !self.is_registered(proposition) {
            return Err(KnowledgeError::UnknownProposition(proposition.to_string()));
        }
        Ok(self.theory(theory_id)?.evaluate(proposition))
    }

    /// Like [`evaluate`](Self::evaluate) but for a possibly negated statement.
    /// Returns `None` when the proposition is not registered.
    pub fn evaluate_statement(&self, statement: &Statement, theory: &Theory) -> Option<TruthValue> {
        if !self.is_registered(&statement.proposition) {
            return None;
        }
        let value = theory.evaluate(&statement.proposition);
        Some(if statement.negated { value.negate() } else { value })
    }

    /// First matching rule's answer. Patterns match case-insensitively as
    /// substrings of the premise or the question.
    pub fn respond(&self, premise: &str, question: &str) -> &str {
        let haystacks = [premise.to_lowercase(), question.to_lowercase()];
        self.rules
            .iter()
            .find(|r| r.matches(&haystacks))
            .map(|r| r.answer.as_str())
            .expect("catch-all rule is enforced at construction")
    }

    /// Returns a new base with one more theory.
    pub fn with_theory(&self, theory: Theory) -> Result<Self, KnowledgeError> {
        let mut theories: Vec<Theory> = self.theories.values().cloned().collect();
        theories.push(theory);
        let extra = self.registered.iter().cloned().collect();
        Self::build(
            self.id.clone(),
            self.threshold.value(),
            self.default_question.clone(),
            extra,
            theories,
            self.rules.clone(),
        )
    }
}

/// Picks the candidate set of theories whose joint rejection is cheapest.
///
/// Ties go to the lexicographically smallest sorted id list. The
/// `observation` is carried for the caller's records only; candidates are
/// assumed to already explain it.
pub fn least_cost_explanation(
    _observation: &str,
    candidates: &[Vec<String>],
    kb: &KnowledgeBase,
) -> Result<Explanation, KnowledgeError> {
    let mut best: Option<Explanation> = None;
    for candidate in candidates {
        let mut ids = candidate.clone();
        ids.sort();
        ids.dedup();
        let total_cost = ids
            .iter()
            .map(|id| kb.theory(id).map(|t| t.cost.value()))
            .sum::<Result<f64, _>>()?;
        let better = match &best {
            None => true,
            Some(b) => total_cost < b.total_cost || (total_cost == b.total_cost && ids < b.rejected),
        };
        if better {
            best = Some(Explanation { rejected: ids, total_cost });
        }
    }
    best.ok_or(KnowledgeError::NoCandidates)
}
