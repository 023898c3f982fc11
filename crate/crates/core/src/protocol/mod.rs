//! Three-message session engine shared by Σ-protocols and aporia protocols.
//!
//! A [`Session`] is an immutable value: [`Session::step`] returns a new
//! session and leaves the receiver untouched. Both protocol shapes run on the
//! same engine; only the legal message order and the final evaluation differ
//! (the decision `D` for Σ, the aporia level for aporia).
//!
//! Callers supply every timestamp. The engine never reads a clock, which keeps
//! transcripts replayable.

pub mod bank;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::distance::{compute_aporia, AnswerValue, AporiaResult, DistanceError, DistanceSpec};
use crate::knowledge::KnowledgeBase;

/// Question assumed when neither the premise nor the knowledge base provides one.
pub const FALLBACK_QUESTION: &str = "What is going to happen next?";

/// Seconds with millisecond resolution, stored as whole milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_millis(ms: i64) -> Self {
        Self(ms)
    }

    pub fn from_secs(secs: f64) -> Self {
        Self((secs * 1000.0).round() as i64)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn secs(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s", self.secs())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.secs())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let secs = f64::deserialize(d)?;
        if !secs.is_finite() {
            return Err(serde::de::Error::custom("timestamp must be finite"));
        }
        Ok(Timestamp::from_secs(secs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Number(f64),
    Text(String),
    Premise { p: String, q: Option<String> },
}

impl Payload {
    pub fn text(s: impl Into<String>) -> Self {
        Payload::Text(s.into())
    }

    pub fn premise(p: impl Into<String>, q: Option<&str>) -> Self {
        Payload::Premise { p: p.into(), q: q.map(str::to_string) }
    }

    fn is_blank(&self) -> bool {
        match self {
            Payload::Number(n) => !n.is_finite(),
            Payload::Text(s) => s.trim().is_empty(),
            Payload::Premise { p, .. } => p.trim().is_empty(),
        }
    }

    /// The payload as an answer value, if it is one.
    pub fn as_answer(&self) -> Option<AnswerValue> {
        match self {
            Payload::Number(n) => Some(AnswerValue::Number(*n)),
            Payload::Text(s) => Some(AnswerValue::Text(s.clone())),
            Payload::Premise { .. } => None,
        }
    }
}

impl From<AnswerValue> for Payload {
    fn from(v: AnswerValue) -> Self {
        match v {
            AnswerValue::Number(n) => Payload::Number(n),
            AnswerValue::Text(s) => Payload::Text(s),
        }
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Number(n) => write!(f, "{n}"),
            Payload::Text(s) => f.write_str(s),
            Payload::Premise { p, q: Some(q) } => write!(f, "{p} / {q}"),
            Payload::Premise { p, q: None } => f.write_str(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Setup,
    Challenge,
    Response,
    Premise,
    Question,
    Answer,
    Reveal,
    EmotionReport,
    /// Closes a PoET session export; never legal inside a protocol run.
    Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub payload: Payload,
    pub timestamp: Timestamp,
    pub implicit: bool,
}

impl ProtocolMessage {
    pub fn new(kind: MessageKind, payload: Payload, timestamp: Timestamp) -> Self {
        Self { kind, payload, timestamp, implicit: false }
    }

    fn synthesized(kind: MessageKind, payload: Payload, timestamp: Timestamp) -> Self {
        Self { kind, payload, timestamp, implicit: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Sigma,
    Aporia,
}

impl ProtocolKind {
    /// Full message order. For aporia runs `Question` is skipped when the
    /// premise carries Q, and `EmotionReport` is an optional trailer.
    pub fn legal_order(self) -> &'static [MessageKind] {
        match self {
            ProtocolKind::Sigma => &[MessageKind::Setup, MessageKind::Challenge, MessageKind::Response],
            ProtocolKind::Aporia => &[
                MessageKind::Premise,
                MessageKind::Question,
                MessageKind::Answer,
                MessageKind::Reveal,
                MessageKind::EmotionReport,
            ],
        }
    }

    /// (opener, responder) role names.
    pub fn roles(self) -> (&'static str, &'static str) {
        match self {
            ProtocolKind::Sigma => ("prover", "verifier"),
            ProtocolKind::Aporia => ("teller", "listener"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    AwaitSetup,
    AwaitChallenge,
    AwaitResponse,
    AwaitPremise,
    AwaitQuestion,
    AwaitAnswer,
    AwaitReveal,
    /// Final message received; the outcome is set.
    Complete,
    /// Aporia run with its emotion report appended.
    Reported,
    Aborted,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Decision of a Σ run, or an aborted run of either kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Decision(Decision),
    Aporia(AporiaResult),
}

impl Outcome {
    pub fn aporia(&self) -> Option<&AporiaResult> {
        match self {
            Outcome::Aporia(r) => Some(r),
            Outcome::Decision(_) => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("{got:?} is not legal in phase {phase}")]
    OutOfOrder { phase: Phase, got: MessageKind },
    #[error("timestamp {got} precedes previous message at {previous}")]
    TimestampRegression { previous: Timestamp, got: Timestamp },
    #[error("payload of {kind:?} message: {reason}")]
    PayloadMismatch { kind: MessageKind, reason: String },
    #[error("premise carries no question and implicit questions are disabled")]
    MissingQuestion,
    #[error("implicit {0:?} is not allowed by this session's configuration")]
    ImplicitNotAllowed(MessageKind),
    #[error("nothing implicit to resolve in phase {0}")]
    NothingImplicit(Phase),
    #[error("no responder registered for knowledge base `{0}`")]
    NoResponder(String),
    #[error("session already finished")]
    Finished,
    #[error("unknown distance spec `{0}`")]
    UnknownDistance(String),
    #[error("unknown knowledge base `{0}`")]
    UnknownKnowledge(String),
    #[error("malformed configuration: {0}")]
    MalformedConfig(String),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error("malformed transcript line {line}: {msg}")]
    Transcript { line: usize, msg: String },
}

/// A Σ-protocol instance: common input `x`, relation `x R w` and decision `D`.
///
/// `decide` must be deterministic.
pub trait SigmaInstance: fmt::Debug + Send + Sync {
    fn common_input(&self) -> Payload;
    fn relation_holds(&self, witness: &Payload) -> bool;
    fn decide(&self, setup: &Payload, challenge: &Payload, response: &Payload) -> bool;
}

/// Produces the listener's answer `R` from `(P, Q)`.
pub trait Responder: fmt::Debug + Send + Sync {
    fn respond(&self, premise: &str, question: &str) -> String;
}

impl Responder for KnowledgeBase {
    fn respond(&self, premise: &str, question: &str) -> String {
        KnowledgeBase::respond(self, premise, question).to_string()
    }
}

/// Serializable aporia session configuration, resolved against a
/// [`ProtocolRegistry`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AporiaConfig {
    pub knowledge: String,
    pub distance: String,
    #[serde(default)]
    pub implicit_q_allowed: bool,
    #[serde(default)]
    pub implicit_r_allowed: bool,
}

/// Fully resolved aporia configuration.
#[derive(Debug, Clone)]
pub struct AporiaSetup {
    pub knowledge: Arc<KnowledgeBase>,
    pub distance: DistanceSpec,
    pub implicit_q_allowed: bool,
    pub implicit_r_allowed: bool,
    pub responder: Option<Arc<dyn Responder>>,
}

impl AporiaSetup {
    /// Setup whose responder is the knowledge base's own rule table.
    pub fn with_rules(knowledge: Arc<KnowledgeBase>, distance: DistanceSpec) -> Self {
        let responder: Arc<dyn Responder> = knowledge.clone();
        Self {
            knowledge,
            distance,
            implicit_q_allowed: true,
            implicit_r_allowed: true,
            responder: Some(responder),
        }
    }

    pub fn explicit_only(mut self) -> Self {
        self.implicit_q_allowed = false;
        self.implicit_r_allowed = false;
        self
    }
}

pub enum SessionConfig {
    Sigma(Arc<dyn SigmaInstance>),
    Aporia(AporiaConfig),
}

/// Named knowledge bases, responders and distance specs.
///
/// Read-only once sessions start being created.
#[derive(Debug, Default, Clone)]
pub struct ProtocolRegistry {
    knowledge: BTreeMap<String, Arc<KnowledgeBase>>,
    responders: BTreeMap<String, Arc<dyn Responder>>,
    distances: BTreeMap<String, DistanceSpec>,
}

impl ProtocolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a knowledge base and its rule table as responder.
    pub fn register_knowledge(&mut self, kb: KnowledgeBase) -> Arc<KnowledgeBase> {
        let kb = Arc::new(kb);
        self.register_knowledge_only(kb.clone());
        self.responders.insert(kb.id().to_string(), kb.clone());
        kb
    }

    /// Registers a knowledge base without a responder; implicit answers will
    /// fail until one is added with [`register_responder`](Self::register_responder).
    pub fn register_knowledge_only(&mut self, kb: Arc<KnowledgeBase>) {
        self.knowledge.insert(kb.id().to_string(), kb);
    }

    pub fn register_responder(&mut self, knowledge_id: impl Into<String>, responder: Arc<dyn Responder>) {
        self.responders.insert(knowledge_id.into(), responder);
    }

    pub fn register_distance(&mut self, name: impl Into<String>, spec: DistanceSpec) {
        self.distances.insert(name.into(), spec);
    }

    pub fn knowledge(&self, id: &str) -> Option<&Arc<KnowledgeBase>> {
        self.knowledge.get(id)
    }

    pub fn new_session(&self, config: SessionConfig) -> Result<Session, ProtocolError> {
        match config {
            SessionConfig::Sigma(instance) => Ok(Session::sigma(instance)),
            SessionConfig::Aporia(cfg) => {
                let distance = self
                    .distances
                    .get(&cfg.distance)
                    .cloned()
                    .ok_or_else(|| ProtocolError::UnknownDistance(cfg.distance.clone()))?;
                let knowledge = self
                    .knowledge
                    .get(&cfg.knowledge)
                    .cloned()
                    .ok_or_else(|| ProtocolError::UnknownKnowledge(cfg.knowledge.clone()))?;
                Session::aporia(AporiaSetup {
                    responder: self.responders.get(&cfg.knowledge).cloned(),
                    knowledge,
                    distance,
                    implicit_q_allowed: cfg.implicit_q_allowed,
                    implicit_r_allowed: cfg.implicit_r_allowed,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Binding {
    Sigma(Arc<dyn SigmaInstance>),
    Aporia(AporiaSetup),
}

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

fn next_session_id() -> String {
    format!("session-{}", NEXT_SESSION.fetch_add(1, Ordering::Relaxed))
}

/// One protocol run in progress.
#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    kind: ProtocolKind,
    binding: Binding,
    phase: Phase,
    messages: Vec<ProtocolMessage>,
    outcome: Option<Outcome>,
}

impl Session {
    pub fn sigma(instance: Arc<dyn SigmaInstance>) -> Self {
        Self {
            id: next_session_id(),
            kind: ProtocolKind::Sigma,
            binding: Binding::Sigma(instance),
            phase: Phase::AwaitSetup,
            messages: Vec::new(),
            outcome: None,
        }
    }

    pub fn aporia(setup: AporiaSetup) -> Result<Self, ProtocolError> {
        setup
            .distance
            .validate(&setup.knowledge)
            .map_err(|e| ProtocolError::MalformedConfig(e.to_string()))?;
        Ok(Self {
            id: next_session_id(),
            kind: ProtocolKind::Aporia,
            binding: Binding::Aporia(setup),
            phase: Phase::AwaitPremise,
            messages: Vec::new(),
            outcome: None,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn messages(&self) -> &[ProtocolMessage] {
        &self.messages
    }

    /// The Σ instance's common input `x`, if this is a Σ session.
    pub fn common_input(&self) -> Option<Payload> {
        match &self.binding {
            Binding::Sigma(inst) => Some(inst.common_input()),
            Binding::Aporia(_) => None,
        }
    }

    fn setup(&self) -> Option<&AporiaSetup> {
        match &self.binding {
            Binding::Aporia(s) => Some(s),
            Binding::Sigma(_) => None,
        }
    }

    fn last_timestamp(&self) -> Timestamp {
        self.messages.last().map(|m| m.timestamp).unwrap_or(Timestamp::ZERO)
    }

    fn payload_of(&self, kind: MessageKind) -> Option<&Payload> {
        self.messages.iter().find(|m| m.kind == kind).map(|m| &m.payload)
    }

    fn premise(&self) -> Option<(&str, Option<&str>)> {
        match self.payload_of(MessageKind::Premise) {
            Some(Payload::Premise { p, q }) => Some((p.as_str(), q.as_deref())),
            _ => None,
        }
    }

    /// Q as the listener sees it: the premise's own question or the
    /// materialized one.
    pub fn question(&self) -> Option<String> {
        let (_, q) = self.premise()?;
        q.map(str::to_string).or_else(|| self.payload_of(MessageKind::Question).map(|p| p.to_string()))
    }

    /// Feeds one message. Implicit Q or R is materialized first when the
    /// message skips over it and the configuration allows that.
    pub fn step(&self, msg: ProtocolMessage) -> Result<Session, ProtocolError> {
        if let Some(previous) = self.messages.last().map(|m| m.timestamp) {
            if msg.timestamp < previous {
                return Err(ProtocolError::TimestampRegression { previous, got: msg.timestamp });
            }
        }
        if let Some(setup) = self.setup() {
            let skipped = match (self.phase, msg.kind) {
                (Phase::AwaitQuestion, MessageKind::Answer | MessageKind::Reveal) => {
                    setup.implicit_q_allowed.then_some(MessageKind::Question)
                }
                (Phase::AwaitAnswer, MessageKind::Reveal) => {
                    setup.implicit_r_allowed.then_some(MessageKind::Answer)
                }
                _ => None,
            };
            if skipped.is_some() {
                let mut filled = self.resolve_implicit()?;
                filled.timestamp = msg.timestamp;
                return self.step(filled)?.step(msg);
            }
        }
        self.apply(msg)
    }

    fn apply(&self, msg: ProtocolMessage) -> Result<Session, ProtocolError> {
        use MessageKind as K;
        use Phase as P;

        let mismatch = |reason: &str| ProtocolError::PayloadMismatch { kind: msg.kind, reason: reason.into() };
        if !msg.implicit && msg.payload.is_blank() {
            return Err(mismatch("empty payload"));
        }
        if msg.kind != K::Premise && matches!(msg.payload, Payload::Premise { .. }) {
            return Err(mismatch("premise payload outside a premise message"));
        }
        if msg.implicit {
            let allowed = match (msg.kind, self.setup()) {
                (K::Question, Some(s)) => s.implicit_q_allowed,
                (K::Answer, Some(s)) => s.implicit_r_allowed,
                _ => false,
            };
            if !allowed {
                return Err(ProtocolError::ImplicitNotAllowed(msg.kind));
            }
        }

        let mut next = self.clone();
        next.phase = match (self.phase, msg.kind) {
            (P::AwaitSetup, K::Setup) => P::AwaitChallenge,
            (P::AwaitChallenge, K::Challenge) => P::AwaitResponse,
            (P::AwaitResponse, K::Response) => P::Complete,
            (P::AwaitPremise, K::Premise) => match &msg.payload {
                Payload::Premise { q: Some(q), .. } if !q.trim().is_empty() => P::AwaitAnswer,
                Payload::Premise { .. } => {
                    if self.setup().is_some_and(|s| s.implicit_q_allowed) {
                        P::AwaitQuestion
                    } else {
                        return Err(ProtocolError::MissingQuestion);
                    }
                }
                _ => return Err(mismatch("expected {p, q}")),
            },
            (P::AwaitQuestion, K::Question) => P::AwaitAnswer,
            (P::AwaitAnswer, K::Answer) => P::AwaitReveal,
            (P::AwaitReveal, K::Reveal) => P::Complete,
            (P::Complete, K::EmotionReport) if self.kind == ProtocolKind::Aporia => P::Reported,
            (phase, got) => return Err(ProtocolError::OutOfOrder { phase, got }),
        };
        next.messages.push(msg);

        if next.phase == P::Complete {
            next.outcome = Some(next.evaluate()?);
        }
        Ok(next)
    }

    fn evaluate(&self) -> Result<Outcome, ProtocolError> {
        match &self.binding {
            Binding::Sigma(instance) => {
                let get = |k| self.payload_of(k).expect("phase order guarantees presence");
                let accepted =
                    instance.decide(get(MessageKind::Setup), get(MessageKind::Challenge), get(MessageKind::Response));
                Ok(Outcome::Decision(if accepted { Decision::Accept } else { Decision::Reject }))
            }
            Binding::Aporia(setup) => {
                let answer = |k| {
                    self.payload_of(k).and_then(Payload::as_answer).ok_or(ProtocolError::PayloadMismatch {
                        kind: k,
                        reason: "expected text or number".into(),
                    })
                };
                let r = answer(MessageKind::Answer)?;
                let r_prime = answer(MessageKind::Reveal)?;
                let (p, _) = self.premise().expect("phase order guarantees a premise");
                let q = self.question();
                let result = compute_aporia(&setup.knowledge, Some(p), q.as_deref(), &r, &r_prime, &setup.distance)
                    .map_err(|e| match e {
                        DistanceError::NotNumeric { .. } => ProtocolError::PayloadMismatch {
                            kind: MessageKind::Reveal,
                            reason: e.to_string(),
                        },
                        other => ProtocolError::Distance(other),
                    })?;
                Ok(Outcome::Aporia(result))
            }
        }
    }

    /// Synthesizes the message the current phase is waiting for, flagged
    /// implicit. The session itself is not changed.
    pub fn resolve_implicit(&self) -> Result<ProtocolMessage, ProtocolError> {
        let setup = self.setup().ok_or(ProtocolError::NothingImplicit(self.phase))?;
        let ts = self.last_timestamp();
        match self.phase {
            Phase::AwaitQuestion => {
                if !setup.implicit_q_allowed {
                    return Err(ProtocolError::ImplicitNotAllowed(MessageKind::Question));
                }
                let q = setup.knowledge.default_question().unwrap_or(FALLBACK_QUESTION);
                Ok(ProtocolMessage::synthesized(MessageKind::Question, Payload::text(q), ts))
            }
            Phase::AwaitAnswer => {
                if !setup.implicit_r_allowed {
                    return Err(ProtocolError::ImplicitNotAllowed(MessageKind::Answer));
                }
                let responder = setup
                    .responder
                    .as_ref()
                    .ok_or_else(|| ProtocolError::NoResponder(setup.knowledge.id().to_string()))?;
                let (p, _) = self.premise().expect("AwaitAnswer follows a premise");
                let q = self.question().unwrap_or_default();
                let r = responder.respond(p, &q);
                Ok(ProtocolMessage::synthesized(MessageKind::Answer, Payload::Text(r), ts))
            }
            phase => Err(ProtocolError::NothingImplicit(phase)),
        }
    }

    /// Ends an unfinished run without an aporia level or decision.
    pub fn abort(&self) -> Result<Session, ProtocolError> {
        if matches!(self.phase, Phase::Complete | Phase::Reported | Phase::Aborted) {
            return Err(ProtocolError::Finished);
        }
        let mut next = self.clone();
        next.phase = Phase::Aborted;
        next.outcome = Some(Outcome::Decision(Decision::Aborted));
        Ok(next)
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            session_id: self.id.clone(),
            protocol_kind: self.kind,
            messages: self.messages.clone(),
            outcome: self.outcome.clone(),
        }
    }

    /// Re-steps a recorded transcript into this (fresh) session.
    pub fn replay(&self, transcript: &Transcript) -> Result<Session, ProtocolError> {
        let mut session = self.clone();
        for msg in &transcript.messages {
            session = session.step(msg.clone())?;
        }
        if matches!(transcript.outcome, Some(Outcome::Decision(Decision::Aborted))) {
            session = session.abort()?;
        }
        Ok(session)
    }
}

/// Immutable record of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub session_id: String,
    pub protocol_kind: ProtocolKind,
    pub messages: Vec<ProtocolMessage>,
    pub outcome: Option<Outcome>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct MessageLine {
    pub seq: u64,
    pub kind: MessageKind,
    pub payload: Payload,
    pub timestamp: Timestamp,
    pub implicit: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct OutcomeLine {
    pub outcome: Option<Outcome>,
}

impl Transcript {
    pub fn kinds(&self) -> Vec<MessageKind> {
        self.messages.iter().map(|m| m.kind).collect()
    }

    /// One line per message (`seq, kind, payload, timestamp, implicit`), then
    /// a final `{"outcome": …}` line. Every line ends with `\n`.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for (i, m) in self.messages.iter().enumerate() {
            let line = MessageLine {
                seq: i as u64 + 1,
                kind: m.kind,
                payload: m.payload.clone(),
                timestamp: m.timestamp,
                implicit: m.implicit,
            };
            out.push_str(&serde_json::to_string(&line).expect("transcript lines serialize"));
            out.push('\n');
        }
        let last = OutcomeLine { outcome: self.outcome.clone() };
        out.push_str(&serde_json::to_string(&last).expect("outcome line serializes"));
        out.push('\n');
        out
    }

    /// Parses the format written by [`to_ndjson`](Self::to_ndjson). The
    /// protocol kind is inferred from the first message (aporia when empty).
    pub fn from_ndjson(session_id: impl Into<String>, text: &str) -> Result<Self, ProtocolError> {
        let lines: Vec<(usize, &str)> =
            text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l)).collect();
        let Some(((last_no, last), body)) = lines.split_last() else {
            return Err(ProtocolError::Transcript { line: 0, msg: "empty transcript".into() });
        };
        let outcome: OutcomeLine = serde_json::from_str(last)
            .map_err(|e| ProtocolError::Transcript { line: *last_no, msg: e.to_string() })?;
        let mut messages = Vec::with_capacity(body.len());
        for (expected_seq, (no, line)) in body.iter().enumerate() {
            let parsed: MessageLine = serde_json::from_str(line)
                .map_err(|e| ProtocolError::Transcript { line: *no, msg: e.to_string() })?;
            if parsed.seq != expected_seq as u64 + 1 {
                return Err(ProtocolError::Transcript { line: *no, msg: format!("unexpected seq {}", parsed.seq) });
            }
            messages.push(ProtocolMessage {
                kind: parsed.kind,
                payload: parsed.payload,
                timestamp: parsed.timestamp,
                implicit: parsed.implicit,
            });
        }
        let protocol_kind = match messages.first().map(|m| m.kind) {
            Some(MessageKind::Setup | MessageKind::Challenge | MessageKind::Response) => ProtocolKind::Sigma,
            _ => ProtocolKind::Aporia,
        };
        Ok(Self { session_id: session_id.into(), protocol_kind, messages, outcome: outcome.outcome })
    }
}

#[cfg(test)]
mod tests {
    use super::bank::{BankProver, Capability, SimulatedBank};
    use super::*;

    const TOILET_KB: &str = r#"
        id = "toilet"
        threshold = 0.8
        default_question = "What is happening?"
        [[theories]]
        id = "social-conventions"
        cost = 0.6
        propositions = ["guests-dine"]
        [[rules]]
        pattern = "ready to start"
        answer = "they dine convivially"
        [[rules]]
        pattern = "*"
        answer = "unknown"
    "#;

    fn registry() -> ProtocolRegistry {
        let mut reg = ProtocolRegistry::new();
        reg.register_knowledge(KnowledgeBase::from_toml_str(TOILET_KB).unwrap());
        reg.register_distance("similarity", DistanceSpec::token_similarity());
        reg
    }

    fn cfg(implicit: bool) -> AporiaConfig {
        AporiaConfig {
            knowledge: "toilet".into(),
            distance: "similarity".into(),
            implicit_q_allowed: implicit,
            implicit_r_allowed: implicit,
        }
    }

    fn ts(ms: i64) -> Timestamp {
        Timestamp::from_millis(ms)
    }

    const PREMISE: &str = "The household's wife says they are ready to start.";

    #[test]
    fn new_sessions_start_in_initial_phase() {
        let reg = registry();
        let s = reg.new_session(SessionConfig::Aporia(cfg(true))).unwrap();
        assert_eq!(s.phase(), Phase::AwaitPremise);
        assert!(s.transcript().messages.is_empty());

        let bank = SimulatedBank::new(1000, Capability(1));
        let sigma = reg.new_session(SessionConfig::Sigma(Arc::new(bank.instance()))).unwrap();
        assert_eq!(sigma.phase(), Phase::AwaitSetup);
        assert_eq!(sigma.common_input(), Some(Payload::Number(1000.0)));

        let mut bad = cfg(true);
        bad.distance = "embedding".into();
        assert_eq!(
            reg.new_session(SessionConfig::Aporia(bad)).unwrap_err(),
            ProtocolError::UnknownDistance("embedding".into())
        );
    }

    #[test]
    fn theory_cost_config_must_reference_known_theory() {
        let mut reg = registry();
        reg.register_distance("bad-theory", DistanceSpec::theory_cost("astrology"));
        let mut c = cfg(true);
        c.distance = "bad-theory".into();
        assert!(matches!(
            reg.new_session(SessionConfig::Aporia(c)),
            Err(ProtocolError::MalformedConfig(_))
        ));
    }

    fn run_sigma(prover: BankProver, n: u64) -> Session {
        let mut bank = SimulatedBank::new(1000, Capability(42));
        let s = Session::sigma(Arc::new(bank.instance()));
        let s = s.step(ProtocolMessage::new(MessageKind::Setup, prover.setup(), ts(0))).unwrap();
        let e = Payload::Number(n as f64);
        let s = s.step(ProtocolMessage::new(MessageKind::Challenge, e.clone(), ts(100))).unwrap();
        let z = prover.respond(&mut bank, &e);
        s.step(ProtocolMessage::new(MessageKind::Response, z, ts(3000))).unwrap()
    }

    #[test]
    fn sigma_accepts_token_holder_and_rejects_bluffer() {
        let honest = run_sigma(BankProver { token: Some(Capability(42)) }, 37);
        assert_eq!(honest.outcome(), Some(&Outcome::Decision(Decision::Accept)));
        let bluff = run_sigma(BankProver { token: None }, 37);
        assert_eq!(bluff.outcome(), Some(&Outcome::Decision(Decision::Reject)));
        let wrong_token = run_sigma(BankProver { token: Some(Capability(41)) }, 37);
        assert_eq!(wrong_token.outcome(), Some(&Outcome::Decision(Decision::Reject)));
    }

    #[test]
    fn sigma_rejects_text_challenge_payloads_in_decision() {
        let bank = SimulatedBank::new(10, Capability(1));
        let s = Session::sigma(Arc::new(bank.instance()))
            .step(ProtocolMessage::new(MessageKind::Setup, Payload::text("hi"), ts(0)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Challenge, Payload::text("five"), ts(1)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Response, Payload::Number(5.0), ts(2)))
            .unwrap();
        assert_eq!(s.outcome(), Some(&Outcome::Decision(Decision::Reject)));
    }

    #[test]
    fn reveal_before_answer_is_out_of_order_without_implicit_r() {
        let s = registry().new_session(SessionConfig::Aporia(cfg(false))).unwrap();
        let s = s
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, Some("What next?")), ts(0)))
            .unwrap();
        let err = s
            .step(ProtocolMessage::new(MessageKind::Reveal, Payload::text("they defecate convivially"), ts(10)))
            .unwrap_err();
        assert_eq!(err, ProtocolError::OutOfOrder { phase: Phase::AwaitAnswer, got: MessageKind::Reveal });
    }

    #[test]
    fn premise_without_question_needs_implicit_q() {
        let s = registry().new_session(SessionConfig::Aporia(cfg(false))).unwrap();
        let err = s
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, None), ts(0)))
            .unwrap_err();
        assert_eq!(err, ProtocolError::MissingQuestion);
    }

    #[test]
    fn resolve_implicit_uses_rules_and_respects_flags() {
        let reg = registry();
        let s = reg.new_session(SessionConfig::Aporia(cfg(true))).unwrap();
        assert_eq!(s.resolve_implicit().unwrap_err(), ProtocolError::NothingImplicit(Phase::AwaitPremise));
        let s = s
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, Some("What is happening?")), ts(0)))
            .unwrap();
        let r = s.resolve_implicit().unwrap();
        assert_eq!(r.kind, MessageKind::Answer);
        assert_eq!(r.payload, Payload::text("they dine convivially"));
        assert!(r.implicit);
        assert_eq!(s.messages().len(), 1, "resolving leaves the session unchanged");

        let strict = reg
            .new_session(SessionConfig::Aporia(cfg(false)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, Some("Q?")), ts(0)))
            .unwrap();
        assert_eq!(strict.resolve_implicit().unwrap_err(), ProtocolError::ImplicitNotAllowed(MessageKind::Answer));
    }

    #[test]
    fn missing_responder_is_reported() {
        let mut reg = ProtocolRegistry::new();
        reg.register_knowledge_only(Arc::new(KnowledgeBase::from_toml_str(TOILET_KB).unwrap()));
        reg.register_distance("similarity", DistanceSpec::token_similarity());
        let s = reg
            .new_session(SessionConfig::Aporia(cfg(true)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, Some("Q?")), ts(0)))
            .unwrap();
        assert_eq!(s.resolve_implicit().unwrap_err(), ProtocolError::NoResponder("toilet".into()));
    }

    #[test]
    fn implicit_q_and_r_are_materialized_on_reveal() {
        let s = registry()
            .new_session(SessionConfig::Aporia(cfg(true)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, None), ts(0)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Reveal, Payload::text("they defecate convivially"), ts(2500)))
            .unwrap();
        let t = s.transcript();
        assert_eq!(
            t.kinds(),
            vec![MessageKind::Premise, MessageKind::Question, MessageKind::Answer, MessageKind::Reveal]
        );
        assert!(t.messages[1].implicit && t.messages[2].implicit);
        assert_eq!(t.messages[1].payload, Payload::text("What is happening?"));
        assert_eq!(t.outcome.as_ref().unwrap().aporia().unwrap().pi, 0.5);
    }

    #[test]
    fn timestamps_must_not_regress() {
        let s = registry()
            .new_session(SessionConfig::Aporia(cfg(true)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, Some("Q?")), ts(500)))
            .unwrap();
        let err = s
            .step(ProtocolMessage::new(MessageKind::Answer, Payload::text("x"), ts(499)))
            .unwrap_err();
        assert_eq!(err, ProtocolError::TimestampRegression { previous: ts(500), got: ts(499) });
    }

    #[test]
    fn payload_checks() {
        let s = registry().new_session(SessionConfig::Aporia(cfg(true))).unwrap();
        assert!(matches!(
            s.step(ProtocolMessage::new(MessageKind::Premise, Payload::text("plain"), ts(0))),
            Err(ProtocolError::PayloadMismatch { .. })
        ));
        assert!(matches!(
            s.step(ProtocolMessage::new(MessageKind::Premise, Payload::premise("  ", Some("q")), ts(0))),
            Err(ProtocolError::PayloadMismatch { .. })
        ));
    }

    #[test]
    fn transcript_snapshots_are_stable_and_round_trip() {
        let s = registry().new_session(SessionConfig::Aporia(cfg(true))).unwrap();
        assert_eq!(s.transcript().to_ndjson(), "{\"outcome\":null}\n");
        let s = s
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, Some("What is happening?")), ts(0)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Answer, Payload::text("they dine convivially"), ts(1200)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Reveal, Payload::text("they defecate convivially"), ts(2000)))
            .unwrap();
        let a = s.transcript().to_ndjson();
        let b = s.transcript().to_ndjson();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 4);
        assert!(a.starts_with(r#"{"seq":1,"kind":"premise","payload":{"p":"#));
        assert!(a.lines().last().unwrap().starts_with(r#"{"outcome":{"pi":0.5,"normalized":true"#));
        let parsed = Transcript::from_ndjson(s.id(), &a).unwrap();
        assert_eq!(parsed, s.transcript());
    }

    #[test]
    fn abort_ends_an_open_run() {
        let s = registry().new_session(SessionConfig::Aporia(cfg(true))).unwrap();
        let s = s
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, Some("Q?")), ts(0)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Answer, Payload::text("a poor guess"), ts(10)))
            .unwrap();
        let aborted = s.abort().unwrap();
        assert_eq!(aborted.phase(), Phase::Aborted);
        assert_eq!(aborted.abort().unwrap_err(), ProtocolError::Finished);
        let fresh = registry().new_session(SessionConfig::Aporia(cfg(true))).unwrap();
        let replayed = fresh.replay(&aborted.transcript()).unwrap();
        assert_eq!(replayed.outcome(), aborted.outcome());
    }

    #[test]
    fn emotion_report_follows_the_reveal_only() {
        let s = registry()
            .new_session(SessionConfig::Aporia(cfg(true)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(PREMISE, Some("Q?")), ts(0)))
            .unwrap();
        assert!(s.step(ProtocolMessage::new(MessageKind::EmotionReport, Payload::text("fear"), ts(1))).is_err());
        let done = s
            .step(ProtocolMessage::new(MessageKind::Reveal, Payload::text("x"), ts(5)))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::EmotionReport, Payload::text("surprise"), ts(6)))
            .unwrap();
        assert_eq!(done.phase(), Phase::Reported);
        assert!(done.outcome().is_some());
    }
}
