use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::agent::PoetAgent;
use super::PoetError;
use crate::protocol::{MessageKind, Payload, ProtocolMessage, Session, Timestamp, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Human,
    Machine,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoundStep {
    AwaitPremise,
    AwaitAnswer,
    AwaitReveal,
    AwaitEmotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoetPhase {
    Negotiating,
    InRound(RoundStep),
    /// A round has finished: the interviewer may start another or decide.
    AwaitVerdict,
    Closed,
}

impl fmt::Display for PoetPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoetPhase::InRound(step) => write!(f, "InRound({step:?})"),
            other => fmt::Debug::fmt(other, f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoetEvent {
    Negotiate(Vec<String>),
    SendPremise { p: String, q: Option<String> },
    AgentAnswer,
    SendReveal { r_prime: String },
    AgentEmotion,
    NextRound,
    RequestVerdict(Verdict),
}

impl PoetEvent {
    pub fn name(&self) -> &'static str {
        match self {
            PoetEvent::Negotiate(_) => "negotiate",
            PoetEvent::SendPremise { .. } => "send_premise",
            PoetEvent::AgentAnswer => "agent_answer",
            PoetEvent::SendReveal { .. } => "send_reveal",
            PoetEvent::AgentEmotion => "agent_emotion",
            PoetEvent::NextRound => "next_round",
            PoetEvent::RequestVerdict(_) => "request_verdict",
        }
    }
}

/// A finished round: the protocol transcript (ending with the emotion
/// report) and what the agent reported.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub transcript: Transcript,
    pub emotion: String,
    pub pi: f64,
}

#[derive(Debug, Clone)]
pub struct PoetSession {
    id: String,
    agent: Arc<dyn PoetAgent>,
    proposal: Vec<String>,
    agreed: Vec<String>,
    rounds: Vec<Round>,
    current: Option<Session>,
    last_report: Option<(String, f64)>,
    phase: PoetPhase,
    verdict: Option<Verdict>,
}

impl PoetSession {
    pub fn new(id: impl Into<String>, agent: Arc<dyn PoetAgent>) -> Self {
        Self {
            id: id.into(),
            agent,
            proposal: Vec::new(),
            agreed: Vec::new(),
            rounds: Vec::new(),
            current: None,
            last_report: None,
            phase: PoetPhase::Negotiating,
            verdict: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> PoetPhase {
        self.phase
    }

    pub fn proposal(&self) -> &[String] {
        &self.proposal
    }

    pub fn agreed_emotions(&self) -> &[String] {
        &self.agreed
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.verdict
    }

    /// The round in progress, if any.
    pub fn current_round(&self) -> Option<&Session> {
        self.current.as_ref()
    }

    /// Latest answer `R` of the round in progress.
    pub fn last_answer(&self) -> Option<String> {
        let s = self.current.as_ref()?;
        s.messages().iter().rev().find(|m| m.kind == MessageKind::Answer).map(|m| m.payload.to_string())
    }

    /// Label and π of the most recent report.
    pub fn last_report(&self) -> Option<(&str, f64)> {
        self.last_report.as_ref().map(|(e, pi)| (e.as_str(), *pi))
    }

    fn premise(&self) -> (String, String) {
        let s = self.current.as_ref().expect("round in progress");
        let p = match &s.messages()[0].payload {
            Payload::Premise { p, .. } => p.clone(),
            other => other.to_string(),
        };
        (p, s.question().unwrap_or_default())
    }

    fn reveal(&self) -> String {
        let s = self.current.as_ref().expect("round in progress");
        s.messages().iter().find(|m| m.kind == MessageKind::Reveal).map(|m| m.payload.to_string()).unwrap_or_default()
    }

    /// Applies one event. On error the receiver is untouched and remains the
    /// session to continue with.
    pub fn step(&self, event: PoetEvent, ts: Timestamp) -> Result<PoetSession, PoetError> {
        use PoetPhase as P;
        use RoundStep as S;

        let out_of_order = || PoetError::OutOfOrder { phase: self.phase, event: event.name() };
        let mut next = self.clone();
        match (self.phase, &event) {
            (P::Negotiating, PoetEvent::Negotiate(proposal)) => {
                let mut labels: Vec<String> = Vec::with_capacity(proposal.len());
                for l in proposal {
                    if !labels.contains(l) {
                        labels.push(l.clone());
                    }
                }
                if labels.is_empty() {
                    return Err(PoetError::EmptyProposal);
                }
                next.proposal = labels.clone();
                if self.agent.negotiate(&labels)? {
                    next.agreed = labels;
                    next.phase = P::InRound(S::AwaitPremise);
                } else {
                    next.phase = P::Closed;
                    next.verdict = Some(Verdict::Inconclusive);
                }
            }
            (P::InRound(S::AwaitPremise) | P::AwaitVerdict, PoetEvent::SendPremise { p, q }) => {
                let q = q.as_deref().filter(|q| !q.trim().is_empty()).ok_or(PoetError::MissingQuestion)?;
                let round = Session::aporia(self.agent.round_setup())?
                    .with_id(format!("{}/round-{}", self.id, self.rounds.len() + 1))
                    .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(p.clone(), Some(q)), ts))?;
                next.current = Some(round);
                next.phase = P::InRound(S::AwaitAnswer);
            }
            (P::InRound(S::AwaitAnswer), PoetEvent::AgentAnswer) => {
                let (p, q) = self.premise();
                let r = self.agent.answer(&p, &q)?;
                let round = self.current.as_ref().expect("round in progress");
                next.current = Some(round.step(ProtocolMessage::new(MessageKind::Answer, Payload::Text(r), ts))?);
                next.phase = P::InRound(S::AwaitReveal);
            }
            (P::InRound(S::AwaitReveal), PoetEvent::SendReveal { r_prime }) => {
                let round = self.current.as_ref().expect("round in progress");
                let msg = ProtocolMessage::new(MessageKind::Reveal, Payload::text(r_prime.clone()), ts);
                next.current = Some(round.step(msg)?);
                next.phase = P::InRound(S::AwaitEmotion);
            }
            (P::InRound(S::AwaitEmotion), PoetEvent::AgentEmotion) => {
                let (p, q) = self.premise();
                let report = self.agent.report(&p, &q, &self.reveal())?;
                if !self.agreed.contains(&report.emotion) {
                    return Err(PoetError::UnknownEmotion(report.emotion));
                }
                if !(0.0..=1.0).contains(&report.pi) {
                    return Err(PoetError::Agent(format!("aporia level {} outside [0, 1]", report.pi)));
                }
                let round = self.current.as_ref().expect("round in progress");
                let done =
                    round.step(ProtocolMessage::new(MessageKind::EmotionReport, Payload::text(report.emotion.clone()), ts))?;
                next.rounds.push(Round { transcript: done.transcript(), emotion: report.emotion.clone(), pi: report.pi });
                next.last_report = Some((report.emotion, report.pi));
                next.current = None;
                next.phase = P::AwaitVerdict;
            }
            (P::AwaitVerdict, PoetEvent::NextRound) => {
                next.phase = P::InRound(S::AwaitPremise);
            }
            (P::AwaitVerdict, PoetEvent::RequestVerdict(v)) => {
                next.verdict = Some(*v);
                next.phase = P::Closed;
            }
            _ => return Err(out_of_order()),
        }
        Ok(next)
    }
}

/// One-shot negotiation followed by the first round, or closure as
/// inconclusive when the agent cannot cover the proposal.
pub fn start_test(
    id: impl Into<String>,
    emotion_proposal: &[String],
    agent: Arc<dyn PoetAgent>,
) -> Result<PoetSession, PoetError> {
    PoetSession::new(id, agent).step(PoetEvent::Negotiate(emotion_proposal.to_vec()), Timestamp::ZERO)
}
