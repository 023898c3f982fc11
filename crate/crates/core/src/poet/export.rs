//! Session export: a header line, every round's protocol transcript (message
//! lines followed by its outcome line), then the verdict if one was given.
//!
//! ```text
//! {"session_id":"poet-1","emotions":["fear","amusement"],"agreed":true}
//! {"seq":1,"kind":"premise",...}
//! ...
//! {"outcome":{...}}
//! {"verdict":"human"}
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::agent::PoetAgent;
use super::session::{PoetEvent, PoetSession, Verdict};
use super::PoetError;
use crate::protocol::{MessageKind, Payload, Timestamp, Transcript};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    session_id: String,
    emotions: Vec<String>,
    agreed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictLine {
    verdict: Verdict,
}

pub fn export(session: &PoetSession) -> String {
    let header = Header {
        session_id: session.id().to_string(),
        emotions: session.proposal().to_vec(),
        agreed: !session.agreed_emotions().is_empty(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for round in session.rounds() {
        out.push_str(&round.transcript.to_ndjson());
    }
    if let Some(current) = session.current_round() {
        out.push_str(&current.transcript().to_ndjson());
    }
    if let Some(verdict) = session.verdict().filter(|_| !session.agreed_emotions().is_empty()) {
        out.push_str(&serde_json::to_string(&VerdictLine { verdict }).expect("verdict serializes"));
        out.push('\n');
    }
    out
}

fn export_error(line: usize, msg: impl Into<String>) -> PoetError {
    PoetError::Export { line, msg: msg.into() }
}

/// Re-drives an exported session against `agent` and checks that every
/// regenerated round transcript equals the exported one.
pub fn replay(text: &str, agent: Arc<dyn PoetAgent>) -> Result<PoetSession, PoetError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| (i + 1, l));
    let (no, first) = lines.next().ok_or_else(|| export_error(0, "empty export"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| export_error(no, e.to_string()))?;

    let mut session = PoetSession::new(header.session_id.clone(), agent)
        .step(PoetEvent::Negotiate(header.emotions.clone()), Timestamp::ZERO)?;
    if session.agreed_emotions().is_empty() == header.agreed {
        return Err(PoetError::ReplayMismatch("negotiation outcome differs".into()));
    }

    let mut group = String::new();
    let mut round_no = 0usize;
    for (no, line) in lines {
        if let Ok(v) = serde_json::from_str::<VerdictLine>(line) {
            if !group.is_empty() {
                return Err(export_error(no, "verdict inside an unfinished round"));
            }
            session = session.step(PoetEvent::RequestVerdict(v.verdict), Timestamp::ZERO)?;
            continue;
        }
        group.push_str(line);
        group.push('\n');
        if !line.trim_start().starts_with("{\"outcome\"") {
            continue;
        }
        round_no += 1;
        let id = format!("{}/round-{round_no}", header.session_id);
        let exported = Transcript::from_ndjson(id, &group).map_err(|e| export_error(no, e.to_string()))?;
        group.clear();
        for m in &exported.messages {
            let event = match (&m.kind, &m.payload) {
                (MessageKind::Premise, Payload::Premise { p, q }) => PoetEvent::SendPremise { p: p.clone(), q: q.clone() },
                (MessageKind::Answer, _) => PoetEvent::AgentAnswer,
                (MessageKind::Reveal, r) => PoetEvent::SendReveal { r_prime: r.to_string() },
                (MessageKind::EmotionReport, _) => PoetEvent::AgentEmotion,
                (kind, _) => return Err(export_error(no, format!("unexpected {kind:?} message in a round"))),
            };
            session = session.step(event, m.timestamp)?;
        }
        let regenerated = match session.current_round() {
            Some(open) => open.transcript(),
            None => session.rounds().last().map(|r| r.transcript.clone()).unwrap_or_else(|| exported.clone()),
        };
        if regenerated != exported {
            return Err(PoetError::ReplayMismatch(format!("round {round_no} differs from the export")));
        }
    }
    if !group.is_empty() {
        return Err(export_error(0, "trailing lines without an outcome"));
    }
    Ok(session)
}

/// Same agreed set, rounds, round in progress and verdict.
pub fn equivalent(a: &PoetSession, b: &PoetSession) -> bool {
    a.id() == b.id()
        && a.agreed_emotions() == b.agreed_emotions()
        && a.rounds() == b.rounds()
        && a.current_round().map(|s| s.transcript()) == b.current_round().map(|s| s.transcript())
        && a.verdict() == b.verdict()
}
