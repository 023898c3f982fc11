//! NDJSON wire protocol between an interviewer and the PoET server.
//!
//! Each client frame yields exactly one server frame. `premise` runs the
//! teller's step and the agent's answer; `reveal` runs the reveal and the
//! agent's emotion report. A frame that fails leaves the session as it was.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::agent::AgentRegistry;
use super::export::export;
use super::session::{PoetEvent, PoetPhase, PoetSession, Verdict};
use super::PoetError;
use crate::protocol::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientFrame {
    Hello {
        emotions: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
    },
    Premise {
        p: String,
        #[serde(default)]
        q: Option<String>,
    },
    Reveal {
        rp: String,
    },
    Next,
    Verdict {
        v: Verdict,
    },
    Export,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum ServerFrame {
    Agreed,
    Inconclusive,
    Answer { r: String, ts: u64 },
    Emotion { e: String, pi: f64 },
    Next,
    Verdict { v: Verdict },
    Export { session_id: String, ndjson: String },
    Error { msg: String },
}

static NEXT_POET: AtomicU64 = AtomicU64::new(1);

fn next_session_id() -> String {
    format!("poet-{}-{}", std::process::id(), NEXT_POET.fetch_add(1, Ordering::Relaxed))
}

/// Milliseconds on some monotone clock.
pub type Clock = Box<dyn FnMut() -> u64 + Send>;

pub fn system_clock() -> Clock {
    let origin = Instant::now();
    Box::new(move || origin.elapsed().as_millis() as u64)
}

/// Per-connection state: the current PoET session, if any.
pub struct Connection {
    registry: Arc<AgentRegistry>,
    session: Option<PoetSession>,
    started_ms: u64,
    clock: Clock,
    export_dir: Option<PathBuf>,
}

impl Connection {
    pub fn new(registry: Arc<AgentRegistry>) -> Self {
        Self { registry, session: None, started_ms: 0, clock: system_clock(), export_dir: None }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Closed sessions are written to `<dir>/<session-id>.ndjson`.
    pub fn with_export_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.export_dir = dir;
        self
    }

    pub fn session(&self) -> Option<&PoetSession> {
        self.session.as_ref()
    }

    pub fn handle_line(&mut self, line: &str) -> ServerFrame {
        match serde_json::from_str::<ClientFrame>(line) {
            Ok(frame) => self.handle(frame),
            Err(e) => ServerFrame::Error { msg: format!("malformed frame: {e}") },
        }
    }

    pub fn handle(&mut self, frame: ClientFrame) -> ServerFrame {
        let now = (self.clock)();
        match self.dispatch(frame, now) {
            Ok(reply) => reply,
            Err(e) => ServerFrame::Error { msg: e.to_string() },
        }
    }

    fn dispatch(&mut self, frame: ClientFrame, now: u64) -> Result<ServerFrame, PoetError> {
        if let ClientFrame::Hello { emotions, agent } = frame {
            if self.session.as_ref().is_some_and(|s| s.phase() != PoetPhase::Closed) {
                return Err(PoetError::OutOfOrder {
                    phase: self.session.as_ref().map(|s| s.phase()).expect("checked"),
                    event: "negotiate",
                });
            }
            let agent = self.registry.instantiate(agent.as_deref())?;
            let session = PoetSession::new(next_session_id(), agent).step(PoetEvent::Negotiate(emotions), Timestamp::ZERO)?;
            self.started_ms = now;
            let reply = if session.phase() == PoetPhase::Closed { ServerFrame::Inconclusive } else { ServerFrame::Agreed };
            self.commit(session)?;
            return Ok(reply);
        }

        let session = self.session.as_ref().ok_or(PoetError::NoSession)?;
        let elapsed = now.saturating_sub(self.started_ms);
        let ts = Timestamp::from_millis(elapsed as i64);
        let (next, reply) = match frame {
            ClientFrame::Premise { p, q } => {
                let next = session.step(PoetEvent::SendPremise { p, q }, ts)?.step(PoetEvent::AgentAnswer, ts)?;
                let r = next.last_answer().unwrap_or_default();
                (next, ServerFrame::Answer { r, ts: elapsed })
            }
            ClientFrame::Reveal { rp } => {
                let next = session.step(PoetEvent::SendReveal { r_prime: rp }, ts)?.step(PoetEvent::AgentEmotion, ts)?;
                let (e, pi) = next.last_report().map(|(e, pi)| (e.to_string(), pi)).unwrap_or_default();
                (next, ServerFrame::Emotion { e, pi })
            }
            ClientFrame::Next => (session.step(PoetEvent::NextRound, ts)?, ServerFrame::Next),
            ClientFrame::Verdict { v } => (session.step(PoetEvent::RequestVerdict(v), ts)?, ServerFrame::Verdict { v }),
            ClientFrame::Export => {
                return Ok(ServerFrame::Export { session_id: session.id().to_string(), ndjson: export(session) });
            }
            ClientFrame::Hello { .. } => unreachable!("handled above"),
        };
        self.commit(next)?;
        Ok(reply)
    }

    fn commit(&mut self, session: PoetSession) -> Result<(), PoetError> {
        if session.phase() == PoetPhase::Closed {
            if let Some(dir) = &self.export_dir {
                let path = dir.join(format!("{}.ndjson", session.id()));
                std::fs::write(&path, export(&session))
                    .map_err(|e| PoetError::Io { path: path.display().to_string(), msg: e.to_string() })?;
            }
        }
        self.session = Some(session);
        Ok(())
    }
}
