//! Proof of Emotion Test: negotiation of an emotion set, aporia rounds driven
//! by an interviewer, and a verdict. Sessions run in-process or behind the
//! NDJSON wire protocol.
//!
//! Accepted event sequences are prefixes of
//! `negotiate · (premise · answer · reveal · emotion)⁺ · verdict`, where an
//! explicit `next_round` may separate rounds.

pub mod agent;
pub mod export;
pub mod server;
pub mod session;
pub mod wire;

use thiserror::Error;

pub use agent::{scripted_agent, AgentRegistry, AgentReport, AgentSpec, PoetAgent, RemoteAgent, ScriptedAgent};
pub use export::{equivalent, export, replay};
pub use server::{serve, serve_lines, serve_stdio, ServeOptions, ServerHandle};
pub use session::{start_test, PoetEvent, PoetPhase, PoetSession, Round, RoundStep, Verdict};
pub use wire::{ClientFrame, Connection, ServerFrame};

use crate::emotion::EmotionError;
use crate::protocol::ProtocolError;

#[derive(Debug, Error)]
pub enum PoetError {
    #[error("emotion proposal is empty")]
    EmptyProposal,
    #[error("{event} is not legal in phase {phase}")]
    OutOfOrder { phase: PoetPhase, event: &'static str },
    #[error("a premise needs an explicit question")]
    MissingQuestion,
    #[error("reported emotion `{0}` is not in the agreed set")]
    UnknownEmotion(String),
    #[error("no session: send hello first")]
    NoSession,
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent failed: {0}")]
    Agent(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Emotion(#[from] EmotionError),
    #[error("export line {line}: {msg}")]
    Export { line: usize, msg: String },
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
    #[error("cannot bind: {0}")]
    Bind(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}
