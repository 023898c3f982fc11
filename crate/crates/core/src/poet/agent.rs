use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};

use super::wire::{ClientFrame, ServerFrame};
use super::PoetError;
use crate::distance::DistanceSpec;
use crate::emotion::{answer, run_listener_pipeline, EmotionError, EmotionTaxonomy, ToneLexicon};
use crate::fixture::Fixture;
use crate::knowledge::{KnowledgeBase, Rule, CATCH_ALL};
use crate::protocol::AporiaSetup;

/// What an agent reports at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentReport {
    pub emotion: String,
    pub pi: f64,
}

/// The party under test.
pub trait PoetAgent: fmt::Debug + Send + Sync {
    /// Labels the agent can report.
    fn emotions(&self) -> Vec<String>;

    /// One-shot negotiation: accept the proposal or retreat.
    fn negotiate(&self, proposal: &[String]) -> Result<bool, PoetError> {
        let own = self.emotions();
        Ok(proposal.iter().all(|e| own.contains(e)))
    }

    /// Knowledge and distance the round's protocol run is evaluated with.
    fn round_setup(&self) -> AporiaSetup;

    fn answer(&self, p: &str, q: &str) -> Result<String, PoetError>;

    fn report(&self, p: &str, q: &str, r_prime: &str) -> Result<AgentReport, PoetError>;
}

/// Deterministic agent running the listener pipeline.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    kb: Arc<KnowledgeBase>,
    spec: DistanceSpec,
    lexicon: ToneLexicon,
    taxonomy: EmotionTaxonomy,
}

pub fn scripted_agent(
    kb: KnowledgeBase,
    spec: DistanceSpec,
    lexicon: ToneLexicon,
    taxonomy: EmotionTaxonomy,
) -> Result<ScriptedAgent, PoetError> {
    spec.validate(&kb).map_err(EmotionError::from)?;
    if !spec.is_normalized() {
        return Err(EmotionError::NotNormalized.into());
    }
    Ok(ScriptedAgent { kb: Arc::new(kb), spec, lexicon, taxonomy })
}

impl ScriptedAgent {
    pub fn from_fixture(fixture: &Fixture, taxonomy: EmotionTaxonomy) -> Result<Self, PoetError> {
        scripted_agent(fixture.knowledge.clone(), fixture.distance.clone(), fixture.lexicon_or_default(), taxonomy)
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.kb
    }
}

impl PoetAgent for ScriptedAgent {
    fn emotions(&self) -> Vec<String> {
        self.taxonomy.emotions().to_vec()
    }

    fn round_setup(&self) -> AporiaSetup {
        AporiaSetup::with_rules(self.kb.clone(), self.spec.clone()).explicit_only()
    }

    fn answer(&self, p: &str, q: &str) -> Result<String, PoetError> {
        Ok(answer(p, q, &self.kb))
    }

    fn report(&self, p: &str, q: &str, r_prime: &str) -> Result<AgentReport, PoetError> {
        let out = run_listener_pipeline(p, q, r_prime, &self.kb, &self.spec, &self.lexicon, &self.taxonomy)?;
        Ok(AgentReport { emotion: out.emotion, pi: out.pi })
    }
}

struct RemoteLink {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Agent hosted by another PoET server: this side acts as its interviewer
/// and relays each step over the wire protocol.
pub struct RemoteAgent {
    endpoint: String,
    link: Mutex<Option<RemoteLink>>,
}

impl fmt::Debug for RemoteAgent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteAgent").field("endpoint", &self.endpoint).finish()
    }
}

impl RemoteAgent {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), link: Mutex::new(None) }
    }

    fn exchange(&self, frame: &ClientFrame) -> Result<ServerFrame, PoetError> {
        let remote = |msg: String| PoetError::Agent(format!("{}: {msg}", self.endpoint));
        let mut guard = self.link.lock().expect("remote link poisoned");
        if guard.is_none() {
            let stream = TcpStream::connect(&self.endpoint).map_err(|e| remote(e.to_string()))?;
            let reader = BufReader::new(stream.try_clone().map_err(|e| remote(e.to_string()))?);
            *guard = Some(RemoteLink { reader, writer: stream });
        }
        let link = guard.as_mut().expect("link just established");
        let mut line = serde_json::to_string(frame).expect("frames serialize");
        line.push('\n');
        link.writer.write_all(line.as_bytes()).map_err(|e| remote(e.to_string()))?;
        let mut reply = String::new();
        if link.reader.read_line(&mut reply).map_err(|e| remote(e.to_string()))? == 0 {
            *guard = None;
            return Err(remote("connection closed".into()));
        }
        match serde_json::from_str(&reply).map_err(|e| remote(e.to_string()))? {
            ServerFrame::Error { msg } => Err(remote(msg)),
            frame => Ok(frame),
        }
    }
}

impl PoetAgent for RemoteAgent {
    fn emotions(&self) -> Vec<String> {
        Vec::new()
    }

    fn negotiate(&self, proposal: &[String]) -> Result<bool, PoetError> {
        match self.exchange(&ClientFrame::Hello { emotions: proposal.to_vec(), agent: None })? {
            ServerFrame::Agreed => Ok(true),
            ServerFrame::Inconclusive => Ok(false),
            other => Err(PoetError::Agent(format!("unexpected reply {other:?}"))),
        }
    }

    fn round_setup(&self) -> AporiaSetup {
        let kb = KnowledgeBase::new(
            "remote",
            1.0,
            Vec::new(),
            vec![Rule { pattern: CATCH_ALL.into(), answer: "unknown".into() }],
        )
        .expect("well-formed");
        AporiaSetup::with_rules(Arc::new(kb), DistanceSpec::token_similarity()).explicit_only()
    }

    fn answer(&self, p: &str, q: &str) -> Result<String, PoetError> {
        match self.exchange(&ClientFrame::Premise { p: p.into(), q: Some(q.into()) })? {
            ServerFrame::Answer { r, .. } => Ok(r),
            other => Err(PoetError::Agent(format!("unexpected reply {other:?}"))),
        }
    }

    fn report(&self, _p: &str, _q: &str, r_prime: &str) -> Result<AgentReport, PoetError> {
        match self.exchange(&ClientFrame::Reveal { rp: r_prime.into() })? {
            ServerFrame::Emotion { e, pi } => Ok(AgentReport { emotion: e, pi }),
            other => Err(PoetError::Agent(format!("unexpected reply {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum AgentSpec {
    Scripted(Arc<ScriptedAgent>),
    Remote { endpoint: String },
}

/// Named agents available to interviewers; read-only once serving starts.
#[derive(Debug, Clone, Default)]
pub struct AgentRegistry {
    agents: BTreeMap<String, AgentSpec>,
    default: Option<String>,
}

impl AgentRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The first registered agent becomes the default.
    pub fn register(&mut self, name: impl Into<String>, spec: AgentSpec) {
        let name = name.into();
        self.default.get_or_insert_with(|| name.clone());
        self.agents.insert(name, spec);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.agents.keys().map(String::as_str)
    }

    /// A fresh agent for one session: scripted agents are shared, remote
    /// agents get their own connection.
    pub fn instantiate(&self, name: Option<&str>) -> Result<Arc<dyn PoetAgent>, PoetError> {
        let name = name.or(self.default.as_deref()).ok_or_else(|| PoetError::UnknownAgent("<none>".into()))?;
        match self.agents.get(name).ok_or_else(|| PoetError::UnknownAgent(name.to_string()))? {
            AgentSpec::Scripted(a) => Ok(a.clone()),
            AgentSpec::Remote { endpoint } => Ok(Arc::new(RemoteAgent::new(endpoint.clone()))),
        }
    }
}
