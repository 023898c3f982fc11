use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::contract::{observe, Contract, Direction, InvocationRecord, Resource};
use super::policy::Policy;
use super::state::{EmotionEvent, EmotionState};
use super::{TrustConfig, TrustError};
use crate::protocol::Timestamp;

/// One line of a service's event log; the service id is the file stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub seq: u64,
    pub resource: Resource,
    pub emotion: String,
    pub intensity: f64,
    pub direction: Direction,
    pub ts: Timestamp,
}

impl LogLine {
    pub fn into_event(self, service_id: &str) -> EmotionEvent {
        EmotionEvent {
            service_id: service_id.to_string(),
            resource: self.resource,
            emotion: self.emotion,
            intensity: self.intensity,
            direction: self.direction,
            seq: self.seq,
            ts: self.ts,
        }
    }
}

impl From<&EmotionEvent> for LogLine {
    fn from(e: &EmotionEvent) -> Self {
        Self {
            seq: e.seq,
            resource: e.resource,
            emotion: e.emotion.clone(),
            intensity: e.intensity,
            direction: e.direction,
            ts: e.ts,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    events: Vec<EmotionEvent>,
    state: EmotionState,
}

/// Event logs and folded states of every observed service.
///
/// Writers take the lock exclusively, so events for one service are applied
/// in a total order; readers get cloned snapshots.
#[derive(Debug)]
pub struct Ledger {
    config: TrustConfig,
    services: RwLock<BTreeMap<String, Entry>>,
    log_dir: Option<PathBuf>,
}

impl Ledger {
    pub fn new(config: TrustConfig) -> Self {
        Self { config, services: RwLock::new(BTreeMap::new()), log_dir: None }
    }

    /// Every applied event is also appended to `<dir>/<service>.ndjson`.
    pub fn persist_to(mut self, dir: impl Into<PathBuf>) -> Self {
        self.log_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &TrustConfig {
        &self.config
    }

    /// Observes `rec` against `contract` and applies the resulting events.
    pub fn record(&self, rec: &InvocationRecord, contract: &Contract) -> Result<Vec<EmotionEvent>, TrustError> {
        let events = observe(rec, contract, &self.config.emotions)?;
        let mut guard = self.services.write().expect("ledger lock poisoned");
        let entry = guard.entry(rec.service_id.clone()).or_insert_with(|| Entry {
            events: Vec::new(),
            state: EmotionState::new(&rec.service_id, self.config.decay),
        });
        let mut state = entry.state.clone();
        let mut numbered = Vec::with_capacity(events.len());
        for mut ev in events {
            ev.seq = state.count() + 1;
            state = state.apply(&ev)?;
            numbered.push(ev);
        }
        if let Some(dir) = &self.log_dir {
            append_lines(&dir.join(format!("{}.ndjson", rec.service_id)), &numbered)?;
        }
        entry.state = state;
        entry.events.extend(numbered.iter().cloned());
        Ok(numbered)
    }

    /// Applies an already numbered event.
    pub fn apply(&self, ev: EmotionEvent) -> Result<(), TrustError> {
        let mut guard = self.services.write().expect("ledger lock poisoned");
        let entry = guard.entry(ev.service_id.clone()).or_insert_with(|| Entry {
            events: Vec::new(),
            state: EmotionState::new(&ev.service_id, self.config.decay),
        });
        let state = entry.state.apply(&ev)?;
        if let Some(dir) = &self.log_dir {
            append_lines(&dir.join(format!("{}.ndjson", ev.service_id)), std::slice::from_ref(&ev))?;
        }
        entry.state = state;
        entry.events.push(ev);
        Ok(())
    }

    pub fn state(&self, service_id: &str) -> Option<EmotionState> {
        self.services.read().expect("ledger lock poisoned").get(service_id).map(|e| e.state.clone())
    }

    /// State of `service_id`, or the empty state if it was never observed.
    pub fn state_or_empty(&self, service_id: &str) -> EmotionState {
        self.state(service_id).unwrap_or_else(|| EmotionState::new(service_id, self.config.decay))
    }

    pub fn events(&self, service_id: &str) -> Vec<EmotionEvent> {
        self.services
            .read()
            .expect("ledger lock poisoned")
            .get(service_id)
            .map(|e| e.events.clone())
            .unwrap_or_default()
    }

    pub fn service_ids(&self) -> Vec<String> {
        self.services.read().expect("ledger lock poisoned").keys().cloned().collect()
    }

    /// Replays every `*.ndjson` log in `dir`, in file-name order.
    pub fn load_dir(dir: &Path, config: TrustConfig) -> Result<Self, TrustError> {
        let io = |e: std::io::Error| TrustError::Io { path: dir.display().to_string(), msg: e.to_string() };
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e == "ndjson") {
                paths.push(path);
            }
        }
        paths.sort();
        let ledger = Ledger::new(config);
        for path in paths {
            let service = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let text = std::fs::read_to_string(&path)
                .map_err(|e| TrustError::Io { path: path.display().to_string(), msg: e.to_string() })?;
            for ev in parse_log(&service, &text)? {
                ledger.apply(ev)?;
            }
        }
        Ok(ledger)
    }
}

pub fn parse_log(service_id: &str, text: &str) -> Result<Vec<EmotionEvent>, TrustError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<LogLine>(l)
                .map(|line| line.into_event(service_id))
                .map_err(|e| TrustError::LogSyntax { service: service_id.to_string(), line: i + 1, msg: e.to_string() })
        })
        .collect()
}

pub fn render_log(events: &[EmotionEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(&LogLine::from(e)).expect("log lines serialize") + "\n")
        .collect()
}

fn append_lines(path: &Path, events: &[EmotionEvent]) -> Result<(), TrustError> {
    let io = |e: std::io::Error| TrustError::Io { path: path.display().to_string(), msg: e.to_string() };
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    file.write_all(render_log(events).as_bytes()).map_err(io)
}

/// Among candidates satisfying `policy`, the one with the highest favorable
/// money mean; ties go to the smallest id.
pub fn select_service<S: AsRef<str>>(candidates: &[S], policy: &Policy, ledger: &Ledger) -> Option<String> {
    let margin = ledger.config().bored_margin;
    let mut best: Option<(f64, &str)> = None;
    for id in candidates {
        let id = id.as_ref();
        let state = ledger.state_or_empty(id);
        if !policy.evaluate(&state, margin) {
            continue;
        }
        let score = state.mean(Resource::Money, Direction::Favorable);
        let better = match best {
            None => true,
            Some((s, b)) => score > s || (score == s && id < b),
        };
        if better {
            best = Some((score, id));
        }
    }
    best.map(|(_, id)| id.to_string())
}
