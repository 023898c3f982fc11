use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::contract::{Direction, Resource};
use super::TrustError;
use crate::protocol::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionEvent {
    pub service_id: String,
    pub resource: Resource,
    pub emotion: String,
    pub intensity: f64,
    pub direction: Direction,
    pub seq: u64,
    pub ts: Timestamp,
}

/// Per-service fold of the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionState {
    service_id: String,
    decay: f64,
    count: u64,
    means: BTreeMap<(Resource, Direction), f64>,
    last: BTreeMap<Resource, EmotionEvent>,
}

impl EmotionState {
    pub fn new(service_id: impl Into<String>, decay: f64) -> Self {
        Self { service_id: service_id.into(), decay, count: 0, means: BTreeMap::new(), last: BTreeMap::new() }
    }

    pub fn service_id(&self) -> &str {
        &self.service_id
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Decayed mean intensity; 0 for a cell with no events.
    pub fn mean(&self, resource: Resource, direction: Direction) -> f64 {
        self.means.get(&(resource, direction)).copied().unwrap_or(0.0)
    }

    pub fn last(&self, resource: Resource) -> Option<&EmotionEvent> {
        self.last.get(&resource)
    }

    /// `mean′ = λ·mean + (1 − λ)·intensity` on the event's cell.
    pub fn apply(&self, ev: &EmotionEvent) -> Result<EmotionState, TrustError> {
        if ev.service_id != self.service_id {
            return Err(TrustError::WrongService { state: self.service_id.clone(), event: ev.service_id.clone() });
        }
        if ev.seq != self.count + 1 {
            return Err(TrustError::SequenceGap { expected: self.count + 1, got: ev.seq });
        }
        if !(0.0..=1.0).contains(&ev.intensity) {
            return Err(TrustError::IntensityRange(ev.intensity));
        }
        let mut next = self.clone();
        let cell = next.means.entry((ev.resource, ev.direction)).or_insert(0.0);
        *cell = self.decay * *cell + (1.0 - self.decay) * ev.intensity;
        next.last.insert(ev.resource, ev.clone());
        next.count += 1;
        Ok(next)
    }

    pub fn fold<'a>(
        service_id: &str,
        decay: f64,
        events: impl IntoIterator<Item = &'a EmotionEvent>,
    ) -> Result<EmotionState, TrustError> {
        events.into_iter().try_fold(EmotionState::new(service_id, decay), |s, ev| s.apply(ev))
    }
}
