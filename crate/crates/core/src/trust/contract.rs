use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::state::EmotionEvent;
use super::{EmotionMap, TrustError};
use crate::protocol::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Money,
    Time,
    Data,
    Compute,
}

impl Resource {
    pub const ALL: [Resource; 4] = [Resource::Money, Resource::Time, Resource::Data, Resource::Compute];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Money => "money",
            Resource::Time => "time",
            Resource::Data => "data",
            Resource::Compute => "compute",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Resource {
    type Err = TrustError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Resource::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrustError::UnknownResource(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Favorable,
    Unfavorable,
}

/// Expected post-condition for one resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Money only: output `nb` must equal `transfer_contract(ob, a)` of the inputs.
    Transfer,
    /// Actual cost may not exceed the expected cost.
    AtMost,
    /// Actual cost must equal the expected cost.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub service_id: String,
    pub function: String,
    pub expectations: BTreeMap<Resource, Expectation>,
}

impl Contract {
    pub fn new(
        service_id: impl Into<String>,
        function: impl Into<String>,
        expectations: BTreeMap<Resource, Expectation>,
    ) -> Result<Self, TrustError> {
        if expectations.is_empty() {
            return Err(TrustError::NoResources);
        }
        if expectations.iter().any(|(r, e)| *e == Expectation::Transfer && *r != Resource::Money) {
            return Err(TrustError::TransferOnNonMoney);
        }
        Ok(Self { service_id: service_id.into(), function: function.into(), expectations })
    }

    /// Money transfer contract; optionally also bounds the call's duration.
    pub fn transfer(service_id: impl Into<String>, time_budget: bool) -> Self {
        let mut ex = BTreeMap::from([(Resource::Money, Expectation::Transfer)]);
        if time_budget {
            ex.insert(Resource::Time, Expectation::AtMost);
        }
        Self::new(service_id, "transfer", ex).expect("well-formed")
    }
}

/// One observed call. `expected_cost` / `actual_cost` are in money units, ms
/// or bytes depending on the resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub service_id: String,
    pub function: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, f64>,
    #[serde(default)]
    pub outputs: BTreeMap<String, f64>,
    #[serde(default)]
    pub expected_cost: BTreeMap<Resource, f64>,
    #[serde(default)]
    pub actual_cost: BTreeMap<Resource, f64>,
    #[serde(default)]
    pub ts: Timestamp,
}

impl InvocationRecord {
    /// `ob, nb := transfer(a)` with no other costs.
    pub fn transfer(service_id: impl Into<String>, ob: f64, a: f64, nb: f64) -> Self {
        Self {
            service_id: service_id.into(),
            function: "transfer".into(),
            inputs: BTreeMap::from([("ob".into(), ob), ("a".into(), a)]),
            outputs: BTreeMap::from([("nb".into(), nb)]),
            expected_cost: BTreeMap::new(),
            actual_cost: BTreeMap::new(),
            ts: Timestamp::ZERO,
        }
    }

    pub fn with_cost(mut self, resource: Resource, expected: f64, actual: f64) -> Self {
        self.expected_cost.insert(resource, expected);
        self.actual_cost.insert(resource, actual);
        self
    }

    pub fn at(mut self, ts: Timestamp) -> Self {
        self.ts = ts;
        self
    }
}

/// Expected balance after `transfer(a)` from `ob`.
pub fn transfer_contract(ob: f64, a: f64) -> Result<f64, TrustError> {
    if !(ob >= 0.0 && a >= 0.0) {
        return Err(TrustError::NegativeAmount);
    }
    Ok(if ob >= a { ob - a } else { ob })
}

/// Deviation of `actual` from `expected`, relative to the expected amount.
pub fn deviation(expected: f64, actual: f64) -> f64 {
    ((expected - actual).abs() / expected.abs().max(1.0)).min(1.0)
}

fn amount(map: &BTreeMap<String, f64>, key: &str) -> Result<f64, TrustError> {
    let v = *map.get(key).ok_or_else(|| TrustError::MissingAmount(key.to_string()))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(TrustError::NegativeAmount);
    }
    Ok(v)
}

fn cost(map: &BTreeMap<Resource, f64>, r: Resource, side: &str) -> Result<f64, TrustError> {
    let v = *map.get(&r).ok_or_else(|| TrustError::MissingAmount(format!("{side} {r}")))?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(TrustError::NegativeAmount);
    }
    Ok(v)
}

/// Compares a record with its contract, one event per constrained resource.
/// Events are numbered from 1; a ledger renumbers them on insertion.
pub fn observe(rec: &InvocationRecord, contract: &Contract, map: &EmotionMap) -> Result<Vec<EmotionEvent>, TrustError> {
    if rec.service_id != contract.service_id || rec.function != contract.function {
        return Err(TrustError::ContractMismatch {
            contract: format!("{}/{}", contract.service_id, contract.function),
            record: format!("{}/{}", rec.service_id, rec.function),
        });
    }
    let mut events = Vec::with_capacity(contract.expectations.len());
    for (&resource, &expectation) in &contract.expectations {
        let (expected, actual) = match expectation {
            Expectation::Transfer => (
                transfer_contract(amount(&rec.inputs, "ob")?, amount(&rec.inputs, "a")?)?,
                amount(&rec.outputs, "nb")?,
            ),
            Expectation::AtMost | Expectation::Exact => {
                (cost(&rec.expected_cost, resource, "expected")?, cost(&rec.actual_cost, resource, "actual")?)
            }
        };
        let violated = match expectation {
            Expectation::AtMost => actual > expected,
            Expectation::Transfer | Expectation::Exact => actual != expected,
        };
        let (direction, intensity, emotion) = if violated {
            let overshoot = actual > expected;
            (Direction::Unfavorable, deviation(expected, actual), map.unfavorable(resource, overshoot))
        } else {
            // Only a budget can be beaten; the saving is the favorable intensity.
            (Direction::Favorable, deviation(expected, actual), map.favorable.clone())
        };
        events.push(EmotionEvent {
            service_id: rec.service_id.clone(),
            resource,
            emotion,
            intensity,
            direction,
            seq: events.len() as u64 + 1,
            ts: rec.ts,
        });
    }
    Ok(events)
}
