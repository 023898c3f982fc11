//! Aporia protocol workbench: Σ-style three-message sessions between a teller
//! and a listener, the aporia level of a reveal, timing analysis, emotion
//! composition, the PoET test and emotion-driven trust.

pub mod distance;
pub mod emotion;
pub mod fixture;
pub mod knowledge;
pub mod poet;
pub mod protocol;
pub mod timing;
pub mod trust;
