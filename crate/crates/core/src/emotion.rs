//! Listener pipeline: answer, tone, and composition of valence with π into a
//! label from an agreed taxonomy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{compute_aporia, AnswerValue, AporiaResult, DistanceError, DistanceSpec, Tokenizer};
use crate::knowledge::KnowledgeBase;

const DEFAULT_TAXONOMY: &str = include_str!("../../../config/taxonomy.toml");
const DEFAULT_LEXICON: &str = include_str!("../../../config/lexicon.toml");

#[derive(Debug, Error, PartialEq)]
pub enum EmotionError {
    #[error("taxonomy `{id}` needs at least 2 emotions")]
    TooFewEmotions { id: String },
    #[error("taxonomy `{id}` lists `{label}` twice")]
    DuplicateEmotion { id: String, label: String },
    #[error("cell label `{0}` is not one of the taxonomy's emotions")]
    UnknownLabel(String),
    #[error("malformed interval `{0}`")]
    BadInterval(String),
    #[error("cell {axis} range {range} leaves the domain")]
    OutsideDomain { axis: &'static str, range: Interval },
    #[error("cells cover (valence {valence}, π {pi}) {count} times")]
    Coverage { valence: f64, pi: f64, count: usize },
    #[error("lexicon term `{0}` must be lowercase")]
    UppercaseTerm(String),
    #[error("lexicon valence {valence} for `{term}` is outside [-1, 1]")]
    ValenceRange { term: String, valence: f64 },
    #[error("composition needs a normalized aporia level")]
    NotNormalized,
    #[error("(valence {valence}, π {pi}) is outside [-1, 1] × [0, 1]")]
    OutOfDomain { valence: f64, pi: f64 },
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("parsing: {0}")]
    Parse(String),
}

/// `R`: the first matching rule of the knowledge base.
pub fn answer(p: &str, q: &str, kb: &KnowledgeBase) -> String {
    kb.respond(p, q).to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToneLexicon {
    id: String,
    entries: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLexicon {
    id: String,
    #[serde(default)]
    entries: BTreeMap<String, f64>,
}

impl ToneLexicon {
    pub fn new(id: impl Into<String>, entries: BTreeMap<String, f64>) -> Result<Self, EmotionError> {
        for (term, &valence) in &entries {
            if term.to_lowercase() != *term {
                return Err(EmotionError::UppercaseTerm(term.clone()));
            }
            if !(-1.0..=1.0).contains(&valence) {
                return Err(EmotionError::ValenceRange { term: term.clone(), valence });
            }
        }
        Ok(Self { id: id.into(), entries })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EmotionError> {
        let raw: RawLexicon = toml::from_str(text).map_err(|e| EmotionError::Parse(e.to_string()))?;
        Self::new(raw.id, raw.entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmotionError> {
        Self::from_toml_str(&read(path.as_ref())?)
    }

    pub fn default_lexicon() -> Self {
        Self::from_toml_str(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn valence(&self, term: &str) -> Option<f64> {
        self.entries.get(term).copied()
    }
}

fn read(path: &Path) -> Result<String, EmotionError> {
    std::fs::read_to_string(path).map_err(|e| EmotionError::Io { path: path.display().to_string(), msg: e.to_string() })
}

/// Mean valence of every lexicon hit across `texts`; repeated tokens count
/// once per occurrence. Hits are summed in sorted order so the result does
/// not depend on the order of `texts`.
pub fn tone<S: AsRef<str>>(texts: &[S], lexicon: &ToneLexicon) -> f64 {
    let mut hits: Vec<f64> = texts
        .iter()
        .flat_map(|t| Tokenizer::Default.tokenize(t.as_ref()))
        .filter_map(|token| lexicon.valence(&token))
        .collect();
    if hits.is_empty() {
        return 0.0;
    }
    hits.sort_by(f64::total_cmp);
    (hits.iter().sum::<f64>() / hits.len() as f64).clamp(-1.0, 1.0)
}

/// A real interval with independently open or closed ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    fn within(&self, lo: f64, hi: f64) -> bool {
        self.lo >= lo && self.hi <= hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{:?}, {:?}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

impl FromStr for Interval {
    type Err = EmotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EmotionError::BadInterval(s.to_string());
        let t = s.trim();
        let lo_closed = match t.chars().next() {
            Some('[') => true,
            Some('(') => false,
            _ => return Err(bad()),
        };
        let hi_closed = match t.chars().last() {
            Some(']') => true,
            Some(')') => false,
            _ => return Err(bad()),
        };
        let inner = &t[1..t.len() - 1];
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        let lo: f64 = a.trim().parse().map_err(|_| bad())?;
        let hi: f64 = b.trim().parse().map_err(|_| bad())?;
        let nonempty = lo < hi || (lo == hi && lo_closed && hi_closed);
        if !(lo.is_finite() && hi.is_finite() && nonempty) {
            return Err(bad());
        }
        Ok(Interval { lo, lo_closed, hi, hi_closed })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub valence: Interval,
    pub pi: Interval,
    pub label: String,
}

/// The agreed emotion set `E` and its composition table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionTaxonomy {
    id: String,
    emotions: Vec<String>,
    cells: Vec<Cell>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    valence: String,
    pi: String,
    label: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaxonomy {
    id: String,
    emotions: Vec<String>,
    cells: Vec<RawCell>,
}

/// Representative points of every elementary region cut by `bounds` within
/// `[lo, hi]`: each breakpoint plus the midpoint of each gap.
fn probes(mut bounds: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    bounds.push(lo);
    bounds.push(hi);
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    let mut out = Vec::with_capacity(bounds.len() * 2);
    for w in bounds.windows(2) {
        out.push(w[0]);
        out.push((w[0] + w[1]) / 2.0);
    }
    out.extend(bounds.last());
    out
}

impl EmotionTaxonomy {
    /// Validates `k ≥ 2`, labels, domain bounds, and that the cells tile
    /// `[-1, 1] × [0, 1]` exactly once.
    pub fn new(id: impl Into<String>, emotions: Vec<String>, cells: Vec<Cell>) -> Result<Self, EmotionError> {
        let id = id.into();
        if emotions.len() < 2 {
            return Err(EmotionError::TooFewEmotions { id });
        }
        for (i, e) in emotions.iter().enumerate() {
            if emotions[..i].contains(e) {
                return Err(EmotionError::DuplicateEmotion { id, label: e.clone() });
            }
        }
        for c in &cells {
            if !emotions.contains(&c.label) {
                return Err(EmotionError::UnknownLabel(c.label.clone()));
            }
            if !c.valence.within(-1.0, 1.0) {
                return Err(EmotionError::OutsideDomain { axis: "valence", range: c.valence });
            }
            if !c.pi.within(0.0, 1.0) {
                return Err(EmotionError::OutsideDomain { axis: "pi", range: c.pi });
            }
        }
        let vs = probes(cells.iter().flat_map(|c| [c.valence.lo, c.valence.hi]).collect(), -1.0, 1.0);
        let ps = probes(cells.iter().flat_map(|c| [c.pi.lo, c.pi.hi]).collect(), 0.0, 1.0);
        for &valence in &vs {
            for &pi in &ps {
                let count = cells.iter().filter(|c| c.valence.contains(valence) && c.pi.contains(pi)).count();
                if count != 1 {
                    return Err(EmotionError::Coverage { valence, pi, count });
                }
            }
        }
        Ok(Self { id, emotions, cells })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EmotionError> {
        let raw: RawTaxonomy = toml::from_str(text).map_err(|e| EmotionError::Parse(e.to_string()))?;
        let cells = raw
            .cells
            .into_iter()
            .map(|c| Ok(Cell { valence: c.valence.parse()?, pi: c.pi.parse()?, label: c.label }))
            .collect::<Result<Vec<_>, EmotionError>>()?;
        Self::new(raw.id, raw.emotions, cells)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmotionError> {
        Self::from_toml_str(&read(path.as_ref())?)
    }

    pub fn default_taxonomy() -> Self {
        Self::from_toml_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn emotions(&self) -> &[String] {
        &self.emotions
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn covers<S: AsRef<str>>(&self, labels: &[S]) -> bool {
        labels.iter().all(|l| self.emotions.iter().any(|e| e == l.as_ref()))
    }

    /// Table lookup on raw coordinates.
    pub fn lookup(&self, valence: f64, pi: f64) -> Result<&str, EmotionError> {
        if !((-1.0..=1.0).contains(&valence) && (0.0..=1.0).contains(&pi)) {
            return Err(EmotionError::OutOfDomain { valence, pi });
        }
        let cell = self
            .cells
            .iter()
            .find(|c| c.valence.contains(valence) && c.pi.contains(pi))
            .expect("validated taxonomies tile the domain");
        Ok(&cell.label)
    }
}

pub fn compose<'t>(valence: f64, pi: &AporiaResult, tax: &'t EmotionTaxonomy) -> Result<&'t str, EmotionError> {
    if !pi.normalized {
        return Err(EmotionError::NotNormalized);
    }
    tax.lookup(valence, pi.pi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListenerPipelineResult {
    pub r: String,
    pub pi: f64,
    pub valence: f64,
    pub emotion: String,
}

pub fn run_listener_pipeline(
    p: &str,
    q: &str,
    r_prime: &str,
    kb: &KnowledgeBase,
    spec: &DistanceSpec,
    lexicon: &ToneLexicon,
    tax: &EmotionTaxonomy,
) -> Result<ListenerPipelineResult, EmotionError> {
    if !spec.is_normalized() {
        return Err(EmotionError::NotNormalized);
    }
    let r = answer(p, q, kb);
    let aporia = compute_aporia(kb, Some(p), Some(q), &AnswerValue::from(r.as_str()), &r_prime.into(), spec)?;
    let valence = tone(&[p, q, r_prime], lexicon);
    let emotion = compose(valence, &aporia, tax)?.to_string();
    Ok(ListenerPipelineResult { r, pi: aporia.pi, valence, emotion })
}
