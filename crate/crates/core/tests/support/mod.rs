#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Debug;
use std::path::PathBuf;
use std::sync::Arc;

use aporia_core::distance::{answer_distance, jaccard_distance, theory_distance, AnswerValue, DistanceSpec, Tokenizer};
use aporia_core::emotion::EmotionTaxonomy;
use aporia_core::fixture::Fixture;
use aporia_core::knowledge::{least_cost_explanation, KnowledgeBase, Rule, Theory, CATCH_ALL};
use aporia_core::poet::{PoetAgent, PoetEvent, PoetSession, ScriptedAgent, Verdict};
use aporia_core::protocol::Timestamp;
use aporia_core::trust::ledger::{parse_log, render_log};
use aporia_core::trust::{Direction, EmotionEvent, EmotionState, Ledger, Resource, TrustConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(name: &str) -> Fixture {
    Fixture::load(fixtures_dir().join(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn scripted(name: &str) -> Arc<ScriptedAgent> {
    Arc::new(ScriptedAgent::from_fixture(&fixture(name), EmotionTaxonomy::default_taxonomy()).unwrap())
}

pub fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn catch_all() -> Vec<Rule> {
    vec![Rule { pattern: CATCH_ALL.into(), answer: "unknown".into() }]
}

/// Runs `test` over `cases` generated values; the error names the shrunk input.
pub fn check<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S: Strategy,
    S::Value: Debug,
{
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

const VOCAB: [&str; 8] = ["killer", "inside", "house", "girl", "call", "dark", "yes", "no"];

/// Short phrases over a small vocabulary so token sets overlap often.
pub fn phrase() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::sample::select(&VOCAB[..]), 0..6), prop::sample::select(&[" ", ", ", "  ", "-"][..]))
        .prop_map(|(words, sep)| words.join(sep))
}

pub fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![(0u32..=20).prop_map(|k| k as f64 / 20.0), 0.0..=1.0f64]
}

pub fn answer_value() -> impl Strategy<Value = AnswerValue> {
    prop_oneof![
        (-1e6..1e6f64).prop_map(AnswerValue::Number),
        (-50i32..50).prop_map(|n| AnswerValue::Number(n as f64)),
        phrase().prop_map(AnswerValue::Text),
    ]
}

pub fn knowledge_free_spec() -> impl Strategy<Value = DistanceSpec> {
    prop::sample::select(vec![
        DistanceSpec::NumericAbs,
        DistanceSpec::NumericRelative,
        DistanceSpec::TokenSimilarity { tokenizer: Tokenizer::Default },
        DistanceSpec::TokenSimilarity { tokenizer: Tokenizer::Whitespace },
    ])
}

pub const PROPS: [&str; 4] = ["p0", "p1", "p2", "p3"];

/// How a generated theory treats each proposition of [`PROPS`]:
/// 0 = silent, 1 = holds, 2 = negated.
#[derive(Debug, Clone)]
pub struct TheorySketch {
    pub id: String,
    pub cost: f64,
    pub stance: [u8; 4],
}

#[derive(Debug, Clone)]
pub struct KbSketch {
    pub threshold: f64,
    pub theories: Vec<TheorySketch>,
}

impl KbSketch {
    pub fn build(&self) -> KnowledgeBase {
        let theories = self
            .theories
            .iter()
            .map(|t| {
                let pick = |v: u8| PROPS.iter().zip(t.stance).filter(move |(_, s)| *s == v).map(|(p, _)| *p);
                Theory::new(&t.id, t.cost, pick(1), pick(2)).unwrap()
            })
            .collect();
        KnowledgeBase::new("generated", self.threshold, theories, catch_all()).unwrap()
    }

    pub fn cost(&self, id: &str) -> f64 {
        self.theories.iter().find(|t| t.id == id).map(|t| t.cost).unwrap()
    }
}

pub fn kb_sketch(max_theories: usize) -> impl Strategy<Value = KbSketch> {
    let theory = (unit(), prop::array::uniform4(0u8..3));
    (unit(), prop::collection::vec(theory, 1..=max_theories)).prop_map(|(threshold, ts)| KbSketch {
        threshold,
        theories: ts
            .into_iter()
            .enumerate()
            .map(|(i, (cost, stance))| TheorySketch { id: format!("t{i}"), cost, stance })
            .collect(),
    })
}

/// Statements over [`PROPS`], with negation and free text mixed in.
pub fn statement() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(&PROPS[..]).prop_map(str::to_string),
        prop::sample::select(&PROPS[..]).prop_map(|p| format!("not {p}")),
        prop::sample::select(&PROPS[..]).prop_map(|p| format!("¬{p}")),
        phrase(),
    ]
}

pub fn distance_symmetry(cases: u32) -> Result<(), String> {
    check(cases, (answer_value(), answer_value(), knowledge_free_spec()), |(a, b, spec)| {
        let ab = answer_distance(&a, &b, &spec);
        let ba = answer_distance(&b, &a, &spec);
        match (ab, ba) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x.pi.to_bits(), y.pi.to_bits());
                if spec.is_normalized() {
                    prop_assert!((0.0..=1.0).contains(&x.pi));
                }
            }
            (Err(_), Err(_)) => {}
            (x, y) => prop_assert!(false, "one direction failed: {:?} vs {:?}", x, y),
        }
        Ok(())
    })?;
    check(cases, (kb_sketch(4), statement(), statement()), |(sketch, r, rp)| {
        let kb = sketch.build();
        let spec = DistanceSpec::theory_cost("t0");
        let (r, rp) = (AnswerValue::Text(r), AnswerValue::Text(rp));
        let ab = aporia_core::distance::compute_aporia(&kb, None, None, &r, &rp, &spec).unwrap();
        let ba = aporia_core::distance::compute_aporia(&kb, None, None, &rp, &r, &spec).unwrap();
        prop_assert_eq!(ab.pi.to_bits(), ba.pi.to_bits());
        prop_assert!((0.0..=1.0).contains(&ab.pi));
        Ok(())
    })
}

fn token_set(mask: u8) -> BTreeSet<String> {
    VOCAB.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, w)| w.to_string()).collect()
}

pub fn jaccard_triangle(cases: u32) -> Result<(), String> {
    check(cases, (any::<u8>(), any::<u8>(), any::<u8>()), |(a, b, c)| {
        let (a, b, c) = (token_set(a), token_set(b), token_set(c));
        let (ab, bc, ac) = (jaccard_distance(&a, &b), jaccard_distance(&b, &c), jaccard_distance(&a, &c));
        prop_assert!(ac <= ab + bc + 1e-12, "d(a,c)={} > {} + {}", ac, ab, bc);
        // Same through the answer-level API.
        let text = |s: &BTreeSet<String>| AnswerValue::Text(s.iter().cloned().collect::<Vec<_>>().join(" "));
        let spec = DistanceSpec::token_similarity();
        let via = answer_distance(&text(&a), &text(&c), &spec).unwrap().pi;
        prop_assert_eq!(via.to_bits(), ac.to_bits());
        Ok(())
    })
}

fn single_theory(gamma: f64, threshold: f64) -> KnowledgeBase {
    KnowledgeBase::new("k", threshold, vec![Theory::new("phi", gamma, ["p"], Vec::<String>::new()).unwrap()], catch_all())
        .unwrap()
}

pub fn threshold_monotonicity(cases: u32) -> Result<(), String> {
    check(cases, (unit(), unit(), unit()), |(gamma, t1, t2)| {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let pi_lo = theory_distance("phi", &single_theory(gamma, lo)).unwrap().pi;
        let pi_hi = theory_distance("phi", &single_theory(gamma, hi)).unwrap().pi;
        prop_assert!(pi_lo <= pi_hi, "π(T={}) = {} > π(T={}) = {}", lo, pi_lo, hi, pi_hi);
        for (t, pi) in [(lo, pi_lo), (hi, pi_hi)] {
            let expected = if gamma < t { gamma } else { 0.0 };
            prop_assert_eq!(pi.to_bits(), expected.to_bits());
        }
        Ok(())
    })
}

/// One generated event; `seq` and service are filled in by the caller.
pub fn trust_event() -> impl Strategy<Value = (usize, bool, f64, i64)> {
    (0usize..4, any::<bool>(), unit(), 0i64..1_000_000)
}

pub fn events_for(service: &str, raw: &[(usize, bool, f64, i64)]) -> Vec<EmotionEvent> {
    raw.iter()
        .enumerate()
        .map(|(i, &(r, fav, intensity, ms))| EmotionEvent {
            service_id: service.into(),
            resource: Resource::ALL[r],
            emotion: if fav { "contentment".into() } else { "sadness".into() },
            intensity,
            direction: if fav { Direction::Favorable } else { Direction::Unfavorable },
            seq: i as u64 + 1,
            ts: Timestamp::from_millis(ms),
        })
        .collect()
}

/// Bit-level comparison of two folded states.
pub fn same_state(a: &EmotionState, b: &EmotionState) -> bool {
    a.count() == b.count()
        && Resource::ALL.iter().all(|&r| {
            a.last(r) == b.last(r)
                && [Direction::Favorable, Direction::Unfavorable]
                    .iter()
                    .all(|&d| a.mean(r, d).to_bits() == b.mean(r, d).to_bits())
        })
}

pub fn ledger_replay_determinism(cases: u32) -> Result<(), String> {
    let log = prop_oneof![
        4 => prop::collection::vec(trust_event(), 0..40),
        1 => prop::collection::vec(trust_event(), 0..=1000),
    ];
    check(cases, log, |raw| {
        let events = events_for("svc", &raw);
        let first = EmotionState::fold("svc", 0.9, &events).unwrap();
        let second = EmotionState::fold("svc", 0.9, &events).unwrap();
        prop_assert!(same_state(&first, &second));
        // Through the persisted log format and a ledger.
        let reparsed = parse_log("svc", &render_log(&events)).unwrap();
        prop_assert_eq!(&reparsed, &events);
        let ledger = Ledger::new(TrustConfig::default());
        for ev in reparsed {
            ledger.apply(ev).unwrap();
        }
        prop_assert!(same_state(&first, &ledger.state_or_empty("svc")));
        Ok(())
    })
}

/// Candidate sets of theory ids, possibly repeating ids within a set.
pub fn candidates(n_theories: usize) -> impl Strategy<Value = Vec<Vec<String>>> {
    let id = (0..n_theories).prop_map(|i| format!("t{i}"));
    prop::collection::vec(prop::collection::vec(id, 1..=4), 1..=8)
}

/// Exhaustive minimum over all candidates, costs summed from the sketch.
pub fn least_cost_oracle(sketch: &KbSketch, cands: &[Vec<String>]) -> (Vec<String>, f64) {
    let mut scored: Vec<(f64, Vec<String>)> = cands
        .iter()
        .map(|c| {
            let ids: Vec<String> = c.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            (ids.iter().map(|id| sketch.cost(id)).sum(), ids)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let (cost, ids) = scored.swap_remove(0);
    (ids, cost)
}

pub fn least_cost_brute_force(cases: u32) -> Result<(), String> {
    let input = kb_sketch(4).prop_flat_map(|s| {
        let n = s.theories.len();
        (Just(s), candidates(n))
    });
    check(cases, input, |(sketch, cands)| {
        let kb = sketch.build();
        let got = least_cost_explanation("observation", &cands, &kb).unwrap();
        let (ids, cost) = least_cost_oracle(&sketch, &cands);
        prop_assert_eq!(&got.rejected, &ids);
        prop_assert_eq!(got.total_cost.to_bits(), cost.to_bits());
        Ok(())
    })
}

/// Letters of the interviewer's step language.
pub const POET_LETTERS: [char; 6] = ['1', '3', 'a', 'b', '5', '6'];

/// Prefixes (of length ≤ `max_len`) of `1·(3ab5)⁺·6`, built from explicit words.
pub fn poet_language_prefixes(max_len: usize) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut rounds = 1;
    loop {
        let word = format!("1{}6", "3ab5".repeat(rounds));
        if word.len() > max_len + 4 {
            break;
        }
        for n in 0..=word.len().min(max_len) {
            out.insert(word[..n].to_string());
        }
        rounds += 1;
    }
    out
}

pub fn poet_event(letter: char) -> PoetEvent {
    match letter {
        '1' => PoetEvent::Negotiate(labels(&["fear", "amusement", "neutral"])),
        '3' => PoetEvent::SendPremise {
            p: "A young girl is home alone. She receives a menacing call from a mysterious man.".into(),
            q: Some("Is there a threat for the girl?".into()),
        },
        'a' => PoetEvent::AgentAnswer,
        'b' => PoetEvent::SendReveal { r_prime: "yes, hidden inside the house".into() },
        '5' => PoetEvent::AgentEmotion,
        '6' => PoetEvent::RequestVerdict(Verdict::Human),
        other => panic!("not a step letter: {other}"),
    }
}

#[derive(Debug, Default)]
pub struct EnumerationReport {
    pub strings: u64,
    pub accepted: u64,
    pub expected: u64,
    pub mismatches: Vec<String>,
}

/// Drives every string over [`POET_LETTERS`] up to `max_len` through
/// [`PoetSession::step`].
///
/// A session is a deterministic function of the events it accepted, so each
/// distinct accepted prefix is stepped once per letter and the results are
/// reused for all strings sharing that prefix.
pub fn enumerate_poet(agent: Arc<dyn PoetAgent>, max_len: usize) -> EnumerationReport {
    let oracle = poet_language_prefixes(max_len);
    let mut states: Vec<(String, PoetSession)> = vec![(String::new(), PoetSession::new("enum", agent))];
    let mut trans: HashMap<(usize, usize), Option<usize>> = HashMap::new();
    let mut report = EnumerationReport { expected: oracle.len() as u64, ..Default::default() };

    // Stack entries: (string so far, state after its accepted events, all accepted so far).
    let mut stack: Vec<(String, usize, bool)> = vec![(String::new(), 0, true)];
    while let Some((s, state, ok)) = stack.pop() {
        report.strings += 1;
        if ok {
            report.accepted += 1;
        }
        if ok != oracle.contains(&s) {
            report.mismatches.push(format!("{s:?}: accepted={ok}"));
        }
        if s.len() == max_len {
            continue;
        }
        for (li, &letter) in POET_LETTERS.iter().enumerate() {
            let next = match trans.get(&(state, li)) {
                Some(n) => *n,
                None => {
                    let (word, session) = &states[state];
                    let ts = Timestamp::from_millis(word.len() as i64);
                    let stepped = session.step(poet_event(letter), ts).ok().map(|s| (format!("{word}{letter}"), s));
                    let n = stepped.map(|entry| {
                        states.push(entry);
                        states.len() - 1
                    });
                    trans.insert((state, li), n);
                    n
                }
            };
            let mut t = s.clone();
            t.push(letter);
            match next {
                Some(n) => stack.push((t, n, ok)),
                None => stack.push((t, state, false)),
            }
        }
    }
    // Ignoring rejected events, what was accepted still spells a prefix.
    for (word, _) in &states {
        if !oracle.contains(word) {
            report.mismatches.push(format!("accepted subsequence {word:?} is not a prefix"));
        }
    }
    report
}
