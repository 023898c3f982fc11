//! Worked examples, with expected values recomputed here from first principles.

mod support;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use aporia_core::distance::{answer_distance, compute_aporia, AnswerValue, DistanceSpec};
use aporia_core::emotion::{answer, run_listener_pipeline, tone, EmotionTaxonomy, ToneLexicon};
use aporia_core::knowledge::{least_cost_explanation, KnowledgeBase, Theory};
use aporia_core::poet::{PoetAgent, PoetEvent, PoetPhase, Verdict};
use aporia_core::protocol::bank::{BankProver, Capability, SimulatedBank};
use aporia_core::protocol::{
    AporiaConfig, Decision, MessageKind, Outcome, Payload, Phase, ProtocolMessage, ProtocolRegistry, Session,
    SessionConfig, Timestamp,
};
use aporia_core::timing::{anticipation_risk, intervals, summarize, AnticipationRisk, ListenerModel, Timeline};
use aporia_core::trust::{
    observe, select_service, Contract, Direction, EmotionEvent, InvocationRecord, Ledger, Policy, Resource,
    TrustConfig,
};

fn words(s: &str) -> HashSet<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect()
}

fn jaccard_oracle(a: &str, b: &str) -> f64 {
    let (a, b) = (words(a), words(b));
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        1.0 - a.intersection(&b).count() as f64 / union as f64
    }
}

#[test]
fn sigma_outcome_agrees_with_the_balance_delta() {
    for (token, n) in [(Some(Capability(9)), 25u64), (None, 25), (Some(Capability(8)), 25), (Some(Capability(9)), 0)] {
        let mut bank = SimulatedBank::new(500, Capability(9));
        let before = bank.balance();
        let prover = BankProver { token };
        let challenge = Payload::Number(n as f64);
        let s = Session::sigma(Arc::new(bank.instance()))
            .step(ProtocolMessage::new(MessageKind::Setup, prover.setup(), Timestamp::ZERO))
            .unwrap()
            .step(ProtocolMessage::new(MessageKind::Challenge, challenge.clone(), Timestamp::from_millis(10)))
            .unwrap();
        let z = prover.respond(&mut bank, &challenge);
        let s = s.step(ProtocolMessage::new(MessageKind::Response, z, Timestamp::from_millis(20))).unwrap();
        let delta_ok = before - bank.balance() == n;
        let expected = if delta_ok { Decision::Accept } else { Decision::Reject };
        assert_eq!(s.outcome(), Some(&Outcome::Decision(expected)), "token {token:?}, n {n}");
        assert_eq!(s.phase(), Phase::Complete);
    }
}

#[test]
fn implicit_answer_comes_from_the_first_matching_rule() {
    let f = support::fixture("toilet-dinner");
    let premise = f.premise.to_lowercase();
    let oracle = f
        .knowledge
        .rules()
        .iter()
        .find(|r| r.pattern == "*" || premise.contains(&r.pattern.to_lowercase()))
        .map(|r| r.answer.clone())
        .unwrap();

    let mut reg = ProtocolRegistry::new();
    reg.register_knowledge(f.knowledge.clone());
    reg.register_distance("similarity", DistanceSpec::token_similarity());
    let cfg = AporiaConfig {
        knowledge: f.knowledge.id().to_string(),
        distance: "similarity".into(),
        implicit_q_allowed: true,
        implicit_r_allowed: true,
    };
    let s = reg
        .new_session(SessionConfig::Aporia(cfg))
        .unwrap()
        .step(ProtocolMessage::new(MessageKind::Premise, Payload::premise(&f.premise, None), Timestamp::ZERO))
        .unwrap()
        .step(ProtocolMessage::new(MessageKind::Reveal, Payload::text(f.reveal.as_text()), Timestamp::from_millis(5)))
        .unwrap();
    let kinds = s.transcript().kinds();
    assert_eq!(kinds, [MessageKind::Premise, MessageKind::Question, MessageKind::Answer, MessageKind::Reveal]);
    let r = &s.messages()[2];
    assert!(r.implicit && s.messages()[1].implicit);
    assert_eq!(r.payload.to_string(), oracle);
    let pi = s.outcome().and_then(Outcome::aporia).unwrap().pi;
    assert_eq!(pi, jaccard_oracle(&oracle, &f.reveal.as_text()));
    assert_eq!(pi, 0.5);
}

#[test]
fn least_cost_prefers_cheaper_and_breaks_ties_by_id() {
    let kb = KnowledgeBase::new(
        "k",
        1.0,
        vec![
            Theory::new("one", 0.9, ["x"], Vec::<String>::new()).unwrap(),
            Theory::new("two", 0.3, ["y"], Vec::<String>::new()).unwrap(),
            Theory::new("a", 0.5, ["z"], Vec::<String>::new()).unwrap(),
            Theory::new("b", 0.5, ["w"], Vec::<String>::new()).unwrap(),
        ],
        support::catch_all(),
    )
    .unwrap();
    let pick = |c: &[&[&str]]| {
        let c: Vec<Vec<String>> = c.iter().map(|ids| ids.iter().map(|s| s.to_string()).collect()).collect();
        least_cost_explanation("obs", &c, &kb).unwrap().rejected
    };
    assert_eq!(pick(&[&["two"], &["one"]]), ["two"]);
    // Both orders give the same answer on a tie.
    assert_eq!(pick(&[&["a"], &["b"]]), ["a"]);
    assert_eq!(pick(&[&["b"], &["a"]]), ["a"]);
}

#[test]
fn token_similarity_examples_match_hand_counts() {
    let spec = DistanceSpec::token_similarity();
    for (a, b) in [
        ("they dine convivially", "they defecate convivially"),
        ("yes, somewhere outside", "yes, hidden inside the house"),
    ] {
        let pi = answer_distance(&a.into(), &b.into(), &spec).unwrap().pi;
        assert_eq!(pi, jaccard_oracle(a, b), "{a} / {b}");
    }
    assert!((jaccard_oracle("yes, somewhere outside", "yes, hidden inside the house") - 6.0 / 7.0).abs() < 1e-15);
}

#[test]
fn theory_cost_fixtures_reject_the_cheaper_theory() {
    for (name, rejected, gamma) in [("hicks", "christians-forgive", 0.3), ("rick-morty", "anthropomorphic-physiology", 0.3)]
    {
        let f = support::fixture(name);
        let r = answer(&f.premise, &f.effective_question(), &f.knowledge);
        let res = compute_aporia(&f.knowledge, None, None, &AnswerValue::Text(r), &f.reveal, &f.distance).unwrap();
        assert_eq!(res.decomposition.rejected, [rejected], "{name}");
        let t = f.knowledge.threshold().value();
        assert_eq!(res.pi, if gamma < t { gamma } else { 0.0 }, "{name}");
    }
}

/// Rows of a catapult CSV in integer hundredths of a second.
fn centis(path: &std::path::Path) -> Vec<i64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (int, frac) = l.rsplit(',').next().unwrap().trim().split_once('.').unwrap();
            int.parse::<i64>().unwrap() * 100 + frac.parse::<i64>().unwrap()
        })
        .collect()
}

#[test]
fn catapult_intervals_and_means() {
    let dir = support::fixtures_dir().join("catapult");
    let timelines = Timeline::load_dir(&dir).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    let rows: Vec<Vec<i64>> = files.iter().map(|p| centis(p)).collect();
    let steps: Vec<Vec<i64>> = rows.iter().map(|r| r.windows(2).map(|w| w[1] - w[0]).collect()).collect();
    assert_eq!(steps[0], [375, 108, 178]);
    assert_eq!(steps[1], [289, 63, 239]);

    for (t, s) in timelines.iter().zip(&steps) {
        let got: Vec<f64> = intervals(t).iter().map(|i| i.duration_s).collect();
        for (g, c) in got.iter().zip(s) {
            assert!((g - *c as f64 / 100.0).abs() < 1e-9);
        }
    }

    let mean = |k: usize, n: usize| steps[..n].iter().map(|s| s[k]).sum::<i64>() as f64 / n as f64 / 100.0;
    let two = summarize(&timelines[..2]).unwrap();
    let five = summarize(&timelines).unwrap();
    for k in 0..3 {
        assert!((two.averages[k] - mean(k, 2)).abs() < 1e-9);
        assert!((five.averages[k] - mean(k, 5)).abs() < 1e-9);
    }
    assert_eq!(two.averages.iter().map(|a| (a * 1000.0).round() as i64).collect::<Vec<_>>(), [3320, 855, 2085]);
    assert_eq!(five.rounded_centis, [288, 81, 234]);

    let c = ListenerModel::new(3.0).unwrap();
    assert_eq!(anticipation_risk(intervals(&timelines[0])[0].duration_s, c), AnticipationRisk::Optimal);
}

fn lexicon(entries: &[(&str, f64)]) -> ToneLexicon {
    ToneLexicon::new("t", entries.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>()).unwrap()
}

#[test]
fn tone_and_composition_examples() {
    let lex = lexicon(&[("menacing", -0.6), ("killer", -0.8)]);
    assert!((tone(&["menacing call from a serial killer"], &lex) - (-0.6 - 0.8) / 2.0).abs() < 1e-12);
    let joy = lexicon(&[("joyful", 0.8)]);
    assert_eq!(tone(&["joyful joyful"], &joy), 0.8);

    let tax = EmotionTaxonomy::default_taxonomy();
    assert_eq!(tax.lookup(-0.7, 0.857).unwrap(), "fear");
    assert_eq!(tax.lookup(0.6, 0.5).unwrap(), "amusement");
    for v in [-1.0, -0.3, 0.0, 0.3, 1.0] {
        assert_eq!(tax.lookup(v, 0.05).unwrap(), "neutral");
    }
}

#[test]
fn scream_pipeline_composes_the_two_steps() {
    let f = support::fixture("scream");
    let lex = f.lexicon_or_default();
    let tax = EmotionTaxonomy::default_taxonomy();
    let q = f.effective_question();
    let out =
        run_listener_pipeline(&f.premise, &q, &f.reveal.as_text(), &f.knowledge, &f.distance, &lex, &tax).unwrap();
    assert_eq!(out.r, "yes, somewhere outside");
    assert_eq!(out.pi, jaccard_oracle(&out.r, &f.reveal.as_text()));
    // Mean of the lexicon hits across P, Q and R′.
    let hits: Vec<f64> = [f.premise.as_str(), q.as_str(), &f.reveal.as_text()]
        .iter()
        .flat_map(|t| words_in_order(t))
        .filter_map(|w| lex.valence(&w))
        .collect();
    let valence = hits.iter().sum::<f64>() / hits.len() as f64;
    assert!((out.valence - valence).abs() < 1e-12);
    assert_eq!(out.emotion, tax.lookup(valence, out.pi).unwrap());
    assert_eq!(out.emotion, "fear");
}

fn words_in_order(s: &str) -> Vec<String> {
    s.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(String::from).collect()
}

#[test]
fn every_fixture_runs_end_to_end() {
    let tax = EmotionTaxonomy::default_taxonomy();
    let mut names: Vec<String> = std::fs::read_dir(support::fixtures_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join("protocol.toml").exists())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 11);
    for name in names {
        let f = support::fixture(&name);
        let q = f.effective_question();
        let r = answer(&f.premise, &q, &f.knowledge);
        let res = compute_aporia(&f.knowledge, Some(&f.premise), Some(&q), &AnswerValue::Text(r), &f.reveal, &f.distance)
            .unwrap();
        if f.distance.is_normalized() {
            assert!((0.0..=1.0).contains(&res.pi), "{name}");
            let lex = f.lexicon_or_default();
            let out = run_listener_pipeline(&f.premise, &q, &f.reveal.as_text(), &f.knowledge, &f.distance, &lex, &tax)
                .unwrap();
            assert!(tax.emotions().contains(&out.emotion), "{name}");
        } else {
            assert_eq!(name, "balance");
            assert_eq!(res.pi, 100_000.0 - 100.0);
        }
    }
}

#[test]
fn coyote_agent_answers_the_catapult_premise() {
    let agent = support::scripted("coyote");
    let r = agent.answer("The coyote loads the catapult again.", "What is going to happen next?").unwrap();
    assert_eq!(r, "as before, machines are deterministic");
    let again = agent.answer("The coyote loads the catapult again.", "What is going to happen next?").unwrap();
    assert_eq!(r, again);
}

#[test]
fn scripted_round_reports_the_pipeline_label() {
    let f = support::fixture("scream");
    let agent: Arc<dyn PoetAgent> = support::scripted("scream");
    let q = f.effective_question();
    let s = aporia_core::poet::start_test("t", &support::labels(&["fear", "amusement", "neutral"]), agent)
        .unwrap()
        .step(PoetEvent::SendPremise { p: f.premise.clone(), q: Some(q.clone()) }, Timestamp::ZERO)
        .unwrap()
        .step(PoetEvent::AgentAnswer, Timestamp::from_millis(1))
        .unwrap()
        .step(PoetEvent::SendReveal { r_prime: f.reveal.as_text() }, Timestamp::from_millis(2))
        .unwrap()
        .step(PoetEvent::AgentEmotion, Timestamp::from_millis(3))
        .unwrap();
    let expected = run_listener_pipeline(
        &f.premise,
        &q,
        &f.reveal.as_text(),
        &f.knowledge,
        &f.distance,
        &f.lexicon_or_default(),
        &EmotionTaxonomy::default_taxonomy(),
    )
    .unwrap();
    assert_eq!(s.rounds()[0].emotion, expected.emotion);
    assert_eq!(s.rounds()[0].pi, expected.pi);
    let closed = s.step(PoetEvent::RequestVerdict(Verdict::Human), Timestamp::from_millis(4)).unwrap();
    assert_eq!((closed.phase(), closed.verdict()), (PoetPhase::Closed, Some(Verdict::Human)));
}

#[test]
fn transfer_violations_get_direction_specific_labels() {
    let cfg = TrustConfig::default();
    let c = Contract::transfer("bank", false);
    let ev = |nb| observe(&InvocationRecord::transfer("bank", 100.0, 50.0, nb), &c, &cfg.emotions).unwrap().remove(0);
    let (under, over) = (ev(40.0), ev(60.0));
    // Expected balance ob − a = 50; deviation relative to it.
    assert!((under.intensity - (50.0f64 - 40.0).abs() / 50.0).abs() < 1e-12);
    assert!((over.intensity - (50.0f64 - 60.0).abs() / 50.0).abs() < 1e-12);
    assert_eq!((under.emotion.as_str(), over.emotion.as_str()), ("sadness", "surprise"));
}

fn money(service: &str, seq: u64, intensity: f64, direction: Direction) -> EmotionEvent {
    EmotionEvent {
        service_id: service.into(),
        resource: Resource::Money,
        emotion: "x".into(),
        intensity,
        direction,
        seq,
        ts: Timestamp::ZERO,
    }
}

#[test]
fn decayed_means_and_selection() {
    let ledger = Ledger::new(TrustConfig::default());
    ledger.apply(money("bank", 1, 0.2, Direction::Unfavorable)).unwrap();
    let m1 = 0.9 * 0.0 + 0.1 * 0.2;
    assert!((ledger.state_or_empty("bank").mean(Resource::Money, Direction::Unfavorable) - m1).abs() < 1e-15);
    ledger.apply(money("bank", 2, 0.2, Direction::Unfavorable)).unwrap();
    let m2 = 0.9 * m1 + 0.1 * 0.2;
    assert!((ledger.state_or_empty("bank").mean(Resource::Money, Direction::Unfavorable) - m2).abs() < 1e-15);
    assert!((m2 - 0.038).abs() < 1e-12);

    // Candidates with favorable means 0.5 and 0.3; no decay so means equal the last intensity.
    let sel = Ledger::new(TrustConfig { decay: 0.0, ..TrustConfig::default() });
    sel.apply(money("high", 1, 0.5, Direction::Favorable)).unwrap();
    sel.apply(money("low", 1, 0.3, Direction::Favorable)).unwrap();
    let scores: Vec<f64> =
        ["high", "low"].iter().map(|s| sel.state_or_empty(s).mean(Resource::Money, Direction::Favorable)).collect();
    assert_eq!(scores, [0.5, 0.3]);
    let policy = Policy::parse("any", "happy(money)").unwrap();
    assert_eq!(select_service(&["low", "high"], &policy, &sel).as_deref(), Some("high"));
}

#[test]
fn bored_time_blocks_a_happy_policy() {
    let policy = Policy::parse("p", "happy(Money) ∧ ¬bored(Time)").unwrap();
    let c = Contract::transfer("svc", true);
    let verdict = |actual| {
        let ledger = Ledger::new(TrustConfig::default());
        let rec = InvocationRecord::transfer("svc", 100.0, 50.0, 50.0).with_cost(Resource::Time, 100.0, actual);
        ledger.record(&rec, &c).unwrap();
        policy.evaluate(&ledger.state_or_empty("svc"), ledger.config().bored_margin)
    };
    assert!(!verdict(121.0));
    assert!(verdict(120.0));
}
