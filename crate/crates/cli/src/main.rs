//! `aporia` command-line entry point.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use aporia_core::distance::DistanceSpec;
use aporia_core::emotion::{compose, tone, EmotionTaxonomy};
use aporia_core::fixture::{distance_spec, Fixture};
use aporia_core::poet::{self, AgentRegistry, AgentSpec, ScriptedAgent, ServeOptions};
use aporia_core::protocol::{
    AporiaConfig, MessageKind, Outcome, Payload, ProtocolMessage, ProtocolRegistry, SessionConfig, Timestamp,
};
use aporia_core::timing::{self, Timeline};
use aporia_core::trust::{select_service, Direction, Ledger, Policy, Resource, TrustConfig};

#[derive(Parser)]
#[command(name = "aporia", version, about = "Aporia protocol workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fixture's protocol and report π, tone and emotion.
    RunProtocol {
        fixture: PathBuf,
        /// Distance kind: numeric_abs, numeric_rel, token_similarity, theory_cost.
        #[arg(long)]
        distance: Option<String>,
        /// Theory parameter for theory_cost.
        #[arg(long)]
        theory: Option<String>,
        /// Taxonomy file; defaults to taxonomy.toml in the config directory.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Interval table and average steps over a directory of timeline CSVs.
    TimingReport {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Replay per-service event logs and pick a service satisfying a policy.
    TrustReplay {
        logdir: PathBuf,
        #[arg(long)]
        policy: String,
        /// Restrict selection to these services (comma separated).
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<String>,
        #[arg(long)]
        json: bool,
    },
    /// Serve PoET sessions over TCP or standard input/output.
    PoetServe {
        #[arg(default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        stdio: bool,
        /// Fixture directory providing a scripted agent (repeatable; first is default).
        #[arg(long = "fixture")]
        fixtures: Vec<PathBuf>,
        /// Remote agent as NAME=HOST:PORT (repeatable).
        #[arg(long = "remote")]
        remotes: Vec<String>,
        /// Write closed sessions here as <session-id>.ndjson.
        #[arg(long)]
        export_dir: Option<PathBuf>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Print an exported PoET session.
    Export {
        session_id: String,
        #[arg(long, default_value = "exports")]
        dir: PathBuf,
        /// Replay the export against this fixture's scripted agent.
        #[arg(long)]
        verify_fixture: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn config_dir() -> PathBuf {
    std::env::var_os("APORIA_CONFIG_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("config"))
}

fn load_taxonomy(explicit: Option<&Path>) -> Result<EmotionTaxonomy> {
    if let Some(path) = explicit {
        return EmotionTaxonomy::load(path).with_context(|| format!("loading taxonomy {}", path.display()));
    }
    let path = config_dir().join("taxonomy.toml");
    if path.exists() {
        EmotionTaxonomy::load(&path).with_context(|| format!("loading taxonomy {}", path.display()))
    } else {
        Ok(EmotionTaxonomy::default_taxonomy())
    }
}

fn load_trust_config() -> Result<TrustConfig> {
    let path = config_dir().join("trust.toml");
    if path.exists() {
        TrustConfig::load(&path).with_context(|| format!("loading {}", path.display()))
    } else {
        Ok(TrustConfig::default())
    }
}

fn emit(json: bool, value: Value, text: String) {
    if json {
        println!("{}", serde_json::to_string_pretty(&value).expect("json values serialize"));
    } else {
        print!("{text}");
    }
}

fn run_protocol(
    dir: &Path,
    distance: Option<&str>,
    theory: Option<&str>,
    taxonomy: Option<&Path>,
    json: bool,
) -> Result<()> {
    if !dir.is_dir() {
        bail!("fixture directory {} not found", dir.display());
    }
    let mut fixture = Fixture::load(dir).with_context(|| format!("loading fixture {}", dir.display()))?;
    if distance.is_some() || theory.is_some() {
        let kind = distance.map(str::to_string).unwrap_or_else(|| fixture.distance.kind().name().to_string());
        let theory = theory.map(str::to_string).or_else(|| match &fixture.distance {
            DistanceSpec::TheoryCost { theory } => Some(theory.clone()),
            _ => None,
        });
        fixture.distance = distance_spec(&kind, theory.as_deref())?;
    }
    let tax = load_taxonomy(taxonomy)?;
    let lexicon = fixture.lexicon_or_default();

    let mut registry = ProtocolRegistry::new();
    registry.register_knowledge(fixture.knowledge.clone());
    registry.register_distance("fixture", fixture.distance.clone());
    let session = registry
        .new_session(SessionConfig::Aporia(AporiaConfig {
            knowledge: fixture.knowledge.id().to_string(),
            distance: "fixture".into(),
            implicit_q_allowed: true,
            implicit_r_allowed: true,
        }))?
        .with_id(fixture.name.clone());
    let premise = ProtocolMessage::new(
        MessageKind::Premise,
        Payload::premise(fixture.premise.clone(), fixture.question.as_deref()),
        Timestamp::ZERO,
    );
    let reveal = ProtocolMessage::new(MessageKind::Reveal, fixture.reveal.clone().into(), Timestamp::ZERO);
    let session = session.step(premise)?.step(reveal)?;
    let transcript = session.transcript();
    let Some(Outcome::Aporia(result)) = session.outcome() else {
        bail!("protocol run ended without an aporia level");
    };

    let question = session.question().unwrap_or_default();
    let find = |kind: MessageKind| transcript.messages.iter().find(|m| m.kind == kind);
    let answer = find(MessageKind::Answer).map(|m| m.payload.to_string()).unwrap_or_default();
    let q_implicit = find(MessageKind::Question).is_some_and(|m| m.implicit);
    let r_implicit = find(MessageKind::Answer).is_some_and(|m| m.implicit);
    let reveal_text = fixture.reveal.to_string();
    let valence = tone(&[fixture.premise.as_str(), question.as_str(), reveal_text.as_str()], &lexicon);
    let emotion = if result.normalized { Some(compose(valence, result, &tax)?.to_string()) } else { None };

    let mark = |implicit: bool| if implicit { "  (implicit)" } else { "" };
    let mut text = String::new();
    let row = |text: &mut String, k: &str, v: &str| {
        let _ = writeln!(text, "{k:<12}{v}");
    };
    row(&mut text, "fixture", &fixture.name);
    row(&mut text, "premise", &fixture.premise);
    row(&mut text, "question", &format!("{question}{}", mark(q_implicit)));
    row(&mut text, "answer", &format!("{answer}{}", mark(r_implicit)));
    row(&mut text, "reveal", &reveal_text);
    row(&mut text, "distance", fixture.distance.kind().name());
    let d = &result.decomposition;
    if !d.rejected.is_empty() {
        row(&mut text, "rejected", &d.rejected.join(", "));
    }
    if let (Some(g), Some(t)) = (d.gamma, d.threshold) {
        row(&mut text, "gamma", &format!("{g:.6}"));
        row(&mut text, "threshold", &format!("{t:.6}"));
    }
    let pi = if result.normalized { format!("{:.6}", result.pi) } else { format!("{}", result.pi) };
    row(&mut text, "pi", &pi);
    row(&mut text, "normalized", &result.normalized.to_string());
    row(&mut text, "valence", &format!("{valence:.6}"));
    row(&mut text, "emotion", emotion.as_deref().unwrap_or("n/a (distance not normalized)"));

    let value = json!({
        "fixture": fixture.name,
        "premise": fixture.premise,
        "question": question,
        "question_implicit": q_implicit,
        "answer": answer,
        "answer_implicit": r_implicit,
        "reveal": fixture.reveal,
        "aporia": result,
        "valence": valence,
        "emotion": emotion,
        "taxonomy": tax.id(),
        "transcript": transcript.to_ndjson().lines().map(|l| serde_json::from_str::<Value>(l).expect("ndjson lines are json")).collect::<Vec<_>>(),
    });
    emit(json, value, text);
    Ok(())
}

fn timing_report(dir: &Path, json: bool) -> Result<()> {
    let timelines = Timeline::load_dir(dir).with_context(|| format!("loading timelines from {}", dir.display()))?;
    if timelines.is_empty() {
        bail!("no timeline CSV files in {}", dir.display());
    }
    let text = timing::render_report(&timelines)?;
    let summary = timing::summarize(&timelines)?;
    let rows: Vec<Value> = timelines
        .iter()
        .map(|t| {
            let steps: Vec<Value> = timing::intervals(t)
                .into_iter()
                .map(|i| {
                    let pause = timing::classify_pause(i.duration_s).expect("durations are positive");
                    json!({"from": i.from, "to": i.to, "duration_s": i.duration_s, "pause": pause})
                })
                .collect();
            json!({"label": t.label(), "start_s": t.first_time(), "intervals": steps})
        })
        .collect();
    let value = json!({
        "timelines": rows,
        "columns": summary.columns,
        "averages": summary.averages,
        "rounded": summary.rounded(),
    });
    emit(json, value, text);
    Ok(())
}

fn trust_replay(logdir: &Path, policy: &str, candidates: &[String], json: bool) -> Result<()> {
    let cfg = load_trust_config()?;
    let policy = Policy::parse("cli", policy)?;
    let ledger = Ledger::load_dir(logdir, cfg).with_context(|| format!("replaying logs in {}", logdir.display()))?;
    let ids = if candidates.is_empty() { ledger.service_ids() } else { candidates.to_vec() };
    let margin = ledger.config().bored_margin;

    let mut text = String::new();
    let mut rows = Vec::new();
    if !ids.is_empty() {
        let width = ids.iter().map(|s| s.len()).max().unwrap_or(0).max("service".len());
        let _ = writeln!(text, "{:<width$}  {:>6}  {:>8}  {:>8}  policy", "service", "events", "money+", "money-");
        for id in &ids {
            let state = ledger.state_or_empty(id);
            let pass = policy.evaluate(&state, margin);
            let fav = state.mean(Resource::Money, Direction::Favorable);
            let unfav = state.mean(Resource::Money, Direction::Unfavorable);
            let _ = writeln!(
                text,
                "{id:<width$}  {:>6}  {fav:>8.4}  {unfav:>8.4}  {}",
                state.count(),
                if pass { "pass" } else { "fail" }
            );
            rows.push(json!({"service": id, "events": state.count(), "favorable_money": fav, "unfavorable_money": unfav, "compliant": pass}));
        }
    }
    let selected = if ids.is_empty() { None } else { select_service(&ids, &policy, &ledger) };
    match &selected {
        Some(id) => {
            let _ = writeln!(text, "selected {id}");
        }
        None => text.push_str("no compliant services\n"),
    }
    let value = json!({"policy": policy.expr.to_string(), "services": rows, "selected": selected});
    emit(json, value, text);
    Ok(())
}

fn agent_registry(fixtures: &[PathBuf], remotes: &[String], taxonomy: Option<&Path>) -> Result<AgentRegistry> {
    let tax = load_taxonomy(taxonomy)?;
    let mut registry = AgentRegistry::new();
    for dir in fixtures {
        let fixture = Fixture::load(dir).with_context(|| format!("loading fixture {}", dir.display()))?;
        let agent = ScriptedAgent::from_fixture(&fixture, tax.clone())?;
        registry.register(fixture.name.clone(), AgentSpec::Scripted(Arc::new(agent)));
    }
    for r in remotes {
        let (name, endpoint) = r.split_once('=').with_context(|| format!("remote agent `{r}` is not NAME=HOST:PORT"))?;
        registry.register(name, AgentSpec::Remote { endpoint: endpoint.to_string() });
    }
    if registry.names().next().is_none() {
        bail!("no agents: pass --fixture DIR or --remote NAME=HOST:PORT");
    }
    Ok(registry)
}

fn poet_serve(
    addr: &str,
    stdio: bool,
    fixtures: &[PathBuf],
    remotes: &[String],
    export_dir: Option<PathBuf>,
    taxonomy: Option<&Path>,
) -> Result<()> {
    let registry = Arc::new(agent_registry(fixtures, remotes, taxonomy)?);
    if let Some(dir) = &export_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let options = ServeOptions { export_dir };
    if stdio {
        poet::serve_stdio(registry, options)?;
        return Ok(());
    }
    let handle = poet::serve(addr, registry, options)?;
    eprintln!("poet server listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

fn export(session_id: &str, dir: &Path, verify: Option<&Path>, json: bool) -> Result<()> {
    let path = dir.join(format!("{session_id}.ndjson"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut verified = None;
    if let Some(fixture_dir) = verify {
        let fixture = Fixture::load(fixture_dir).with_context(|| format!("loading fixture {}", fixture_dir.display()))?;
        let agent = ScriptedAgent::from_fixture(&fixture, load_taxonomy(None)?)?;
        let session = poet::replay(&text, Arc::new(agent))?;
        if poet::export(&session) != text {
            bail!("replayed session does not re-export identically");
        }
        verified = Some(true);
    }
    let lines: Vec<Value> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    let mut out = text.clone();
    if verified.is_some() {
        out.push_str("replay ok\n");
    }
    emit(json, json!({"session_id": session_id, "lines": lines, "replay_verified": verified}), out);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::RunProtocol { fixture, distance, theory, taxonomy, json } => {
            run_protocol(&fixture, distance.as_deref(), theory.as_deref(), taxonomy.as_deref(), json)
        }
        Command::TimingReport { dir, json } => timing_report(&dir, json),
        Command::TrustReplay { logdir, policy, candidates, json } => trust_replay(&logdir, &policy, &candidates, json),
        Command::PoetServe { addr, stdio, fixtures, remotes, export_dir, taxonomy } => {
            poet_serve(&addr, stdio, &fixtures, &remotes, export_dir, taxonomy.as_deref())
        }
        Command::Export { session_id, dir, verify_fixture, json } => {
            export(&session_id, &dir, verify_fixture.as_deref(), json)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
