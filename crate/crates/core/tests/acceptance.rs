//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use hive_nav::comms::{
    plan_commands, AgentState, MapDelta, MemberReport, MessageKind, Payload, Router, RoutingMatrix,
    StatusReport,
};
use hive_nav::geometry::{Position, Rect};
use hive_nav::hierarchy::{bootstrap, run_actor, HierarchyConfig, SystemState, TraceRecord};
use hive_nav::ids::{AgentId, BodyId, Tier};
use hive_nav::map::{DynamicMap, MapImage, ReportCell, ReportEntry};
use hive_nav::memory::{retrieve_topk, similarity, tokenize, MemoryStore};
use hive_nav::mlm::http::{HttpClient, HttpConfig};
use hive_nav::mlm::scripted::{ScriptedBackend, ScriptedConfig};
use hive_nav::mlm::stub::{StubMode, StubServer};
use hive_nav::mlm::{
    BackendBundle, Critique, MultimodalInfo, Plan, PlanSource, SubGoal, SubGoalKind,
    VisualDescriptor,
};
use hive_nav::tasks::{
    default_seeds, run_task, spawn_positions, summary_from_trace, Ablation, RunOutput, SpawnMode,
    TaskFamily, TaskSpec,
};
use hive_nav::world::{generate_world, observe, WorldConfig};

type Outcome = Result<String, String>;

fn scripted() -> BackendBundle {
    BackendBundle::scripted(ScriptedConfig::default())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {:.2}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
    })
}

// ---------------------------------------------------------------------------
// Criterion 1

/// The permitted (from, to, kind) triples, written out independently.
fn oracle_allows(from: Tier, to: Tier, kind: MessageKind) -> bool {
    use MessageKind as K;
    use Tier::*;
    matches!(
        (from, to, kind),
        (Manager, Conductor, K::SubtaskDirective)
            | (Manager, Conductor, K::Critique)
            | (Conductor, Manager, K::StatusReport)
            | (Conductor, Manager, K::MapDelta)
            | (Conductor, SubAgent, K::SubCommand)
            | (SubAgent, Conductor, K::MemberReport)
    )
}

fn sample_payloads() -> Vec<Payload> {
    let cfg = WorldConfig {
        seed: 1,
        width: 32,
        height: 32,
        ..WorldConfig::default()
    };
    let mut world = generate_world(&cfg).expect("world");
    world.spawn(BodyId(1), Position::new(5, 5)).expect("spawn");
    let obs = observe(&world, BodyId(1)).expect("observe");
    let bundle = scripted();
    let bounds = world.bounds();
    let info = MultimodalInfo {
        map: MapImage::blank(bounds),
        status_text: String::new(),
        found: Vec::new(),
        goal: None,
    };
    let subgoal = SubGoal {
        id: 0,
        kind: SubGoalKind::Explore {
            region: Rect::new(0, 0, 16, 16),
        },
        quantity: 1,
        suggested_strategy: "sweep".into(),
    };
    let directive = bundle.deploy_subtask(&info, &subgoal, "sweep").expect("directive");
    let command = bundle
        .deploy_subcommand(&directive, Position::new(8, 8))
        .expect("command");
    let payloads = vec![
        Payload::SubtaskDirective(directive),
        Payload::StatusReport(StatusReport {
            subgoal_id: 0,
            text: "ok".into(),
            found: Vec::new(),
            heard: Vec::new(),
            self_check: Critique::accept("fine"),
        }),
        Payload::SubCommand(command),
        Payload::MemberReport(MemberReport {
            observation: obs.clone(),
        }),
        Payload::Critique(Critique::accept("fine")),
        Payload::MapDelta(MapDelta {
            states: vec![AgentState {
                agent: AgentId::sub_agent(BodyId(1)),
                observation: obs,
                text: String::new(),
            }],
        }),
    ];
    assert_eq!(
        payloads.iter().map(Payload::kind).collect::<Vec<_>>(),
        MessageKind::ALL.to_vec()
    );
    payloads
}

fn exhaustive_routing() -> Result<usize, String> {
    let c0 = AgentId::conductor(BodyId(0));
    let c2 = AgentId::conductor(BodyId(2));
    let s1 = AgentId::sub_agent(BodyId(1));
    let s3 = AgentId::sub_agent(BodyId(3));
    let s4 = AgentId::sub_agent(BodyId(4));
    let fresh = || {
        let mut r = Router::new();
        r.form_group(c0, &[s1, s4]);
        r.form_group(c2, &[s3]);
        r
    };
    // Pairs whose group relation is legitimate, so only the tier matrix decides.
    let pick = |from: Tier, to: Tier| -> (AgentId, AgentId) {
        match (from, to) {
            (Tier::Manager, Tier::Manager) => (AgentId::MANAGER, AgentId::MANAGER),
            (Tier::Manager, Tier::Conductor) => (AgentId::MANAGER, c0),
            (Tier::Manager, Tier::SubAgent) => (AgentId::MANAGER, s1),
            (Tier::Conductor, Tier::Manager) => (c0, AgentId::MANAGER),
            (Tier::Conductor, Tier::Conductor) => (c0, c2),
            (Tier::Conductor, Tier::SubAgent) => (c0, s1),
            (Tier::SubAgent, Tier::Manager) => (s1, AgentId::MANAGER),
            (Tier::SubAgent, Tier::Conductor) => (s1, c0),
            (Tier::SubAgent, Tier::SubAgent) => (s1, s4),
        }
    };
    let payloads = sample_payloads();
    let mut checked = 0;
    for from in Tier::ALL {
        for to in Tier::ALL {
            for payload in &payloads {
                let kind = payload.kind();
                let expected = oracle_allows(from, to, kind);
                ensure(RoutingMatrix::allows(from, to, kind) == expected, || {
                    format!("matrix disagrees on {from:?}->{to:?} {kind}")
                })?;
                let (a, b) = pick(from, to);
                let mut router = fresh();
                let sent = router.send(a, b, 0, payload.clone()).is_ok();
                ensure(sent == expected, || {
                    format!("router {} {a}->{b} {kind}", if sent { "accepted" } else { "refused" })
                })?;
                ensure(router.deliveries().len() == usize::from(expected), || {
                    format!("delivery log wrong after {a}->{b} {kind}")
                })?;
                checked += 1;
            }
        }
    }
    // Cross-group traffic is refused even on an allowed tier pair.
    let mut router = fresh();
    ensure(
        router.send(c0, s3, 0, payloads[2].clone()).is_err()
            && router.send(s3, c0, 0, payloads[3].clone()).is_err(),
        || "cross-group command or report was delivered".into(),
    )?;
    ensure(MessageKind::ALL.len() * 9 == checked, || "combination count".into())?;
    ensure(
        RoutingMatrix::ALLOWED
            .iter()
            .all(|&(f, t, k)| oracle_allows(f, t, k)),
        || "ALLOWED lists a forbidden triple".into(),
    )?;
    Ok(checked)
}

fn live_groups(state: &SystemState) -> BTreeMap<AgentId, BTreeSet<AgentId>> {
    state
        .groups()
        .iter()
        .map(|g| (g.conductor, g.members.iter().copied().collect()))
        .collect()
}

fn audit_envelope(
    env: &hive_nav::comms::Envelope,
    groups: &BTreeMap<AgentId, BTreeSet<AgentId>>,
) -> Result<(), String> {
    let (from, to, kind) = (env.from, env.to, env.kind());
    ensure(oracle_allows(from.tier, to.tier, kind), || {
        format!("round {}: forbidden {from}->{to} {kind}", env.round)
    })?;
    let ok = match (from.tier, to.tier) {
        (Tier::Conductor, Tier::SubAgent) => groups.get(&from).is_some_and(|m| m.contains(&to)),
        (Tier::SubAgent, Tier::Conductor) => groups.get(&to).is_some_and(|m| m.contains(&from)),
        (Tier::Manager, Tier::Conductor) => groups.contains_key(&to),
        (Tier::Conductor, Tier::Manager) => groups.contains_key(&from),
        _ => false,
    };
    ensure(ok, || {
        format!("round {}: {from}->{to} {kind} outside group structure", env.round)
    })
}

fn criterion_routing() -> Outcome {
    let t0 = Instant::now();
    let combos = exhaustive_routing()?;

    let spec = TaskSpec::map_exploration();
    let seed = 11;
    let mut world = generate_world(&WorldConfig {
        seed,
        ..spec.world.clone()
    })
    .map_err(|e| e.to_string())?;
    for (i, p) in spawn_positions(world.bounds(), 8, SpawnMode::Spread, seed)
        .into_iter()
        .enumerate()
    {
        world.spawn(BodyId(i as u32), p).map_err(|e| e.to_string())?;
    }
    let config = HierarchyConfig {
        log_messages: true,
        ..HierarchyConfig::default()
    };
    let mut state = bootstrap(world, None, scripted(), MemoryStore::new(), config)
        .map_err(|e| e.to_string())?;
    let mut groups = live_groups(&state);
    let mut envelopes = 0;
    for env in state.take_envelopes() {
        audit_envelope(&env, &groups)?;
        envelopes += 1;
    }
    for _ in 0..100 {
        let record = state.tick().map_err(|e| e.to_string())?;
        groups = record
            .groups
            .iter()
            .map(|g| (g.conductor, g.members.iter().copied().collect()))
            .collect();
        for env in state.take_envelopes() {
            ensure(env.round == record.round, || {
                format!("envelope from round {} logged in {}", env.round, record.round)
            })?;
            audit_envelope(&env, &groups)?;
            envelopes += 1;
        }
    }
    ensure(state.round() == 100, || format!("stopped at round {}", state.round()))?;
    let deliveries = state.router.deliveries();
    ensure(
        deliveries
            .iter()
            .all(|d| oracle_allows(d.from.tier, d.to.tier, d.kind)),
        || "delivery log holds a forbidden triple".into(),
    )?;
    ensure(deliveries.len() == envelopes, || {
        format!("{} deliveries vs {envelopes} logged envelopes", deliveries.len())
    })?;
    within(t0.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "{combos} combinations match, {envelopes} envelopes over 100 ticks, 0 forbidden ({:.2}s)",
        t0.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 2

const MAP_SIDE: i32 = 12;
const TOKENS: [&str; 4] = ["tree", "water", "diamond_block", "village"];

fn report_strategy() -> impl Strategy<Value = ReportEntry> {
    let cell = (
        0..MAP_SIDE,
        0..MAP_SIDE,
        proptest::sample::subsequence(TOKENS.to_vec(), 0..=2),
    )
        .prop_map(|(x, y, ann)| ReportCell {
            pos: Position::new(x, y),
            annotations: ann.into_iter().map(String::from).collect(),
        });
    (0u32..8, any::<bool>(), 0u64..6, proptest::collection::vec(cell, 1..24)).prop_map(
        |(i, conductor, step, cells)| ReportEntry {
            agent: if conductor {
                AgentId::conductor(BodyId(i))
            } else {
                AgentId::sub_agent(BodyId(i))
            },
            step,
            cells,
        },
    )
}

fn fail(msg: impl Into<String>) -> TestCaseError {
    TestCaseError::fail(msg.into())
}

fn map_case(base: &[ReportEntry], a: &ReportEntry, b: &ReportEntry) -> Result<(), TestCaseError> {
    let side = MAP_SIDE as u32;
    let mut map = DynamicMap::new(side, side);
    for r in base {
        let before: Vec<(Position, (u64, AgentId))> = map
            .explored_cells()
            .map(|(p, c)| (p, (c.last_step, c.last_agent)))
            .collect();
        let (v0, n0) = (map.version(), map.explored_area());
        map.merge_report(r).map_err(|e| fail(e.to_string()))?;
        if map.version() < v0 || map.explored_area() < n0 {
            return Err(fail("version or area decreased"));
        }
        for (p, key) in before {
            let rec = map.get(p).ok_or_else(|| fail(format!("{p:?} forgotten")))?;
            if (rec.last_step, rec.last_agent) < key {
                return Err(fail(format!("{p:?} overwritten by an older report")));
            }
        }
        for c in &r.cells {
            if !map.is_explored(c.pos) {
                return Err(fail(format!("{:?} not merged", c.pos)));
            }
        }
    }

    let snap = map.to_snapshot();
    let version = map.version();
    let mut again = map.clone();
    if let Some(last) = base.last() {
        again.merge_report(last).map_err(|e| fail(e.to_string()))?;
        if again.version() != version || again.to_snapshot() != snap {
            return Err(fail("re-merging a report changed the map"));
        }
    }

    let taken: BTreeSet<Position> = a.cells.iter().map(|c| c.pos).collect();
    let b = ReportEntry {
        cells: b.cells.iter().filter(|c| !taken.contains(&c.pos)).cloned().collect(),
        ..b.clone()
    };
    if !b.cells.is_empty() {
        let mut ab = map.clone();
        ab.merge_report(a).map_err(|e| fail(e.to_string()))?;
        ab.merge_report(&b).map_err(|e| fail(e.to_string()))?;
        let mut ba = map.clone();
        ba.merge_report(&b).map_err(|e| fail(e.to_string()))?;
        ba.merge_report(a).map_err(|e| fail(e.to_string()))?;
        if ab.to_snapshot().cells != ba.to_snapshot().cells {
            return Err(fail("disjoint merges depend on order"));
        }
    }

    let image = map.render_for_manager(&map.bounds());
    let text = image.to_text();
    let parsed = MapImage::parse(&text).map_err(|e| fail(e.to_string()))?;
    if parsed.to_text() != text || parsed != image {
        return Err(fail("render/parse round trip is not exact"));
    }
    Ok(())
}

fn criterion_map_algebra() -> Outcome {
    let t0 = Instant::now();
    let cases = 1000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        proptest::collection::vec(report_strategy(), 1..6),
        report_strategy(),
        report_strategy(),
    );
    runner
        .run(&strategy, |(base, a, b)| map_case(&base, &a, &b))
        .map_err(|e| e.to_string())?;
    within(t0.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "{cases} random cases: monotone, idempotent, order-free, exact round trip ({:.2}s)",
        t0.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 3

const WORDS: [&str; 8] = [
    "find", "village", "red", "roof", "diamond_block", "tree", "north", "Water",
];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn cosine(a: &[String], b: &[String]) -> f64 {
    fn count(v: &[String]) -> BTreeMap<&str, u64> {
        let mut m = BTreeMap::new();
        for w in v {
            *m.entry(w.as_str()).or_default() += 1;
        }
        m
    }
    let (ca, cb) = (count(a), count(b));
    let dot: u64 = ca.iter().map(|(w, n)| n * cb.get(w).copied().unwrap_or(0)).sum();
    if dot == 0 {
        return 0.0;
    }
    let na: u64 = ca.values().map(|n| n * n).sum();
    let nb: u64 = cb.values().map(|n| n * n).sum();
    dot as f64 / ((na * nb) as f64).sqrt()
}

fn one_step_plan() -> Plan {
    Plan {
        subgoals: vec![SubGoal {
            id: 0,
            kind: SubGoalKind::Explore {
                region: Rect::new(0, 0, 8, 8),
            },
            quantity: 1,
            suggested_strategy: "sweep".into(),
        }],
        rationale: String::new(),
        source: PlanSource::Fresh,
    }
}

type Phrase = Vec<&'static str>;

fn phrase(max: usize) -> impl Strategy<Value = Phrase> {
    proptest::collection::vec(proptest::sample::select(WORDS.to_vec()), 0..=max)
}

fn retrieval_case(
    entries: &[(Phrase, Phrase)],
    query: &Phrase,
    visual: &Option<Phrase>,
    k: usize,
    describer: &ScriptedBackend,
) -> Result<(), TestCaseError> {
    let mut store = MemoryStore::new();
    for (i, (task, obs)) in entries.iter().enumerate() {
        store
            .store_success(
                &task.join(" "),
                obs.iter().map(|s| s.to_string()).collect(),
                one_step_plan(),
                i as u64,
            )
            .map_err(|e| fail(e.to_string()))?;
    }
    let query_text = query.join(" ");
    let descriptor = visual.as_ref().map(|v| VisualDescriptor::image(v.iter().copied()));
    let got = retrieve_topk(&store, &tokenize(&query_text), descriptor.as_ref(), k, describer)
        .map_err(|e| fail(e.to_string()))?;

    let mut q = words(&query_text);
    if let Some(v) = visual {
        let mut sorted: Vec<&str> = v.clone();
        sorted.sort_unstable();
        q.push("image".into());
        q.extend(sorted.iter().flat_map(|w| words(w)));
    }
    let mut expected: Vec<(f64, u64)> = entries
        .iter()
        .enumerate()
        .map(|(i, (task, obs))| {
            let mut key = words(&task.join(" "));
            key.extend(obs.iter().flat_map(|w| words(w)));
            (cosine(&q, &key), i as u64)
        })
        .collect();
    expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    expected.truncate(k);

    if got.len() != expected.len() {
        return Err(fail(format!("{} results, expected {}", got.len(), expected.len())));
    }
    for (r, (score, id)) in got.iter().zip(&expected) {
        if r.entry.id != *id || r.score.entry_id != *id || (r.score.score - score).abs() > 1e-12 {
            return Err(fail(format!(
                "got #{} {:.6}, expected #{id} {score:.6}",
                r.entry.id, r.score.score
            )));
        }
        let key = r.entry.key_tokens();
        if (similarity(&q, &key) - score).abs() > 1e-12 {
            return Err(fail("similarity differs from the integer cosine"));
        }
    }
    Ok(())
}

fn criterion_retrieval() -> Outcome {
    let t0 = Instant::now();
    let cases = 600;
    let describer = ScriptedBackend::new(ScriptedConfig::default());
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        proptest::collection::vec((phrase(5), phrase(3)), 0..=100),
        phrase(5),
        proptest::option::of(phrase(3)),
        0usize..12,
    );
    runner
        .run(&strategy, |(entries, query, visual, k)| {
            retrieval_case(&entries, &query, &visual, k, &describer)
        })
        .map_err(|e| e.to_string())?;
    within(t0.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "{cases} random (store, query, k) cases equal the brute-force sort ({:.2}s)",
        t0.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 4

fn seeded_state(spec: &TaskSpec, seed: u64, config: HierarchyConfig) -> Result<SystemState, String> {
    let mut world = generate_world(&WorldConfig {
        seed,
        ..spec.world.clone()
    })
    .map_err(|e| e.to_string())?;
    for (i, p) in spawn_positions(world.bounds(), spec.n_agents, spec.spawn, seed)
        .into_iter()
        .enumerate()
    {
        world.spawn(BodyId(i as u32), p).map_err(|e| e.to_string())?;
    }
    bootstrap(world, spec.goal.clone(), scripted(), MemoryStore::new(), config)
        .map_err(|e| e.to_string())
}

fn criterion_composition() -> Outcome {
    let oracle = scripted();
    let config = HierarchyConfig {
        audit: true,
        ..HierarchyConfig::default()
    };
    let mut conductor_checks = 0;
    let mut plan_checks = 0;
    let runs: Vec<(TaskSpec, u64, u64)> = (0..5)
        .map(|s| (TaskSpec::default_goal_search(), s, 30))
        .chain((5..10).map(|s| (TaskSpec::map_exploration(), s, 10)))
        .collect();
    for (spec, seed, ticks) in &runs {
        let mut state = seeded_state(spec, *seed, config.clone())?;
        for _ in 0..*ticks {
            if state.is_done() {
                break;
            }
            let record = state.tick().map_err(|e| e.to_string())?;
            let audit = state.last_audit().ok_or("no audit kept")?.clone();
            let params = state.targeting_params();
            for plan in &audit.plans {
                let again = oracle.plan_subgoals(&plan.request).map_err(|e| e.to_string())?;
                ensure(again == plan.plan, || {
                    format!("seed {seed} round {}: plan differs", record.round)
                })?;
                plan_checks += 1;
            }
            for a in &audit.conductors {
                let ctx = || format!("seed {seed} round {} {}", record.round, a.conductor);
                let directive = oracle
                    .deploy_subtask(&a.info, &a.subgoal, &a.strategy)
                    .map_err(|e| e.to_string())?;
                let mut commands = plan_commands(&directive, &a.executors, &oracle, &params)
                    .map_err(|e| e.to_string())?;
                let skills = oracle
                    .resolve_skills(&state.skills, &tokenize(&directive.goal_hint), config.skill_top_k)
                    .map_err(|e| e.to_string())?;
                ensure(skills == a.skills, || format!("{}: skills differ", ctx()))?;
                let (action, _) = run_actor(
                    &oracle,
                    &mut commands[0],
                    &a.observation,
                    &skills,
                    config.max_act_steps,
                )
                .map_err(|e| e.to_string())?;
                ensure(action == a.action, || {
                    format!("{}: recomputed {action}, recorded {}", ctx(), a.action)
                })?;
                let logged = record
                    .actions
                    .iter()
                    .find(|r| r.agent == a.conductor)
                    .map(|r| r.action.clone());
                ensure(logged.as_deref() == Some(action.to_string().as_str()), || {
                    format!("{}: tick logged {logged:?}", ctx())
                })?;
                conductor_checks += 1;
            }
        }
    }
    ensure(conductor_checks > 0 && plan_checks > 0, || "nothing was audited".into())?;
    Ok(format!(
        "10 seeded runs: {conductor_checks} conductor actions and {plan_checks} plans recomputed exactly"
    ))
}

// ---------------------------------------------------------------------------
// Criteria 5 to 10 share one corpus of runs.

struct Labeled {
    label: String,
    output: RunOutput,
}

fn spec_for(family: TaskFamily, agents: usize, ablation: &[Ablation], seeds: usize) -> TaskSpec {
    let mut spec = TaskSpec::for_family(family);
    spec.n_agents = agents;
    spec.seeds = default_seeds(seeds);
    spec.ablation = ablation.iter().copied().collect();
    spec
}

fn label(spec: &TaskSpec) -> String {
    let abl: Vec<&str> = spec.ablation.iter().map(|a| a.name()).collect();
    format!(
        "{}/{}ag/{}",
        spec.family.name(),
        spec.n_agents,
        if abl.is_empty() { "full".into() } else { abl.join("+") }
    )
}

fn run(spec: &TaskSpec) -> Result<Labeled, String> {
    let output = run_task(spec, &scripted()).map_err(|e| e.to_string())?;
    Ok(Labeled {
        label: label(spec),
        output,
    })
}

fn find<'a>(corpus: &'a [Labeled], label: &str) -> &'a RunOutput {
    &corpus
        .iter()
        .find(|l| l.label == label)
        .unwrap_or_else(|| panic!("missing run {label}"))
        .output
}

fn criterion_budget(corpus: &[Labeled]) -> Outcome {
    let mut rounds = 0;
    for run in corpus {
        let mut cap = 0;
        for line in &run.output.trace {
            let record: TraceRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            match record {
                TraceRecord::Run(h) => cap = h.agents.min(8),
                TraceRecord::Tick(t) => {
                    let mut bodies = BTreeSet::new();
                    let mut subs = BTreeSet::new();
                    for g in &t.body.groups {
                        for agent in std::iter::once(&g.conductor).chain(&g.members) {
                            let body = agent.body().ok_or("manager inside a group")?;
                            ensure(bodies.insert(body), || {
                                format!("{} round {}: {body} in two groups", run.label, t.body.round)
                            })?;
                        }
                        for m in &g.members {
                            ensure(m.tier == Tier::SubAgent && subs.insert(*m), || {
                                format!("{} round {}: bad member {m}", run.label, t.body.round)
                            })?;
                        }
                    }
                    ensure(bodies.len() <= cap, || {
                        format!("{} round {}: {} live agents", run.label, t.body.round, bodies.len())
                    })?;
                    rounds += 1;
                }
                _ => {}
            }
        }
    }
    Ok(format!(
        "{rounds} rounds across {} runs: live agents <= 8, no shared members",
        corpus.len()
    ))
}

fn criterion_determinism(corpus: &[Labeled], specs: &[TaskSpec]) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (spec, first) in specs.iter().zip(corpus) {
        let second = run(spec)?;
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        first.output.write(&a).map_err(|e| e.to_string())?;
        second.output.write(&b).map_err(|e| e.to_string())?;
        let read = |p: std::path::PathBuf| std::fs::read(p).map_err(|e| e.to_string());
        ensure(read(a.join("trace.jsonl"))? == read(b.join("trace.jsonl"))?, || {
            format!("{}: traces differ between executions", first.label)
        })?;
    }
    Ok(format!("{} configurations re-run with byte-identical trace.jsonl", specs.len()))
}

fn paired_means(a: &RunOutput, b: &RunOutput, f: impl Fn(&hive_nav::tasks::TrialMetrics) -> f64) -> (f64, f64) {
    let pa = &a.summary.per_trial;
    let pb = &b.summary.per_trial;
    assert!(pa.iter().zip(pb).all(|(x, y)| x.seed == y.seed), "unpaired seeds");
    let n = pa.len().min(pb.len()) as f64;
    (pa.iter().map(&f).sum::<f64>() / n, pb.iter().map(&f).sum::<f64>() / n)
}

fn criterion_block_search(corpus: &[Labeled], elapsed: Duration) -> Outcome {
    let eight = find(corpus, "block-search/8ag/full");
    let one = find(corpus, "block-search/1ag/full");
    let hits = eight.summary.per_trial.iter().filter(|t| t.success).count();
    ensure(hits >= 27, || format!("only {hits}/30 seeds reached 10 diamonds"))?;
    let iters = |t: &hive_nav::tasks::TrialMetrics| {
        t.iters_to_success.unwrap_or(t.iters.max(100)) as f64
    };
    let (m8, m1) = paired_means(eight, one, iters);
    ensure(m8 < m1, || format!("8 agents {m8:.2} iters vs 1 agent {m1:.2}"))?;
    within(elapsed, Duration::from_secs(120))?;
    Ok(format!(
        "{hits}/30 seeds found 10 diamonds; mean iters-to-10 {m8:.2} (8 agents) < {m1:.2} (1 agent)"
    ))
}

fn criterion_exploration(corpus: &[Labeled], elapsed: Duration) -> Outcome {
    let eight = find(corpus, "map-exploration/8ag/full");
    let one = find(corpus, "map-exploration/1ag/full");
    let window = eight.summary.area_window;
    let (a8, a1) = paired_means(eight, one, |t| t.area_after(window) as f64);
    ensure(a8 >= 3.0 * a1, || format!("8 agents {a8:.1} cells vs 1 agent {a1:.1}"))?;
    within(elapsed, Duration::from_secs(120))?;
    Ok(format!(
        "{window}-iteration area {a8:.1} (8 agents) vs {a1:.1} (1 agent), ratio {:.2}",
        a8 / a1
    ))
}

fn criterion_ablation(corpus: &[Labeled]) -> Outcome {
    let full = &find(corpus, "map-exploration/8ag/full").summary;
    let no_ao = &find(corpus, "map-exploration/8ag/no_auto_organize").summary;
    let no_dm = &find(corpus, "map-exploration/8ag/no_dynamic_map").summary;
    let floor = full.mean_initial_area;
    ensure(full.mean_area >= no_ao.mean_area, || {
        format!("full {:.1} < no_ao {:.1}", full.mean_area, no_ao.mean_area)
    })?;
    ensure(no_ao.mean_area >= floor, || {
        format!("no_ao {:.1} below floor {floor:.1}", no_ao.mean_area)
    })?;
    ensure(full.mean_area >= no_dm.mean_area, || {
        format!("full {:.1} < no_dm {:.1}", full.mean_area, no_dm.mean_area)
    })?;
    Ok(format!(
        "mean area full {:.1} >= no_ao {:.1} >= floor {floor:.1}; full >= no_dm {:.1}",
        full.mean_area, no_ao.mean_area, no_dm.mean_area
    ))
}

fn criterion_replay(corpus: &[Labeled], extra: &[RunOutput]) -> Outcome {
    let mut n = 0;
    for out in corpus.iter().map(|l| &l.output).chain(extra) {
        let replayed = summary_from_trace(&out.trace_text()).map_err(|e| e.to_string())?;
        ensure(replayed == out.summary, || {
            format!("{} {}: replay differs from live summary", out.summary.task, out.summary.agents)
        })?;
        n += 1;
    }
    Ok(format!("{n} runs: summaries replayed from traces equal the live ones"))
}

// ---------------------------------------------------------------------------
// Criterion 11

fn http_bundle(stub: &StubServer) -> BackendBundle {
    BackendBundle::http(HttpClient::new(HttpConfig::new(stub.endpoint())))
}

fn http_spec() -> TaskSpec {
    let mut spec = TaskSpec::default_goal_search();
    spec.n_agents = 4;
    spec.seeds = vec![3];
    spec
}

fn criterion_http(extra: &mut Vec<RunOutput>) -> Outcome {
    let spec = http_spec();
    let local = run_task(&spec, &scripted()).map_err(|e| e.to_string())?;

    let stub = StubServer::start(0, StubMode::Faithful).map_err(|e| e.to_string())?;
    let remote = run_task(&spec, &http_bundle(&stub)).map_err(|e| e.to_string())?;
    let trial = remote.summary.per_trial[0].clone();
    ensure(trial.completed, || format!("trial failed: {:?}", trial.error))?;
    // Skill lookup runs locally; every other call is one request.
    ensure(stub.served() > 0 && stub.served() <= trial.backend_calls, || {
        format!("{} requests for {} calls", stub.served(), trial.backend_calls)
    })?;
    let mut same = remote.summary.clone();
    same.backend = local.summary.backend.clone();
    ensure(same == local.summary, || "http run diverged from the scripted run".into())?;
    let served = stub.served();
    drop(stub);

    let stub = StubServer::start(0, StubMode::MalformedFirst(1)).map_err(|e| e.to_string())?;
    let retried = run_task(&spec, &http_bundle(&stub)).map_err(|e| e.to_string())?;
    let t = &retried.summary.per_trial[0];
    ensure(t.completed && stub.served() == served + 1, || {
        format!("one malformed reply: completed {} after {} requests", t.completed, stub.served())
    })?;
    drop(stub);

    let stub = StubServer::start(0, StubMode::AlwaysMalformed).map_err(|e| e.to_string())?;
    let broken = run_task(&spec, &http_bundle(&stub)).map_err(|e| e.to_string())?;
    let t = &broken.summary.per_trial[0];
    let err = t.error.clone().unwrap_or_default();
    ensure(!t.completed && err.contains("malformed"), || {
        format!("always-malformed trial ended with {:?}", t.error)
    })?;
    ensure(stub.served() == 2, || format!("{} requests before giving up", stub.served()))?;

    extra.extend([remote, retried, broken]);
    Ok(format!(
        "goal search over HTTP completed in {} iters with {served} requests; one retry recovers; \
         second malformed reply fails the trial",
        trial.iters
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} [{tag}] {name}: {detail}");
    };

    report(1, "routing conformance", criterion_routing());
    report(2, "dynamic-map algebra", criterion_map_algebra());
    report(3, "retrieval oracle", criterion_retrieval());
    report(4, "hierarchy composition", criterion_composition());

    let t_block = Instant::now();
    let block_specs = vec![
        spec_for(TaskFamily::BlockSearch, 8, &[], 30),
        spec_for(TaskFamily::BlockSearch, 1, &[], 30),
    ];
    let mut specs = block_specs.clone();
    let mut corpus: Vec<Labeled> = Vec::new();
    let mut corpus_error = None;
    for spec in &block_specs {
        match run(spec) {
            Ok(l) => corpus.push(l),
            Err(e) => corpus_error = Some(e),
        }
    }
    let block_time = t_block.elapsed();
    let t_explore = Instant::now();
    let explore_specs = vec![
        spec_for(TaskFamily::MapExploration, 8, &[], 30),
        spec_for(TaskFamily::MapExploration, 1, &[], 30),
    ];
    for spec in &explore_specs {
        match run(spec) {
            Ok(l) => corpus.push(l),
            Err(e) => corpus_error = Some(e),
        }
    }
    let explore_time = t_explore.elapsed();
    specs.extend(explore_specs);
    let more = vec![
        spec_for(TaskFamily::MapExploration, 8, &[Ablation::NoAutoOrganize], 30),
        spec_for(TaskFamily::MapExploration, 8, &[Ablation::NoDynamicMap], 30),
        spec_for(TaskFamily::GoalSearch, 8, &[], 10),
        spec_for(TaskFamily::GoalSearch, 8, &[Ablation::NoDynamicMap], 10),
        spec_for(TaskFamily::BlockSearch, 8, &[Ablation::NoAutoOrganize], 10),
    ];
    for spec in &more {
        match run(spec) {
            Ok(l) => corpus.push(l),
            Err(e) => corpus_error = Some(e),
        }
    }
    specs.extend(more);

    if let Some(e) = corpus_error {
        for (n, name) in [
            (5, "budget and membership"),
            (6, "determinism"),
            (7, "diamond-grid search"),
            (8, "exploration trend"),
            (9, "ablation direction"),
        ] {
            report(n, name, Err(format!("a run could not start: {e}")));
        }
    } else {
        report(5, "budget and membership", criterion_budget(&corpus));
        report(6, "determinism", criterion_determinism(&corpus, &specs));
        report(7, "diamond-grid search", criterion_block_search(&corpus, block_time));
        report(8, "exploration trend", criterion_exploration(&corpus, explore_time));
        report(9, "ablation direction", criterion_ablation(&corpus));
    }
    let mut http_runs = Vec::new();
    let http = criterion_http(&mut http_runs);
    report(10, "metric replay", criterion_replay(&corpus, &http_runs));
    report(11, "http backend contract", http);

    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
