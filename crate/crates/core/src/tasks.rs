//! Experiment harness: goal search, block search and map exploration.
//!
//! A run is a list of independent trials. Each trial generates its world
//! from its own seed, spawns the agents, bootstraps the hierarchy and ticks
//! it until the goal is met or the iteration cap is hit. Every run yields a
//! summary, a Markdown table and a JSONL trace from which the summary can be
//! rebuilt.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Position, Rect};
use crate::goal::{Goal, GoalTarget};
use crate::hierarchy::{
    bootstrap, HierarchyConfig, HierarchyError, RunHeader, TickRecord, TraceRecord, TrialEnd,
    TrialStart,
};
use crate::ids::BodyId;
use crate::memory::MemoryStore;
use crate::mlm::{BackendBundle, MAX_AGENTS};
use crate::rng::{mix_seed, SplitMix64};
use crate::world::{
    generate_world, EntityKind, GoalPlacement, Layout, WorldConfig, WorldError, WorldState,
    DIAMOND_TOKEN,
};

pub const DEFAULT_MAX_ITERS: u64 = 100;
pub const DEFAULT_TRIALS: usize = 30;
pub const DEFAULT_AREA_TARGET: usize = 100;
pub const DEFAULT_BLOCK_TARGET: usize = 10;
pub const DEFAULT_AREA_WINDOW: u64 = 5;

const SPAWN_STREAM: u64 = 0x5350_4157_4e00_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    GoalSearch,
    BlockSearch,
    MapExploration,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 3] = [
        TaskFamily::GoalSearch,
        TaskFamily::BlockSearch,
        TaskFamily::MapExploration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::GoalSearch => "goal-search",
            TaskFamily::BlockSearch => "block-search",
            TaskFamily::MapExploration => "map-exploration",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoDynamicMap,
    NoAutoOrganize,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoDynamicMap => "no_dynamic_map",
            Ablation::NoAutoOrganize => "no_auto_organize",
        }
    }

    /// Parse a comma-separated list of `dm` / `ao` (or the long names).
    pub fn parse_list(text: &str) -> Result<BTreeSet<Ablation>, String> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match s {
                "dm" | "no_dynamic_map" => Ok(Ablation::NoDynamicMap),
                "ao" | "no_auto_organize" => Ok(Ablation::NoAutoOrganize),
                other => Err(format!("unknown ablation {other:?} (expected dm or ao)")),
            })
            .collect()
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpawnMode {
    /// All agents on adjacent cells around one random point.
    #[default]
    Clustered,
    /// Each agent on its own uniformly random cell.
    Spread,
}

impl fmt::Display for SpawnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpawnMode::Clustered => "clustered",
            SpawnMode::Spread => "spread",
        })
    }
}

impl FromStr for SpawnMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "clustered" => Ok(SpawnMode::Clustered),
            "spread" => Ok(SpawnMode::Spread),
            _ => Err(format!("unknown spawn mode {s:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("trace line {line}: {detail}")]
    Trace { line: usize, detail: String },
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub family: TaskFamily,
    /// Target for goal search; derived from the world for block search.
    pub goal: Option<Goal>,
    /// World template; each trial overrides the seed.
    pub world: WorldConfig,
    pub n_agents: usize,
    pub max_iters: u64,
    pub seeds: Vec<u64>,
    pub trials_per_seed: usize,
    pub ablation: BTreeSet<Ablation>,
    pub spawn: SpawnMode,
    pub area_target: usize,
    pub block_target: usize,
    pub area_window: u64,
    pub hierarchy: HierarchyConfig,
    /// Demonstrations every trial starts from.
    pub memory: MemoryStore,
}

/// Seeds `0..n`.
pub fn default_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

impl TaskSpec {
    fn base(family: TaskFamily, world: WorldConfig, goal: Option<Goal>) -> Self {
        Self {
            family,
            goal,
            world,
            n_agents: MAX_AGENTS,
            max_iters: DEFAULT_MAX_ITERS,
            seeds: default_seeds(DEFAULT_TRIALS),
            trials_per_seed: 1,
            ablation: BTreeSet::new(),
            spawn: SpawnMode::Clustered,
            area_target: DEFAULT_AREA_TARGET,
            block_target: DEFAULT_BLOCK_TARGET,
            area_window: DEFAULT_AREA_WINDOW,
            hierarchy: HierarchyConfig::default(),
            memory: MemoryStore::new(),
        }
    }

    /// Search for `goal` in `world`, which must place a matching entity for
    /// the goal to be reachable.
    pub fn goal_search(goal: Goal, world: WorldConfig) -> Self {
        Self::base(TaskFamily::GoalSearch, world, Some(goal))
    }

    /// The default goal search: one village somewhere on a 128×128 map.
    pub fn default_goal_search() -> Self {
        let world = WorldConfig {
            goal_spec: vec![GoalPlacement {
                entity: EntityKind::Object {
                    name: "village".into(),
                },
                position: None,
                copies: 1,
            }],
            ..WorldConfig::default()
        };
        Self::goal_search(Goal::object("village", 1), world)
    }

    pub fn block_search() -> Self {
        let world = WorldConfig {
            layout: Layout::DiamondGrid16,
            ..WorldConfig::default()
        };
        Self::base(TaskFamily::BlockSearch, world, None)
    }

    pub fn map_exploration() -> Self {
        let world = WorldConfig {
            width: 256,
            height: 256,
            ..WorldConfig::default()
        };
        let mut spec = Self::base(TaskFamily::MapExploration, world, None);
        spec.spawn = SpawnMode::Spread;
        spec
    }

    pub fn for_family(family: TaskFamily) -> Self {
        match family {
            TaskFamily::GoalSearch => Self::default_goal_search(),
            TaskFamily::BlockSearch => Self::block_search(),
            TaskFamily::MapExploration => Self::map_exploration(),
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: String| Err(TaskError::Invalid(m));
        if self.max_iters == 0 || self.max_iters > DEFAULT_MAX_ITERS {
            return bad(format!("max_iters must be in 1..={DEFAULT_MAX_ITERS}"));
        }
        if self.n_agents == 0 || self.n_agents > MAX_AGENTS {
            return bad(format!("agent budget must be in 1..={MAX_AGENTS}"));
        }
        if self.seeds.is_empty() || self.trials_per_seed == 0 {
            return bad("no trials to run".into());
        }
        if self.family == TaskFamily::GoalSearch && self.goal.is_none() {
            return bad("goal search needs a goal".into());
        }
        if self.family == TaskFamily::BlockSearch && self.world.layout != Layout::DiamondGrid16 {
            return bad("block search needs the diamond_grid_16 layout".into());
        }
        let cells = self.world.width as usize * self.world.height as usize;
        if cells < self.n_agents {
            return bad("world has fewer cells than agents".into());
        }
        self.world.validate()?;
        Ok(())
    }

    /// `(trial index, trial seed)` for every trial, in run order.
    pub fn trial_seeds(&self) -> Vec<(usize, u64)> {
        self.seeds
            .iter()
            .flat_map(|&s| {
                (0..self.trials_per_seed as u64).map(move |t| if t == 0 { s } else { mix_seed(s, t) })
            })
            .enumerate()
            .collect()
    }

    pub fn header(&self, backend: &str) -> RunHeader {
        RunHeader {
            task: self.family.to_string(),
            agents: self.n_agents,
            backend: backend.to_string(),
            ablation: self.ablation.iter().map(|a| a.name().to_string()).collect(),
            max_iters: self.max_iters,
            spawn: self.spawn.to_string(),
            area_target: self.area_target,
            block_target: self.block_target,
            area_window: self.area_window,
            seeds: self.seeds.clone(),
            trials_per_seed: self.trials_per_seed,
        }
    }
}

/// Switch off the dynamic map and/or auto-organization.
pub fn apply_ablation(config: &HierarchyConfig, flags: &BTreeSet<Ablation>) -> HierarchyConfig {
    let mut c = config.clone();
    if flags.contains(&Ablation::NoDynamicMap) {
        c.dynamic_map = false;
    }
    if flags.contains(&Ablation::NoAutoOrganize) {
        c.auto_organize = false;
    }
    c
}

/// Spawn cells for `n` agents, drawn from the trial seed.
pub fn spawn_positions(bounds: Rect, n: usize, mode: SpawnMode, seed: u64) -> Vec<Position> {
    let mut rng = SplitMix64::new(mix_seed(seed, SPAWN_STREAM));
    let mut taken = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let draw = |rng: &mut SplitMix64| {
        Position::new(
            rng.range_i32(bounds.x0, bounds.x1() - 1),
            rng.range_i32(bounds.y0, bounds.y1() - 1),
        )
    };
    match mode {
        SpawnMode::Spread => {
            while out.len() < n {
                let p = draw(&mut rng);
                if taken.insert(p) {
                    out.push(p);
                }
            }
        }
        SpawnMode::Clustered => {
            let center = draw(&mut rng);
            let mut radius = 0;
            while out.len() < n {
                for p in Rect::window(center, radius).intersect(&bounds).cells() {
                    if out.len() < n && taken.insert(p) {
                        out.push(p);
                    }
                }
                radius += 1;
            }
        }
    }
    out
}

/// Per-trial metrics. Both series have one entry per completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub seed: u64,
    pub completed: bool,
    pub success: bool,
    pub iters_to_success: Option<u64>,
    pub iters: u64,
    pub initial_area: usize,
    pub initial_found: usize,
    pub area_per_iter: Vec<usize>,
    pub blocks_found_per_iter: Vec<usize>,
    pub backend_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialMetrics {
    /// Explored area after `iters` iterations (or the last one reached).
    pub fn area_after(&self, iters: u64) -> usize {
        if iters == 0 {
            return self.initial_area;
        }
        let i = (iters as usize).min(self.area_per_iter.len());
        if i == 0 {
            self.initial_area
        } else {
            self.area_per_iter[i - 1]
        }
    }

    pub fn final_found(&self) -> usize {
        self.blocks_found_per_iter
            .last()
            .copied()
            .unwrap_or(self.initial_found)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub agents: usize,
    pub backend: String,
    pub ablation: Vec<String>,
    pub spawn: String,
    pub max_iters: u64,
    pub trials: usize,
    pub completed: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean iterations to success, over successful trials only.
    pub mean_iters: Option<f64>,
    /// Mean distinct blocks reached over the whole run.
    pub mean_blocks: f64,
    /// Mean explored area after `area_window` iterations.
    pub mean_area: f64,
    pub area_window: u64,
    /// Mean explored area before the first iteration.
    pub mean_initial_area: f64,
    pub mean_backend_calls: f64,
    pub per_trial: Vec<TrialMetrics>,
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(header: &RunHeader, per_trial: Vec<TrialMetrics>) -> Summary {
    let trials = per_trial.len();
    let successes = per_trial.iter().filter(|t| t.success).count();
    let all = |f: &dyn Fn(&TrialMetrics) -> f64| mean(per_trial.iter().map(f)).unwrap_or(0.0);
    Summary {
        task: header.task.clone(),
        agents: header.agents,
        backend: header.backend.clone(),
        ablation: header.ablation.clone(),
        spawn: header.spawn.clone(),
        max_iters: header.max_iters,
        trials,
        completed: per_trial.iter().filter(|t| t.completed).count(),
        successes,
        success_rate: if trials == 0 {
            0.0
        } else {
            successes as f64 / trials as f64
        },
        mean_iters: mean(
            per_trial
                .iter()
                .filter_map(|t| t.iters_to_success.map(|i| i as f64)),
        ),
        mean_blocks: all(&|t| t.final_found() as f64),
        mean_area: all(&|t| t.area_after(header.area_window) as f64),
        area_window: header.area_window,
        mean_initial_area: all(&|t| t.initial_area as f64),
        mean_backend_calls: all(&|t| t.backend_calls as f64),
        per_trial,
    }
}

/// Whether a trial has met its task after iteration `round` (counted from 1).
fn reached(family: TaskFamily, header: &RunHeader, area: usize, found: usize, goal_met: bool) -> bool {
    match family {
        TaskFamily::GoalSearch => goal_met,
        TaskFamily::BlockSearch => found >= header.block_target,
        TaskFamily::MapExploration => area >= header.area_target,
    }
}

/// Whether the trial can stop before the cap: the goal is met, or for
/// exploration both metrics are already known.
fn finished(family: TaskFamily, header: &RunHeader, round: u64, success: bool, done: bool) -> bool {
    done || (family == TaskFamily::MapExploration && success && round >= header.area_window)
}

fn family_of(header: &RunHeader) -> Result<TaskFamily, String> {
    header.task.parse()
}

pub struct TrialOutput {
    pub metrics: TrialMetrics,
    pub trace: Vec<String>,
    pub messages: Vec<String>,
}

fn build_world(spec: &TaskSpec, seed: u64) -> Result<(WorldState, Option<Goal>), TaskError> {
    let config = WorldConfig {
        seed,
        ..spec.world.clone()
    };
    let mut world = generate_world(&config)?;
    for (i, p) in spawn_positions(world.bounds(), spec.n_agents, spec.spawn, seed)
        .into_iter()
        .enumerate()
    {
        world.spawn(BodyId(i as u32), p)?;
    }
    let goal = match spec.family {
        TaskFamily::GoalSearch => spec.goal.clone(),
        TaskFamily::BlockSearch => {
            let count = world
                .entities()
                .iter()
                .filter(|e| matches!(&e.kind, EntityKind::Object { name } if name == DIAMOND_TOKEN))
                .count();
            Some(Goal {
                target: GoalTarget::Object {
                    name: DIAMOND_TOKEN.into(),
                },
                count: count.max(1) as u32,
            })
        }
        TaskFamily::MapExploration => None,
    };
    Ok((world, goal))
}

/// One trial. Errors after bootstrap end the trial early and are recorded
/// in its metrics and trace rather than returned.
pub fn run_trial(
    spec: &TaskSpec,
    header: &RunHeader,
    trial: usize,
    seed: u64,
    bundle: &BackendBundle,
) -> TrialOutput {
    let mut trace = Vec::new();
    let mut messages = Vec::new();
    let mut metrics = TrialMetrics {
        trial,
        seed,
        completed: false,
        success: false,
        iters_to_success: None,
        iters: 0,
        initial_area: 0,
        initial_found: 0,
        area_per_iter: Vec::new(),
        blocks_found_per_iter: Vec::new(),
        backend_calls: 0,
        error: None,
    };
    let bundle = bundle.fork();
    let config = apply_ablation(&spec.hierarchy, &spec.ablation);
    let started = build_world(spec, seed).and_then(|(world, goal)| {
        Ok(bootstrap(world, goal, bundle.clone(), spec.memory.clone(), config)?)
    });
    let mut state = match started {
        Ok(s) => s,
        Err(e) => {
            metrics.error = Some(e.to_string());
            metrics.backend_calls = bundle.calls();
            trace.push(
                TraceRecord::TrialEnd(TrialEnd {
                    trial,
                    seed,
                    backend_calls: metrics.backend_calls,
                    error: metrics.error.clone(),
                })
                .to_line(),
            );
            return TrialOutput {
                metrics,
                trace,
                messages,
            };
        }
    };
    metrics.initial_area = state.platform.map().explored_area();
    metrics.initial_found = state.found().len();
    metrics.backend_calls = bundle.calls();
    trace.push(
        TraceRecord::Trial(TrialStart {
            trial,
            seed,
            initial_area: metrics.initial_area,
            initial_found: metrics.initial_found,
            backend_calls: metrics.backend_calls,
        })
        .to_line(),
    );
    let log = |state: &mut crate::hierarchy::SystemState, messages: &mut Vec<String>| {
        for env in state.take_envelopes() {
            messages.push(
                serde_json::json!({ "trial": trial, "seed": seed, "envelope": env }).to_string(),
            );
        }
    };
    log(&mut state, &mut messages);
    for round in 1..=spec.max_iters {
        let record = match state.tick() {
            Ok(r) => r,
            Err(e) => {
                metrics.error = Some(e.to_string());
                break;
            }
        };
        log(&mut state, &mut messages);
        let area = state.platform.map().explored_area();
        let found = state.found().len();
        metrics.iters = round;
        metrics.area_per_iter.push(area);
        metrics.blocks_found_per_iter.push(found);
        if !metrics.success && reached(spec.family, header, area, found, state.goal_satisfied()) {
            metrics.success = true;
            metrics.iters_to_success = Some(round);
        }
        trace.push(
            TraceRecord::Tick(TickRecord {
                trial,
                seed,
                body: record,
            })
            .to_line(),
        );
        if finished(spec.family, header, round, metrics.success, state.is_done()) {
            break;
        }
    }
    metrics.backend_calls = bundle.calls();
    metrics.completed = metrics.error.is_none();
    trace.push(
        TraceRecord::TrialEnd(TrialEnd {
            trial,
            seed,
            backend_calls: metrics.backend_calls,
            error: metrics.error.clone(),
        })
        .to_line(),
    );
    TrialOutput {
        metrics,
        trace,
        messages,
    }
}

pub struct RunOutput {
    pub summary: Summary,
    /// JSONL lines: run header, then each trial's records in trial order.
    pub trace: Vec<String>,
    /// JSONL envelope log (empty unless message logging is on).
    pub messages: Vec<String>,
}

impl RunOutput {
    pub fn trace_text(&self) -> String {
        join_lines(&self.trace)
    }

    /// Write `summary.json`, `table.md`, `trace.jsonl` (and `messages.jsonl`
    /// when messages were logged) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), TaskError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TaskError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let files = [
            ("summary.json", summary_json(&self.summary)),
            ("table.md", table_markdown(std::slice::from_ref(&self.summary))),
            ("trace.jsonl", self.trace_text()),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(&path))?;
        }
        if !self.messages.is_empty() {
            let path = dir.join("messages.jsonl");
            fs::write(&path, join_lines(&self.messages)).map_err(io(&path))?;
        }
        Ok(())
    }

    pub fn all_completed(&self) -> bool {
        self.summary.completed == self.summary.trials
    }
}

fn join_lines(lines: &[String]) -> String {
    let mut out = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out
}

pub fn summary_json(summary: &Summary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Run every trial of `spec` on `bundle`. Trials run in parallel; output
/// order follows trial order.
pub fn run_task(spec: &TaskSpec, bundle: &BackendBundle) -> Result<RunOutput, TaskError> {
    spec.validate()?;
    let header = spec.header(&bundle.kind.to_string());
    let outputs: Vec<TrialOutput> = spec
        .trial_seeds()
        .into_par_iter()
        .map(|(trial, seed)| run_trial(spec, &header, trial, seed, bundle))
        .collect();
    let mut trace = vec![TraceRecord::Run(header.clone()).to_line()];
    let mut messages = Vec::new();
    let mut per_trial = Vec::with_capacity(outputs.len());
    for out in outputs {
        trace.extend(out.trace);
        messages.extend(out.messages);
        per_trial.push(out.metrics);
    }
    Ok(RunOutput {
        summary: summarize(&header, per_trial),
        trace,
        messages,
    })
}

pub fn run_goal_search(spec: &TaskSpec, bundle: &BackendBundle) -> Result<RunOutput, TaskError> {
    expect_family(spec, TaskFamily::GoalSearch)?;
    run_task(spec, bundle)
}

pub fn run_block_search(spec: &TaskSpec, bundle: &BackendBundle) -> Result<RunOutput, TaskError> {
    expect_family(spec, TaskFamily::BlockSearch)?;
    run_task(spec, bundle)
}

pub fn run_map_exploration(spec: &TaskSpec, bundle: &BackendBundle) -> Result<RunOutput, TaskError> {
    expect_family(spec, TaskFamily::MapExploration)?;
    run_task(spec, bundle)
}

fn expect_family(spec: &TaskSpec, family: TaskFamily) -> Result<(), TaskError> {
    if spec.family == family {
        Ok(())
    } else {
        Err(TaskError::Invalid(format!(
            "expected a {family} task, got {}",
            spec.family
        )))
    }
}

/// Rebuild the summary of a run from its trace alone.
pub fn summary_from_trace(text: &str) -> Result<Summary, TaskError> {
    let mut header: Option<RunHeader> = None;
    let mut family = TaskFamily::GoalSearch;
    let mut trials: Vec<TrialMetrics> = Vec::new();
    let mut goal_met = false;
    let mut open = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |detail: String| TaskError::Trace {
            line: line_no,
            detail,
        };
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        match record {
            TraceRecord::Run(h) => {
                if header.is_some() {
                    return Err(err("second run header".into()));
                }
                family = family_of(&h).map_err(err)?;
                header = Some(h);
            }
            TraceRecord::Trial(t) => {
                goal_met = false;
                open = true;
                trials.push(TrialMetrics {
                    trial: t.trial,
                    seed: t.seed,
                    completed: false,
                    success: false,
                    iters_to_success: None,
                    iters: 0,
                    initial_area: t.initial_area,
                    initial_found: t.initial_found,
                    area_per_iter: Vec::new(),
                    blocks_found_per_iter: Vec::new(),
                    backend_calls: t.backend_calls,
                    error: None,
                });
            }
            TraceRecord::Tick(tick) => {
                let h = header.as_ref().ok_or_else(|| err("tick before header".into()))?;
                let m = trials
                    .last_mut()
                    .filter(|m| open && m.trial == tick.trial)
                    .ok_or_else(|| err(format!("tick for unopened trial {}", tick.trial)))?;
                let d = &tick.body.metrics_delta;
                goal_met |= d.goal_satisfied;
                m.iters = tick.body.round;
                m.area_per_iter.push(d.area);
                m.blocks_found_per_iter.push(d.found_total);
                m.backend_calls += d.backend_calls;
                if !m.success && reached(family, h, d.area, d.found_total, goal_met) {
                    m.success = true;
                    m.iters_to_success = Some(tick.body.round);
                }
            }
            TraceRecord::TrialEnd(end) => {
                let last = trials.last_mut().filter(|m| open && m.trial == end.trial);
                open = false;
                match last {
                    Some(m) => {
                        m.completed = end.error.is_none();
                        m.backend_calls = end.backend_calls;
                        m.error = end.error;
                    }
                    None => trials.push(TrialMetrics {
                        trial: end.trial,
                        seed: end.seed,
                        completed: false,
                        success: false,
                        iters_to_success: None,
                        iters: 0,
                        initial_area: 0,
                        initial_found: 0,
                        area_per_iter: Vec::new(),
                        blocks_found_per_iter: Vec::new(),
                        backend_calls: end.backend_calls,
                        error: end.error,
                    }),
                }
            }
        }
    }
    let header = header.ok_or(TaskError::Trace {
        line: 0,
        detail: "no run header".into(),
    })?;
    Ok(summarize(&header, trials))
}

/// Markdown table with one row per summary.
pub fn table_markdown(summaries: &[Summary]) -> String {
    let mut out = String::from(
        "| task | setting | # agents | spawn | trials | # iters | success rate | # blocks | area |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for s in summaries {
        let setting = if s.ablation.is_empty() {
            "full".to_string()
        } else {
            s.ablation.join("+")
        };
        let iters = s
            .mean_iters
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {:.2} | {:.2} | {:.1} |\n",
            s.task,
            setting,
            s.agents,
            s.spawn,
            s.trials,
            iters,
            s.success_rate,
            s.mean_blocks,
            s.mean_area,
        ));
    }
    out
}
