//! Planning modules and the backends that implement them.
//!
//! The manager runs a Planner, Describer, Critic and Deployer; each
//! conductor runs an Actor, Curriculum, Critic and Skill resolver, plus the
//! sub-command half of the Deployer. Every module is a trait so the same
//! engine runs against the deterministic [`scripted`] heuristics or a live
//! model over HTTP ([`http`]).

pub mod http;
pub mod scripted;
pub mod stub;
pub mod targeting;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{Position, Rect};
use crate::goal::{EntityId, Goal, GoalTarget};
use crate::map::MapImage;
use crate::memory::{CurriculumLog, PromptContext, SkillLibrary, SkillRecord};
use crate::world::Observation;

/// Upper bound on concurrently deployed agents.
pub const MAX_AGENTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned malformed {role} response after retry: {detail}")]
    Malformed { role: String, detail: String },
    #[error("backend rejected input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActError {
    #[error("command exhausted")]
    CommandExhausted,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionStep {
    MoveTo { target: Position },
    Scan,
    ReportMap,
    PickUp { item: String },
    Idle,
}

impl fmt::Display for ActionStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionStep::MoveTo { target } => write!(f, "move_to {target}"),
            ActionStep::Scan => f.write_str("scan"),
            ActionStep::ReportMap => f.write_str("report_map"),
            ActionStep::PickUp { item } => write!(f, "pick_up {item}"),
            ActionStep::Idle => f.write_str("idle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubGoalKind {
    Image { tokens: Vec<String> },
    Object { name: String },
    Audio { source: EntityId },
    Explore { region: Rect },
    Search {
        area: Rect,
        target: GoalTarget,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        focus: Option<Position>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoal {
    pub id: u32,
    pub kind: SubGoalKind,
    pub quantity: u32,
    pub suggested_strategy: String,
}

impl SubGoal {
    /// Region the subgoal is confined to, if any.
    pub fn region(&self) -> Option<Rect> {
        match &self.kind {
            SubGoalKind::Explore { region } => Some(*region),
            SubGoalKind::Search { area, .. } => Some(*area),
            _ => None,
        }
    }

    pub fn focus(&self) -> Option<Position> {
        match &self.kind {
            SubGoalKind::Search { focus, .. } => *focus,
            _ => None,
        }
    }

    pub fn target(&self) -> Option<GoalTarget> {
        match &self.kind {
            SubGoalKind::Image { tokens } => Some(GoalTarget::Image {
                tokens: tokens.iter().cloned().collect(),
            }),
            SubGoalKind::Object { name } => Some(GoalTarget::Object { name: name.clone() }),
            SubGoalKind::Audio { source } => Some(GoalTarget::Audio { source: *source }),
            SubGoalKind::Search { target, .. } => Some(target.clone()),
            SubGoalKind::Explore { .. } => None,
        }
    }

    pub fn validate(&self, world: &Rect) -> Result<(), BackendError> {
        if self.quantity == 0 {
            return Err(BackendError::InvalidInput(format!(
                "subgoal {} has quantity 0",
                self.id
            )));
        }
        if let Some(r) = self.region() {
            if r.is_empty() || !world.contains_rect(&r) {
                return Err(BackendError::InvalidInput(format!(
                    "subgoal {} region {r} outside world {world}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for SubGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SubGoalKind::Explore { region } => write!(f, "explore {region}"),
            SubGoalKind::Search { area, target, focus } => match focus {
                Some(p) => write!(f, "search {target} at {p}"),
                None => write!(f, "search {target} in {area}"),
            },
            SubGoalKind::Image { tokens } => write!(f, "find image {}", tokens.join(" ")),
            SubGoalKind::Object { name } => write!(f, "find object {name}"),
            SubGoalKind::Audio { source } => write!(f, "find audio source {source}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Fresh,
    MemoryAugmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub subgoals: Vec<SubGoal>,
    pub rationale: String,
    pub source: PlanSource,
}

impl Plan {
    pub fn summary(&self) -> String {
        self.subgoals
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub verdict: Verdict,
    pub reasons: String,
    #[serde(default)]
    pub suggested_edits: Option<Vec<SubGoal>>,
}

impl Critique {
    pub fn accept(reasons: &str) -> Self {
        Self {
            verdict: Verdict::Accept,
            reasons: reasons.to_string(),
            suggested_edits: None,
        }
    }

    pub fn revise(reasons: &str) -> Self {
        Self {
            verdict: Verdict::Revise,
            reasons: reasons.to_string(),
            suggested_edits: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.verdict == Verdict::Revise && self.reasons.trim().is_empty() {
            return Err(BackendError::InvalidInput("revise without reasons".into()));
        }
        Ok(())
    }
}

/// One round of a group's execution as seen by a critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub round: u64,
    pub area_gain: u64,
    pub goal_progress: u64,
}

impl OutcomeReport {
    pub fn is_stalled(&self) -> bool {
        self.area_gain == 0 && self.goal_progress == 0
    }
}

impl fmt::Display for OutcomeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "area +{}, ", self.area_gain)?;
        if self.goal_progress == 0 {
            f.write_str("goal not found")
        } else {
            write!(f, "goal progress +{}", self.goal_progress)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Audio,
}

/// Symbolic stand-in for an image or a sound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualDescriptor {
    pub modality: Modality,
    pub tokens: Vec<String>,
}

impl VisualDescriptor {
    pub fn image<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Self {
        Self {
            modality: Modality::Image,
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    pub fn audio<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Self {
        Self {
            modality: Modality::Audio,
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input", content = "value", rename_all = "snake_case")]
pub enum DescribeInput {
    Observation(Observation),
    Map(MapImage),
    Visual(VisualDescriptor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeardReport {
    pub listener: Position,
    pub source: EntityId,
    pub intensity: f64,
}

/// What the manager knows besides the map: conductor reports digested.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatusDigest {
    pub text: String,
    /// Cells of targets already reached.
    pub found: Vec<Position>,
    pub heard: Vec<HeardReport>,
    /// Subgoals currently held by groups.
    pub active: Vec<SubGoal>,
    /// Positions of the agents the new plan will be given to.
    pub anchors: Vec<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub goal: Option<Goal>,
    pub map: MapImage,
    pub status: StatusDigest,
    pub memory_context: PromptContext,
    pub max_subgoals: usize,
    pub first_id: u32,
    pub perceptible_radius_audio: f64,
    pub image_match_fraction: f64,
}

/// Multi-modal information handed to the deployer with each subgoal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalInfo {
    pub map: MapImage,
    pub status_text: String,
    pub found: Vec<Position>,
    pub goal: Option<Goal>,
}

/// Manager → conductor task package.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskDirective {
    pub subgoal_id: u32,
    pub kind: SubGoalKind,
    pub region: Rect,
    pub target: Option<GoalTarget>,
    pub focus: Option<Position>,
    pub quantity: u32,
    pub strategy: String,
    pub map_excerpt: MapImage,
    /// Target cells already reached; skills skip them.
    pub exclude: Vec<Position>,
    /// Text used to retrieve skills.
    pub goal_hint: String,
}

/// Conductor → sub-agent flat command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubCommand {
    pub subgoal_id: u32,
    pub position: Position,
    pub steps: Vec<ActionStep>,
    pub exclude: Vec<Position>,
    /// Skills already expanded into this command.
    #[serde(default)]
    pub fired: Vec<String>,
}

impl SubCommand {
    /// Insert a skill macro at `cursor`, replacing nothing.
    pub fn splice(&mut self, cursor: usize, splice: &Splice) {
        let at = cursor.min(self.steps.len());
        self.steps.splice(at..at, splice.steps.iter().cloned());
        self.fired.push(splice.skill.clone());
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splice {
    pub skill: String,
    pub steps: Vec<ActionStep>,
}

/// Actor decision: the step to run now, and a macro to splice in when a
/// skill fired (its first step is `step`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Act {
    pub step: ActionStep,
    pub splice: Option<Splice>,
}

pub trait Describer: Send + Sync {
    fn describe(&self, input: &DescribeInput) -> Result<String, BackendError>;
    /// Fold `items` into `prior` (a running digest).
    fn summarize(&self, prior: Option<&str>, items: &[String]) -> Result<String, BackendError>;
}

pub trait Planner: Send + Sync {
    fn plan_subgoals(&self, request: &PlanRequest) -> Result<Plan, BackendError>;
}

pub trait Deployer: Send + Sync {
    fn deploy_subtask(
        &self,
        info: &MultimodalInfo,
        subgoal: &SubGoal,
        strategy: &str,
    ) -> Result<SubtaskDirective, BackendError>;

    fn deploy_subcommand(
        &self,
        task: &SubtaskDirective,
        position: Position,
    ) -> Result<SubCommand, BackendError>;
}

pub trait Critic: Send + Sync {
    fn critique(&self, subject: &str, history: &[OutcomeReport]) -> Result<Critique, BackendError>;
}

pub trait Actor: Send + Sync {
    fn act(
        &self,
        command: &SubCommand,
        cursor: usize,
        observation: &Observation,
        skills: &[SkillRecord],
    ) -> Result<Act, ActError>;
}

pub trait Curriculum: Send + Sync {
    fn propose_next_task(&self, log: &CurriculumLog, map: &MapImage) -> Result<String, BackendError>;
}

pub trait SkillResolver: Send + Sync {
    /// Skills relevant to `query`, best first; irrelevant ones are dropped.
    fn resolve(
        &self,
        library: &SkillLibrary,
        query: &[String],
        k: usize,
    ) -> Result<Vec<SkillRecord>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    HttpLlm,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Scripted => "scripted",
            BackendKind::HttpLlm => "http",
        })
    }
}

/// The eight module handles, all from one backend. Calls made through the
/// bundle are counted.
#[derive(Clone)]
pub struct BackendBundle {
    pub planner: Arc<dyn Planner>,
    pub describer: Arc<dyn Describer>,
    pub deployer: Arc<dyn Deployer>,
    pub critic_manager: Arc<dyn Critic>,
    pub actor: Arc<dyn Actor>,
    pub curriculum: Arc<dyn Curriculum>,
    pub critic_conductor: Arc<dyn Critic>,
    pub skill_resolver: Arc<dyn SkillResolver>,
    pub kind: BackendKind,
    calls: Arc<AtomicU64>,
}

impl fmt::Debug for BackendBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendBundle")
            .field("kind", &self.kind)
            .field("calls", &self.calls())
            .finish()
    }
}

impl BackendBundle {
    pub fn scripted(config: scripted::ScriptedConfig) -> Self {
        let b = Arc::new(scripted::ScriptedBackend::new(config));
        Self {
            planner: b.clone(),
            describer: b.clone(),
            deployer: b.clone(),
            critic_manager: b.clone(),
            actor: b.clone(),
            curriculum: b.clone(),
            critic_conductor: b.clone(),
            skill_resolver: b,
            kind: BackendKind::Scripted,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn http(client: http::HttpClient) -> Self {
        let b = Arc::new(http::HttpBackend::new(client));
        Self {
            planner: b.clone(),
            describer: b.clone(),
            deployer: b.clone(),
            critic_manager: Arc::new(http::HttpCritic::manager(b.clone())),
            actor: b.clone(),
            curriculum: b.clone(),
            critic_conductor: Arc::new(http::HttpCritic::conductor(b.clone())),
            skill_resolver: b,
            kind: BackendKind::HttpLlm,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Same modules, fresh call counter.
    pub fn fork(&self) -> Self {
        Self {
            calls: Arc::new(AtomicU64::new(0)),
            ..self.clone()
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn count(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn describe(&self, input: &DescribeInput) -> Result<String, BackendError> {
        self.count();
        self.describer.describe(input)
    }

    pub fn summarize(&self, prior: Option<&str>, items: &[String]) -> Result<String, BackendError> {
        self.count();
        self.describer.summarize(prior, items)
    }

    pub fn plan_subgoals(&self, request: &PlanRequest) -> Result<Plan, BackendError> {
        self.count();
        let mut plan = self.planner.plan_subgoals(request)?;
        plan.subgoals.truncate(request.max_subgoals.clamp(1, MAX_AGENTS));
        if plan.subgoals.is_empty() {
            return Err(BackendError::InvalidInput("planner returned no subgoals".into()));
        }
        for sg in &plan.subgoals {
            sg.validate(&request.map.bounds)?;
        }
        Ok(plan)
    }

    pub fn deploy_subtask(
        &self,
        info: &MultimodalInfo,
        subgoal: &SubGoal,
        strategy: &str,
    ) -> Result<SubtaskDirective, BackendError> {
        self.count();
        self.deployer.deploy_subtask(info, subgoal, strategy)
    }

    pub fn deploy_subcommand(
        &self,
        task: &SubtaskDirective,
        position: Position,
    ) -> Result<SubCommand, BackendError> {
        self.count();
        self.deployer.deploy_subcommand(task, position)
    }

    pub fn critique_manager(
        &self,
        subject: &str,
        history: &[OutcomeReport],
    ) -> Result<Critique, BackendError> {
        self.count();
        let c = self.critic_manager.critique(subject, history)?;
        c.validate()?;
        Ok(c)
    }

    pub fn critique_conductor(
        &self,
        subject: &str,
        history: &[OutcomeReport],
    ) -> Result<Critique, BackendError> {
        self.count();
        let c = self.critic_conductor.critique(subject, history)?;
        c.validate()?;
        Ok(c)
    }

    pub fn act(
        &self,
        command: &SubCommand,
        cursor: usize,
        observation: &Observation,
        skills: &[SkillRecord],
    ) -> Result<Act, ActError> {
        self.count();
        self.actor.act(command, cursor, observation, skills)
    }

    pub fn propose_next_task(
        &self,
        log: &CurriculumLog,
        map: &MapImage,
    ) -> Result<String, BackendError> {
        self.count();
        self.curriculum.propose_next_task(log, map)
    }

    pub fn resolve_skills(
        &self,
        library: &SkillLibrary,
        query: &[String],
        k: usize,
    ) -> Result<Vec<SkillRecord>, BackendError> {
        self.count();
        self.skill_resolver.resolve(library, query, k)
    }
}

/// Describer calls routed through a bundle are counted like any other.
impl Describer for BackendBundle {
    fn describe(&self, input: &DescribeInput) -> Result<String, BackendError> {
        BackendBundle::describe(self, input)
    }

    fn summarize(&self, prior: Option<&str>, items: &[String]) -> Result<String, BackendError> {
        BackendBundle::summarize(self, prior, items)
    }
}
