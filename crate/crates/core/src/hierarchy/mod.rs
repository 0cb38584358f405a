//! The manager / conductor / sub-agent engine.
//!
//! One [`SystemState::tick`] is one prompting round. The manager first
//! releases finished or stalled groups and re-plans for the freed agents,
//! then deploys a task to every conductor. Conductors split their task into
//! per-member commands, every executor acts, and the world applies the
//! moves. Finally the groups observe, report through their conductors, the
//! platform merges the reports, and the manager reviews each group.

pub mod organize;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::comms::{
    outcome_subject, plan_commands, summarize_and_distribute, AgentState, CommsError, MapDelta,
    MemberReport, Payload, RouteError, Router, StatusReport,
};
use crate::geometry::{Position, Rect};
use crate::goal::{Goal, GoalTarget};
use crate::ids::{AgentId, BodyId};
use crate::map::{DynamicMap, MapImage};
use crate::memory::{
    augment_plan_context, retrieve_topk, tokenize, MemoryError, MemoryStore, SkillLibrary,
    SkillRecord, DEFAULT_TOP_K,
};
use crate::mlm::targeting::TargetingParams;
use crate::mlm::{
    ActError, ActionStep, BackendBundle, BackendError, Critique, DescribeInput, HeardReport,
    MultimodalInfo, OutcomeReport, Plan, PlanRequest, PlanSource, StatusDigest, SubCommand,
    SubGoal, SubGoalKind, SubtaskDirective, Verdict, VisualDescriptor, MAX_AGENTS,
};
use crate::platform::{Platform, PlatformError, SubmittedBy, DEFAULT_STATE_CAPACITY};
use crate::world::{apply_move, matching_entities_near, observe, Observation, WorldError, WorldState};

pub use organize::{auto_organize, group_sizes, Allocation, Organization};
pub use trace::{
    ActionRecord, GroupRecord, GroupState, MetricsDelta, RoundRecord, RunHeader, TickRecord,
    TraceRecord, TrialEnd, TrialStart,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyConfig {
    pub max_agents: usize,
    pub memory_top_k: usize,
    pub skill_top_k: usize,
    /// Actor calls allowed per executor per round.
    pub max_act_steps: usize,
    /// The manager sees the shared map (off for the no-dynamic-map ablation).
    pub dynamic_map: bool,
    /// Groups are re-formed as subgoals finish (off for the fixed-groups ablation).
    pub auto_organize: bool,
    pub state_capacity: usize,
    pub log_messages: bool,
    /// Keep the inputs of each round for recomputation checks.
    pub audit: bool,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            max_agents: MAX_AGENTS,
            memory_top_k: DEFAULT_TOP_K,
            skill_top_k: 3,
            max_act_steps: 16,
            dynamic_map: true,
            auto_organize: true,
            state_capacity: DEFAULT_STATE_CAPACITY,
            log_messages: false,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub id: u32,
    pub conductor: AgentId,
    pub members: Vec<AgentId>,
    pub subgoal: SubGoal,
    pub state: GroupState,
    pub history: Vec<OutcomeReport>,
    pending_found: u64,
}

impl GroupSpec {
    /// Conductor first, then members.
    pub fn executors(&self) -> impl Iterator<Item = AgentId> + '_ {
        std::iter::once(self.conductor).chain(self.members.iter().copied())
    }

    pub fn bodies(&self) -> impl Iterator<Item = BodyId> + '_ {
        self.executors().filter_map(|a| a.body())
    }

    pub fn size(&self) -> usize {
        1 + self.members.len()
    }

    pub fn record(&self) -> GroupRecord {
        GroupRecord {
            id: self.id,
            conductor: self.conductor,
            members: self.members.clone(),
            subgoal: self.subgoal.to_string(),
            state: self.state,
        }
    }
}

/// A conductor's state s_i: what it last saw, what it last did, where it is.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductorState {
    pub observation_text: String,
    pub action: Option<ActionStep>,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanAudit {
    pub request: PlanRequest,
    pub plan: Plan,
}

/// Everything a conductor's action was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductorAudit {
    pub group_id: u32,
    pub conductor: AgentId,
    pub subgoal: SubGoal,
    pub info: MultimodalInfo,
    pub strategy: String,
    pub executors: Vec<Position>,
    pub observation: Observation,
    pub skills: Vec<SkillRecord>,
    pub action: ActionStep,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundAudit {
    pub round: u64,
    pub plans: Vec<PlanAudit>,
    pub conductors: Vec<ConductorAudit>,
}

#[derive(Debug, thiserror::Error)]
pub enum HierarchyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Comms(#[from] CommsError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("agent budget: {0}")]
    Budget(String),
    #[error("group membership: {0}")]
    Membership(String),
    #[error("expected a {0} for {1}")]
    Protocol(&'static str, AgentId),
}

#[derive(Debug, Clone)]
pub struct SystemState {
    pub config: HierarchyConfig,
    pub world: WorldState,
    pub platform: Platform,
    pub router: Router,
    pub memory: MemoryStore,
    pub skills: SkillLibrary,
    pub bundle: BackendBundle,
    pub goal: Option<Goal>,
    groups: Vec<GroupSpec>,
    queue: VecDeque<SubGoal>,
    idle: BTreeSet<BodyId>,
    round: u64,
    found: BTreeSet<Position>,
    heard: Vec<HeardReport>,
    status_text: String,
    failures: Vec<String>,
    next_subgoal_id: u32,
    next_group_id: u32,
    last_obs: BTreeMap<BodyId, Arc<Observation>>,
    last_text: BTreeMap<BodyId, String>,
    conductor_states: BTreeMap<AgentId, ConductorState>,
    done: bool,
    audit: Option<RoundAudit>,
    errors: Vec<String>,
}

/// Whether a subgoal is finished as far as `map` shows. Without a map only
/// focused searches can finish.
pub fn subgoal_complete(
    subgoal: &SubGoal,
    map: Option<&DynamicMap>,
    found: &BTreeSet<Position>,
    goal: Option<&Goal>,
    image_match_fraction: f64,
) -> bool {
    let sighted = |m: &DynamicMap, rect: &Rect, target: &GoalTarget| {
        m.explored_cells().any(|(p, c)| {
            rect.contains(p)
                && !found.contains(&p)
                && target.matches_annotations(&c.annotations, image_match_fraction)
        })
    };
    match &subgoal.kind {
        SubGoalKind::Search {
            focus: Some(f), ..
        } => found.contains(f),
        SubGoalKind::Search { area, target, .. } => map.is_some_and(|m| {
            m.unexplored_in(area) == 0 || sighted(m, area, target)
        }),
        SubGoalKind::Explore { region } => map.is_some_and(|m| {
            m.unexplored_in(region) == 0
                || goal.is_some_and(|g| sighted(m, region, &g.target))
        }),
        SubGoalKind::Image { .. } | SubGoalKind::Object { .. } | SubGoalKind::Audio { .. } => {
            goal.is_some_and(|g| found.len() >= g.count as usize)
        }
    }
}

/// Run the actor on `command` until it yields a move or idles.
pub fn run_actor(
    bundle: &BackendBundle,
    command: &mut SubCommand,
    observation: &Observation,
    skills: &[SkillRecord],
    max_steps: usize,
) -> Result<(ActionStep, Vec<String>), BackendError> {
    let mut pickups = Vec::new();
    for cursor in 0..max_steps {
        let act = match bundle.act(command, cursor, observation, skills) {
            Ok(a) => a,
            Err(ActError::CommandExhausted) => break,
            Err(ActError::Backend(e)) => return Err(e),
        };
        if let Some(splice) = &act.splice {
            command.splice(cursor, splice);
        }
        match act.step {
            ActionStep::MoveTo { .. } | ActionStep::Idle => return Ok((act.step, pickups)),
            ActionStep::PickUp { item } => pickups.push(item),
            ActionStep::Scan | ActionStep::ReportMap => {}
        }
    }
    Ok((ActionStep::Idle, pickups))
}

/// Set up the system for `goal` over a world whose agents are already
/// spawned: take in the goal, record what every agent sees at spawn, plan
/// the first subgoals and form the groups. The first actions are taken by
/// the first [`SystemState::tick`].
pub fn bootstrap(
    world: WorldState,
    goal: Option<Goal>,
    bundle: BackendBundle,
    memory: MemoryStore,
    config: HierarchyConfig,
) -> Result<SystemState, HierarchyError> {
    let bodies: Vec<BodyId> = world.agents.keys().copied().collect();
    let budget = config.max_agents.min(MAX_AGENTS);
    if bodies.is_empty() || bodies.len() > budget {
        return Err(HierarchyError::Budget(format!(
            "{} agents spawned, budget is 1..={budget}",
            bodies.len()
        )));
    }
    let mut platform = Platform::new(world.width(), world.height(), config.state_capacity);
    for b in &bodies {
        platform.register(*b);
    }
    if let Some(g) = &goal {
        platform.submit_goal(g.clone(), SubmittedBy::ConfigFile, &world, &bundle)?;
    }
    let router = Router::new().with_envelope_log(config.log_messages);
    let mut state = SystemState {
        config,
        world,
        platform,
        router,
        memory,
        skills: SkillLibrary::builtin(),
        bundle,
        goal,
        groups: Vec::new(),
        queue: VecDeque::new(),
        idle: bodies.iter().copied().collect(),
        round: 0,
        found: BTreeSet::new(),
        heard: Vec::new(),
        status_text: String::new(),
        failures: Vec::new(),
        next_subgoal_id: 0,
        next_group_id: 0,
        last_obs: BTreeMap::new(),
        last_text: BTreeMap::new(),
        conductor_states: BTreeMap::new(),
        done: false,
        audit: None,
        errors: Vec::new(),
    };
    for b in bodies {
        let obs = observe(&state.world, b)?;
        let text = state.bundle.describe(&DescribeInput::Observation(obs.clone()))?;
        state
            .platform
            .record_state(AgentId::sub_agent(b), &obs, &text)?;
        state.heard.extend(heard_from(&obs));
        state.last_obs.insert(b, Arc::new(obs));
        state.last_text.insert(b, text);
    }
    state.detect_found();
    let mut audit = RoundAudit::default();
    let view = state.manager_view();
    state.organize(&view, &mut audit)?;
    state.check_invariants()?;
    if state.config.audit {
        state.audit = Some(audit);
    }
    Ok(state)
}

fn heard_from(obs: &Observation) -> Vec<HeardReport> {
    obs.audio
        .iter()
        .map(|a| HeardReport {
            listener: obs.properties.position,
            source: a.source,
            intensity: a.intensity,
        })
        .collect()
}

impl SystemState {
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }

    pub fn queued(&self) -> impl Iterator<Item = &SubGoal> {
        self.queue.iter()
    }

    pub fn idle(&self) -> &BTreeSet<BodyId> {
        &self.idle
    }

    pub fn found(&self) -> &BTreeSet<Position> {
        &self.found
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn goal_satisfied(&self) -> bool {
        self.goal
            .as_ref()
            .is_some_and(|g| self.found.len() >= g.count as usize)
    }

    pub fn conductor_states(&self) -> &BTreeMap<AgentId, ConductorState> {
        &self.conductor_states
    }

    /// Inputs recorded during the last tick (or bootstrap) when auditing.
    pub fn last_audit(&self) -> Option<&RoundAudit> {
        self.audit.as_ref()
    }

    pub fn errors(&self) -> &[String] {
        &self.errors
    }

    pub fn last_observation(&self, body: BodyId) -> Option<&Observation> {
        self.last_obs.get(&body).map(|o| o.as_ref())
    }

    pub fn targeting_params(&self) -> TargetingParams {
        TargetingParams {
            world: self.world.bounds(),
            sensing_radius: self.world.config.sensing_radius,
            move_cap: self.world.config.move_cap,
        }
    }

    /// What the manager is shown of the map.
    pub fn manager_view(&self) -> MapImage {
        let bounds = self.world.bounds();
        if self.config.dynamic_map {
            self.platform.map().render_for_manager(&bounds)
        } else {
            MapImage::blank(bounds)
        }
    }

    fn manager_map(&self) -> Option<&DynamicMap> {
        self.config.dynamic_map.then(|| self.platform.map())
    }

    fn is_complete(&self, subgoal: &SubGoal) -> bool {
        subgoal_complete(
            subgoal,
            self.manager_map(),
            &self.found,
            self.goal.as_ref(),
            self.world.config.image_match_fraction,
        )
    }

    /// Record a revise verdict against a group. Its agents are released at
    /// the start of the next round; suggested replacements jump the queue.
    pub fn regroup(&mut self, group_id: u32, critique: &Critique) -> Result<(), HierarchyError> {
        if critique.verdict != Verdict::Revise {
            return Ok(());
        }
        let round = self.round;
        let Some(g) = self.groups.iter_mut().find(|g| g.id == group_id) else {
            return Ok(());
        };
        g.state = GroupState::Revising;
        let last = g
            .history
            .last()
            .map(ToString::to_string)
            .unwrap_or_else(|| "no outcome".into());
        self.failures.push(format!(
            "{} abandoned ({}): {last}",
            g.subgoal, critique.reasons
        ));
        let conductor = g.conductor;
        if let Some(edits) = &critique.suggested_edits {
            for sg in edits.iter().rev() {
                self.queue.push_front(sg.clone());
            }
        }
        self.router
            .send(AgentId::MANAGER, conductor, round, Payload::Critique(critique.clone()))?;
        Ok(())
    }

    /// One round, all or nothing: on error the state is left as it was.
    pub fn tick(&mut self) -> Result<RoundRecord, HierarchyError> {
        let mut next = self.clone();
        match next.step() {
            Ok(record) => {
                *self = next;
                Ok(record)
            }
            Err(e) => {
                self.errors.push(format!("round {}: {e}", self.round + 1));
                Err(e)
            }
        }
    }

    fn record(&self, round: u64, actions: Vec<ActionRecord>, calls0: u64, area0: usize, found0: usize) -> RoundRecord {
        let area = self.platform.map().explored_area();
        RoundRecord {
            round,
            groups: self.groups.iter().map(GroupSpec::record).collect(),
            actions,
            map_version: self.platform.map().version(),
            metrics_delta: MetricsDelta {
                area,
                new_cells: area - area0,
                found: self.found.len() - found0,
                found_total: self.found.len(),
                goal_satisfied: self.goal_satisfied(),
                backend_calls: self.bundle.calls() - calls0,
            },
        }
    }

    fn step(&mut self) -> Result<RoundRecord, HierarchyError> {
        let calls0 = self.bundle.calls();
        let area0 = self.platform.map().explored_area();
        let found0 = self.found.len();
        let round = self.round + 1;
        let mut audit = RoundAudit {
            round,
            ..RoundAudit::default()
        };

        if self.goal_satisfied() {
            for g in &mut self.groups {
                g.state = GroupState::Done;
            }
            self.done = true;
            self.round = round;
            self.audit = self.config.audit.then_some(audit);
            return Ok(self.record(round, Vec::new(), calls0, area0, found0));
        }

        // Manager: free finished groups, plan for the freed agents.
        let view = self.manager_view();
        self.release_finished(round)?;
        self.organize(&view, &mut audit)?;
        self.check_invariants()?;

        // Manager → conductors → members, then everyone acts.
        let info = MultimodalInfo {
            map: view,
            status_text: self.status_text.clone(),
            found: self.found.iter().copied().collect(),
            goal: self.goal.clone(),
        };
        let params = self.targeting_params();
        let mut moves: Vec<(BodyId, AgentId, ActionStep, Vec<String>)> = Vec::new();
        for gi in 0..self.groups.len() {
            let group = self.groups[gi].clone();
            let strategy = group.subgoal.suggested_strategy.clone();
            let directive = self.bundle.deploy_subtask(&info, &group.subgoal, &strategy)?;
            self.router.send(
                AgentId::MANAGER,
                group.conductor,
                round,
                Payload::SubtaskDirective(directive),
            )?;
            let directive = self
                .router
                .drain_inbox(group.conductor)
                .into_iter()
                .rev()
                .find_map(|e| match e.payload {
                    Payload::SubtaskDirective(d) => Some(d),
                    _ => None,
                })
                .ok_or(HierarchyError::Protocol("subtask directive", group.conductor))?;
            let skills = self.bundle.resolve_skills(
                &self.skills,
                &tokenize(&directive.goal_hint),
                self.config.skill_top_k,
            )?;
            let commands = self.distribute(&group, &directive, &params, round)?;
            for (agent, mut command) in group.executors().zip(commands) {
                let body = agent.body().expect("executors have bodies");
                let obs = Arc::clone(&self.last_obs[&body]);
                let (action, pickups) = run_actor(
                    &self.bundle,
                    &mut command,
                    &obs,
                    &skills,
                    self.config.max_act_steps,
                )?;
                if agent == group.conductor {
                    self.conductor_states.insert(
                        agent,
                        ConductorState {
                            observation_text: self.last_text[&body].clone(),
                            action: Some(action.clone()),
                            position: obs.properties.position,
                        },
                    );
                    if self.config.audit {
                        audit.conductors.push(ConductorAudit {
                            group_id: group.id,
                            conductor: agent,
                            subgoal: group.subgoal.clone(),
                            info: info.clone(),
                            strategy: strategy.clone(),
                            executors: group
                                .bodies()
                                .map(|b| self.last_obs[&b].properties.position)
                                .collect(),
                            observation: (*obs).clone(),
                            skills: skills.clone(),
                            action: action.clone(),
                        });
                    }
                }
                moves.push((body, agent, action, pickups));
            }
            self.groups[gi].state = GroupState::Executing;
        }

        // World applies the moves.
        let mut actions = Vec::with_capacity(moves.len());
        for (body, agent, action, pickups) in moves {
            if let ActionStep::MoveTo { target } = &action {
                apply_move(&mut self.world, body, *target)?;
            }
            for item in pickups {
                self.world.pick_up(body, &item)?;
            }
            actions.push(ActionRecord {
                agent,
                action: action.to_string(),
            });
        }
        self.detect_found();
        self.world.advance_clock();

        // Groups observe and report; the platform merges.
        self.gather(round)?;

        // Manager reviews every group.
        self.round = round;
        self.review(round)?;
        self.audit = self.config.audit.then_some(audit);
        Ok(self.record(round, actions, calls0, area0, found0))
    }

    /// Commands for every executor of `group`, conductor first.
    fn distribute(
        &mut self,
        group: &GroupSpec,
        directive: &SubtaskDirective,
        params: &TargetingParams,
        round: u64,
    ) -> Result<Vec<SubCommand>, HierarchyError> {
        let pos = |s: &Self, a: AgentId| s.last_obs[&a.body().expect("body")].properties.position;
        let conductor = (group.conductor, pos(self, group.conductor));
        if group.members.is_empty() {
            return Ok(plan_commands(directive, &[conductor.1], &self.bundle, params)?);
        }
        let members: Vec<(AgentId, Position)> =
            group.members.iter().map(|m| (*m, pos(self, *m))).collect();
        let texts: Vec<String> = group
            .members
            .iter()
            .map(|m| self.last_text[&m.body().expect("body")].clone())
            .collect();
        let bundle = self.bundle.clone();
        let dist = summarize_and_distribute(
            &mut self.router,
            conductor,
            &members,
            directive,
            &texts,
            &bundle,
            params,
            round,
        )?;
        let mut commands = vec![dist.conductor_command];
        for m in &group.members {
            let cmd = self
                .router
                .drain_inbox(*m)
                .into_iter()
                .rev()
                .find_map(|e| match e.payload {
                    Payload::SubCommand(c) => Some(c),
                    _ => None,
                })
                .ok_or(HierarchyError::Protocol("sub-command", *m))?;
            commands.push(cmd);
        }
        Ok(commands)
    }

    fn detect_found(&mut self) {
        let Some(goal) = &self.goal else { return };
        let threshold = self.world.config.goal_threshold;
        let mut credit: BTreeMap<BodyId, u64> = BTreeMap::new();
        for (body, agent) in &self.world.agents {
            for id in matching_entities_near(&self.world, agent.position, &goal.target, threshold) {
                let at = self.world.entity(id).expect("listed entity").position;
                if self.found.insert(at) {
                    *credit.entry(*body).or_default() += 1;
                }
            }
        }
        for g in &mut self.groups {
            let gained: u64 = g.bodies().map(|b| credit.get(&b).copied().unwrap_or(0)).sum();
            g.pending_found += gained;
        }
    }

    fn gather(&mut self, round: u64) -> Result<(), HierarchyError> {
        let mut heard = Vec::new();
        for gi in 0..self.groups.len() {
            let group = self.groups[gi].clone();
            for m in &group.members {
                let obs = observe(&self.world, m.body().expect("body"))?;
                self.router.send(
                    *m,
                    group.conductor,
                    round,
                    Payload::MemberReport(MemberReport { observation: obs }),
                )?;
            }
            let mut observed = vec![(
                group.conductor,
                observe(&self.world, group.conductor.body().expect("body"))?,
            )];
            for env in self.router.drain_inbox(group.conductor) {
                match env.payload {
                    Payload::MemberReport(r) => observed.push((env.from, r.observation)),
                    Payload::Critique(_) | Payload::SubtaskDirective(_) => {}
                    _ => return Err(HierarchyError::Protocol("member report", env.from)),
                }
            }
            let mut states = Vec::with_capacity(observed.len());
            for (agent, obs) in observed {
                let text = self.bundle.describe(&DescribeInput::Observation(obs.clone()))?;
                heard.extend(heard_from(&obs));
                states.push(AgentState {
                    agent,
                    observation: obs,
                    text,
                });
            }
            let subject = outcome_subject(&group.subgoal.to_string(), &group.history);
            let self_check = self.bundle.critique_conductor(&subject, &group.history)?;
            let status = StatusReport {
                subgoal_id: group.subgoal.id,
                text: format!("{}: {}", group.subgoal, states[0].text),
                found: Vec::new(),
                heard: states.iter().flat_map(|s| heard_from(&s.observation)).collect(),
                self_check,
            };
            self.router.send(
                group.conductor,
                AgentId::MANAGER,
                round,
                Payload::StatusReport(status),
            )?;
            self.router.send(
                group.conductor,
                AgentId::MANAGER,
                round,
                Payload::MapDelta(MapDelta { states }),
            )?;
        }

        let mut gains: BTreeMap<AgentId, u64> = BTreeMap::new();
        let mut texts = Vec::new();
        for env in self.router.drain_inbox(AgentId::MANAGER) {
            match env.payload {
                Payload::MapDelta(delta) => {
                    for s in delta.states {
                        let stats = self.platform.record_state(s.agent, &s.observation, &s.text)?;
                        *gains.entry(env.from).or_default() += stats.new_cells as u64;
                        let body = s.observation.agent;
                        let latest = self.platform.store().latest(body).expect("just recorded");
                        self.last_obs.insert(body, Arc::clone(&latest.observation));
                        self.last_text.insert(body, s.text);
                    }
                }
                Payload::StatusReport(r) => texts.push(r.text),
                _ => return Err(HierarchyError::Protocol("conductor report", env.from)),
            }
        }
        for g in &mut self.groups {
            g.history.push(OutcomeReport {
                round,
                area_gain: gains.get(&g.conductor).copied().unwrap_or(0),
                goal_progress: g.pending_found,
            });
            g.pending_found = 0;
        }
        self.status_text = texts.join("\n");
        self.heard = heard;
        Ok(())
    }

    fn review(&mut self, round: u64) -> Result<(), HierarchyError> {
        if self.goal_satisfied() {
            for g in &mut self.groups {
                g.state = GroupState::Done;
            }
            self.done = true;
            return Ok(());
        }
        for gi in 0..self.groups.len() {
            let group = self.groups[gi].clone();
            if self.is_complete(&group.subgoal) {
                self.groups[gi].state = GroupState::Done;
                self.store_success(&group, round)?;
                continue;
            }
            let subject = outcome_subject(&group.subgoal.to_string(), &group.history);
            let critique = self.bundle.critique_manager(&subject, &group.history)?;
            if critique.verdict == Verdict::Revise {
                self.regroup(group.id, &critique)?;
            }
        }
        Ok(())
    }

    fn task_text(&self) -> String {
        match &self.goal {
            Some(g) => g.to_string(),
            None => "explore the map".to_string(),
        }
    }

    fn store_success(&mut self, group: &GroupSpec, round: u64) -> Result<(), HierarchyError> {
        let body = group.conductor.body().expect("body");
        let obs = tokenize(self.last_text.get(&body).map_or("", String::as_str));
        let plan = Plan {
            subgoals: vec![group.subgoal.clone()],
            rationale: format!("completed by group {} in round {round}", group.id),
            source: PlanSource::Fresh,
        };
        let task = format!("{} {}", self.task_text(), group.subgoal);
        self.memory.store_success(&task, obs, plan, round)?;
        Ok(())
    }

    fn release_finished(&mut self, round: u64) -> Result<(), HierarchyError> {
        let finished: Vec<usize> = (0..self.groups.len())
            .filter(|&i| matches!(self.groups[i].state, GroupState::Done | GroupState::Revising))
            .collect();
        for &i in &finished {
            let g = &self.groups[i];
            for a in g.executors().collect::<Vec<_>>() {
                self.router.drain_inbox(a);
            }
        }
        if !self.config.auto_organize {
            for &i in &finished {
                self.groups[i].state = GroupState::Forming;
                self.groups[i].history.clear();
            }
            return Ok(());
        }
        let mut kept = Vec::with_capacity(self.groups.len());
        for g in std::mem::take(&mut self.groups) {
            if matches!(g.state, GroupState::Done | GroupState::Revising) {
                for a in g.executors() {
                    self.router.unregister(a);
                    self.conductor_states.remove(&a);
                }
                for b in g.bodies() {
                    self.world.set_group(b, None)?;
                    self.idle.insert(b);
                }
            } else {
                kept.push(g);
            }
        }
        self.groups = kept;
        let _ = round;
        Ok(())
    }

    fn plan(
        &mut self,
        view: &MapImage,
        max_subgoals: usize,
        anchors: Vec<Position>,
        audit: &mut RoundAudit,
    ) -> Result<Plan, HierarchyError> {
        let instruction = self.task_text();
        let visual = match self.goal.as_ref().map(|g| &g.target) {
            Some(GoalTarget::Image { tokens }) => Some(VisualDescriptor::image(tokens.iter().cloned())),
            Some(t @ GoalTarget::Audio { .. }) => Some(VisualDescriptor::audio([t.hint()])),
            _ => None,
        };
        let retrieved = retrieve_topk(
            &self.memory,
            &tokenize(&instruction),
            visual.as_ref(),
            self.config.memory_top_k,
            &self.bundle,
        )?;
        let mut text = self.status_text.clone();
        for f in self.failures.drain(..) {
            text.push('\n');
            text.push_str(&f);
        }
        let request = PlanRequest {
            goal: self.goal.clone(),
            map: view.clone(),
            status: StatusDigest {
                text,
                found: self.found.iter().copied().collect(),
                heard: self.heard.clone(),
                active: self
                    .groups
                    .iter()
                    .filter(|g| !matches!(g.state, GroupState::Forming))
                    .map(|g| g.subgoal.clone())
                    .chain(self.queue.iter().cloned())
                    .collect(),
                anchors,
            },
            memory_context: augment_plan_context(&retrieved, &instruction),
            max_subgoals: max_subgoals.clamp(1, MAX_AGENTS),
            first_id: self.next_subgoal_id,
            perceptible_radius_audio: self.world.config.perceptible_radius_audio,
            image_match_fraction: self.world.config.image_match_fraction,
        };
        let plan = self.bundle.plan_subgoals(&request)?;
        let top = plan.subgoals.iter().map(|s| s.id).max().unwrap_or(0);
        self.next_subgoal_id = self.next_subgoal_id.max(top + 1);
        if self.config.audit {
            audit.plans.push(PlanAudit {
                request,
                plan: plan.clone(),
            });
        }
        Ok(plan)
    }

    fn next_queued(&mut self) -> Option<SubGoal> {
        while let Some(sg) = self.queue.pop_front() {
            if !self.is_complete(&sg) {
                return Some(sg);
            }
        }
        None
    }

    fn position(&self, body: BodyId) -> Position {
        self.last_obs[&body].properties.position
    }

    /// Give work to agents without it.
    fn organize(&mut self, view: &MapImage, audit: &mut RoundAudit) -> Result<(), HierarchyError> {
        if !self.config.auto_organize && !self.groups.is_empty() {
            for gi in 0..self.groups.len() {
                if self.groups[gi].state != GroupState::Forming {
                    continue;
                }
                let subgoal = match self.next_queued() {
                    Some(sg) => sg,
                    None => {
                        let anchors = self.groups[gi].bodies().map(|b| self.position(b)).collect();
                        let mut plan = self.plan(view, 1, anchors, audit)?;
                        plan.subgoals.swap_remove(0)
                    }
                };
                self.groups[gi].subgoal = subgoal;
            }
            return Ok(());
        }
        if self.idle.is_empty() {
            return Ok(());
        }
        let mut subgoals = Vec::new();
        while let Some(sg) = self.next_queued() {
            subgoals.push(sg);
        }
        if subgoals.is_empty() {
            let anchors = self.idle.iter().map(|b| self.position(*b)).collect();
            let max = self.idle.len().min(self.config.max_agents);
            subgoals = self.plan(view, max, anchors, audit)?.subgoals;
        }
        let idle: Vec<(BodyId, Position)> =
            self.idle.iter().map(|b| (*b, self.position(*b))).collect();
        let org = auto_organize(&idle, &subgoals);
        for alloc in org.groups {
            self.form_group(alloc)?;
        }
        self.queue.extend(org.queued);
        Ok(())
    }

    fn form_group(&mut self, alloc: Allocation) -> Result<(), HierarchyError> {
        let id = self.next_group_id;
        self.next_group_id += 1;
        let conductor = AgentId::conductor(alloc.conductor);
        let members: Vec<AgentId> = alloc.members.iter().map(|b| AgentId::sub_agent(*b)).collect();
        self.router.form_group(conductor, &members);
        for b in std::iter::once(alloc.conductor).chain(alloc.members.iter().copied()) {
            self.world.set_group(b, Some(id))?;
            self.idle.remove(&b);
        }
        self.groups.push(GroupSpec {
            id,
            conductor,
            members,
            subgoal: alloc.subgoal,
            state: GroupState::Forming,
            history: Vec::new(),
            pending_found: 0,
        });
        Ok(())
    }

    /// Budget and single membership.
    pub fn check_invariants(&self) -> Result<(), HierarchyError> {
        let live: usize = self.groups.iter().map(GroupSpec::size).sum();
        if live > self.config.max_agents.min(MAX_AGENTS) {
            return Err(HierarchyError::Budget(format!("{live} agents in groups")));
        }
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            for b in g.bodies() {
                if !seen.insert(b) || self.idle.contains(&b) {
                    return Err(HierarchyError::Membership(format!("{b} held twice")));
                }
            }
        }
        Ok(())
    }

    /// Full envelopes delivered since the last call (when message logging is on).
    pub fn take_envelopes(&mut self) -> Vec<crate::comms::Envelope> {
        self.router.take_envelopes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::scripted::ScriptedConfig;
    use crate::world::{generate_world, EntityKind, GoalPlacement, WorldConfig};

    fn world(n: u32, goal_at: Option<Position>) -> WorldState {
        let mut cfg = WorldConfig {
            seed: 7,
            width: 96,
            height: 96,
            ..WorldConfig::default()
        };
        if let Some(p) = goal_at {
            cfg.goal_spec.push(GoalPlacement {
                entity: EntityKind::Object { name: "village".into() },
                position: Some(p),
                copies: 1,
            });
        }
        let mut w = generate_world(&cfg).unwrap();
        for i in 0..n {
            w.spawn(BodyId(i), Position::new(10 + i as i32, 10)).unwrap();
        }
        w
    }

    fn boot(n: u32, goal: Option<Goal>, goal_at: Option<Position>) -> SystemState {
        bootstrap(
            world(n, goal_at),
            goal,
            BackendBundle::scripted(ScriptedConfig::default()),
            MemoryStore::new(),
            HierarchyConfig {
                audit: true,
                ..HierarchyConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn goal_next_to_spawn_succeeds_on_first_tick() {
        let mut s = boot(2, Some(Goal::object("village", 1)), Some(Position::new(11, 11)));
        assert!(s.goal_satisfied());
        let r = s.tick().unwrap();
        assert_eq!(r.round, 1);
        assert!(r.actions.is_empty());
        assert!(r.metrics_delta.goal_satisfied);
        assert!(s.groups().iter().all(|g| g.state == GroupState::Done));
    }

    #[test]
    fn single_agent_explores_every_round() {
        let mut s = boot(1, None, None);
        assert_eq!(s.groups().len(), 1);
        for _ in 0..5 {
            let before = s.platform.map().explored_area();
            let r = s.tick().unwrap();
            assert!(r.metrics_delta.area > before, "round {} gained nothing", r.round);
        }
    }

    #[test]
    fn budget_and_membership_hold() {
        let mut s = boot(8, Some(Goal::object("village", 1)), Some(Position::new(90, 90)));
        for _ in 0..30 {
            s.tick().unwrap();
            s.check_invariants().unwrap();
            if s.is_done() {
                break;
            }
        }
    }

    #[test]
    fn identical_inputs_identical_rounds() {
        let mut a = boot(4, Some(Goal::object("village", 1)), Some(Position::new(70, 80)));
        let mut b = boot(4, Some(Goal::object("village", 1)), Some(Position::new(70, 80)));
        for _ in 0..10 {
            assert_eq!(a.tick().unwrap(), b.tick().unwrap());
        }
    }

    #[test]
    fn revise_releases_group_next_round() {
        let mut s = boot(4, None, None);
        s.tick().unwrap();
        let id = s.groups()[0].id;
        s.regroup(id, &Critique::revise("stalled")).unwrap();
        assert_eq!(s.groups()[0].state, GroupState::Revising);
        s.tick().unwrap();
        assert!(s.groups().iter().all(|g| g.id != id));
        assert!(s.idle().is_empty());
    }

    struct Offline;

    impl crate::mlm::Describer for Offline {
        fn describe(&self, _: &DescribeInput) -> Result<String, BackendError> {
            Err(BackendError::Unreachable("offline".into()))
        }

        fn summarize(&self, _: Option<&str>, _: &[String]) -> Result<String, BackendError> {
            Err(BackendError::Unreachable("offline".into()))
        }
    }

    #[test]
    fn failed_tick_leaves_state_untouched() {
        let mut s = boot(2, None, None);
        s.tick().unwrap();
        let round = s.round();
        let map = s.platform.map().clone();
        let world = s.world.clone();
        s.bundle.describer = Arc::new(Offline);
        assert!(matches!(s.tick(), Err(HierarchyError::Backend(_))));
        assert_eq!(s.round(), round);
        assert_eq!(s.platform.map(), &map);
        assert_eq!(s.world, world);
        assert_eq!(s.errors().len(), 1);
    }
}
