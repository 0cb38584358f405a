//! Message router for the two-layer protocol.
//!
//! The manager and conductors talk in both directions. A conductor sends
//! flat commands to its own members, and members only report back to their
//! conductor. Every other route is refused.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Position;
use crate::ids::{AgentId, Tier};
use crate::mlm::targeting::{assign_targets, TargetingParams};
use crate::mlm::{
    BackendBundle, BackendError, Critique, HeardReport, OutcomeReport, SubCommand,
    SubtaskDirective,
};
use crate::world::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    SubtaskDirective,
    StatusReport,
    SubCommand,
    MemberReport,
    Critique,
    MapDelta,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::SubtaskDirective,
        MessageKind::StatusReport,
        MessageKind::SubCommand,
        MessageKind::MemberReport,
        MessageKind::Critique,
        MessageKind::MapDelta,
    ];
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::SubtaskDirective => "subtask_directive",
            MessageKind::StatusReport => "status_report",
            MessageKind::SubCommand => "sub_command",
            MessageKind::MemberReport => "member_report",
            MessageKind::Critique => "critique",
            MessageKind::MapDelta => "map_delta",
        })
    }
}

/// Conductor → manager digest of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub subgoal_id: u32,
    pub text: String,
    /// Target cells the group reached this round.
    pub found: Vec<Position>,
    pub heard: Vec<HeardReport>,
    /// The conductor's own reading of its recent outcomes.
    pub self_check: Critique,
}

/// Sub-agent → conductor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent: AgentId,
    pub observation: Observation,
    pub text: String,
}

/// Conductor → manager: its group's states for the platform to store and merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDelta {
    pub states: Vec<AgentState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Payload {
    SubtaskDirective(SubtaskDirective),
    StatusReport(StatusReport),
    SubCommand(SubCommand),
    MemberReport(MemberReport),
    Critique(Critique),
    MapDelta(MapDelta),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::SubtaskDirective(_) => MessageKind::SubtaskDirective,
            Payload::StatusReport(_) => MessageKind::StatusReport,
            Payload::SubCommand(_) => MessageKind::SubCommand,
            Payload::MemberReport(_) => MessageKind::MemberReport,
            Payload::Critique(_) => MessageKind::Critique,
            Payload::MapDelta(_) => MessageKind::MapDelta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub msg_id: u64,
    pub from: AgentId,
    pub to: AgentId,
    pub round: u64,
    pub payload: Payload,
}

impl Envelope {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

/// The allowed (from tier, to tier, kind) triples.
pub struct RoutingMatrix;

impl RoutingMatrix {
    pub const ALLOWED: [(Tier, Tier, MessageKind); 6] = [
        (Tier::Manager, Tier::Conductor, MessageKind::SubtaskDirective),
        (Tier::Manager, Tier::Conductor, MessageKind::Critique),
        (Tier::Conductor, Tier::Manager, MessageKind::StatusReport),
        (Tier::Conductor, Tier::Manager, MessageKind::MapDelta),
        (Tier::Conductor, Tier::SubAgent, MessageKind::SubCommand),
        (Tier::SubAgent, Tier::Conductor, MessageKind::MemberReport),
    ];

    pub fn allows(from: Tier, to: Tier, kind: MessageKind) -> bool {
        Self::ALLOWED.contains(&(from, to, kind))
    }

    /// The rule a forbidden triple breaks.
    pub fn violated_rule(from: Tier, to: Tier, kind: MessageKind) -> Option<&'static str> {
        if Self::allows(from, to, kind) {
            return None;
        }
        Some(match (from, to) {
            (Tier::SubAgent, Tier::SubAgent) => "sub-agents never message each other",
            (Tier::SubAgent, Tier::Manager) | (Tier::Manager, Tier::SubAgent) => {
                "the manager reaches sub-agents only through their conductor"
            }
            (Tier::Conductor, Tier::Conductor) => "conductors coordinate only through the manager",
            (Tier::Manager, Tier::Manager) => "the manager does not message itself",
            _ => "message kind not allowed on this route",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("forbidden route {from} -> {to} ({kind}): {rule}")]
    Forbidden {
        from: AgentId,
        to: AgentId,
        kind: MessageKind,
        rule: &'static str,
    },
    #[error("unknown recipient {0}")]
    UnknownRecipient(AgentId),
    #[error("unknown sender {0}")]
    UnknownSender(AgentId),
    #[error("message id {0} already used")]
    DuplicateId(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub msg_id: u64,
    pub to: AgentId,
}

/// Compact record of a delivered envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub msg_id: u64,
    pub from: AgentId,
    pub to: AgentId,
    pub kind: MessageKind,
    pub round: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Router {
    next_id: u64,
    inboxes: BTreeMap<AgentId, VecDeque<Envelope>>,
    /// Sub-agent → its conductor.
    conductor_of: BTreeMap<AgentId, AgentId>,
    deliveries: Vec<DeliveryRecord>,
    keep_envelopes: bool,
    envelopes: Vec<Envelope>,
}

impl Router {
    pub fn new() -> Self {
        let mut r = Self::default();
        r.register(AgentId::MANAGER);
        r
    }

    /// Keep full copies of delivered envelopes for [`Router::take_envelopes`].
    pub fn with_envelope_log(mut self, keep: bool) -> Self {
        self.keep_envelopes = keep;
        self
    }

    pub fn register(&mut self, agent: AgentId) {
        self.inboxes.entry(agent).or_default();
    }

    /// Drop an agent and anything still queued for it.
    pub fn unregister(&mut self, agent: AgentId) {
        self.inboxes.remove(&agent);
        self.conductor_of.remove(&agent);
        self.conductor_of.retain(|_, c| *c != agent);
    }

    pub fn is_registered(&self, agent: AgentId) -> bool {
        self.inboxes.contains_key(&agent)
    }

    /// Register a conductor with its members.
    pub fn form_group(&mut self, conductor: AgentId, members: &[AgentId]) {
        self.register(conductor);
        for m in members {
            self.register(*m);
            self.conductor_of.insert(*m, conductor);
        }
    }

    pub fn conductor_of(&self, member: AgentId) -> Option<AgentId> {
        self.conductor_of.get(&member).copied()
    }

    pub fn next_msg_id(&self) -> u64 {
        self.next_id
    }

    fn check(&self, from: AgentId, to: AgentId, kind: MessageKind) -> Result<(), RouteError> {
        if let Some(rule) = RoutingMatrix::violated_rule(from.tier, to.tier, kind) {
            return Err(RouteError::Forbidden { from, to, kind, rule });
        }
        if !self.is_registered(from) {
            return Err(RouteError::UnknownSender(from));
        }
        if !self.is_registered(to) {
            return Err(RouteError::UnknownRecipient(to));
        }
        let forbidden = |rule| Err(RouteError::Forbidden { from, to, kind, rule });
        match (from.tier, to.tier) {
            (Tier::SubAgent, Tier::Conductor) if self.conductor_of(from) != Some(to) => {
                forbidden("a sub-agent reports only to its own conductor")
            }
            (Tier::Conductor, Tier::SubAgent) if self.conductor_of(to) != Some(from) => {
                forbidden("a conductor commands only its own members")
            }
            _ => Ok(()),
        }
    }

    /// Deliver an envelope whose id was taken from [`Router::next_msg_id`].
    pub fn route(&mut self, envelope: Envelope) -> Result<Delivery, RouteError> {
        if envelope.msg_id < self.next_id {
            return Err(RouteError::DuplicateId(envelope.msg_id));
        }
        self.check(envelope.from, envelope.to, envelope.kind())?;
        self.next_id = envelope.msg_id + 1;
        let delivery = Delivery {
            msg_id: envelope.msg_id,
            to: envelope.to,
        };
        self.deliveries.push(DeliveryRecord {
            msg_id: envelope.msg_id,
            from: envelope.from,
            to: envelope.to,
            kind: envelope.kind(),
            round: envelope.round,
        });
        if self.keep_envelopes {
            self.envelopes.push(envelope.clone());
        }
        self.inboxes
            .get_mut(&envelope.to)
            .expect("recipient checked")
            .push_back(envelope);
        Ok(delivery)
    }

    pub fn send(
        &mut self,
        from: AgentId,
        to: AgentId,
        round: u64,
        payload: Payload,
    ) -> Result<Delivery, RouteError> {
        let envelope = Envelope {
            msg_id: self.next_id,
            from,
            to,
            round,
            payload,
        };
        self.route(envelope)
    }

    /// Everything queued for `agent`, oldest first. Empties the inbox.
    pub fn drain_inbox(&mut self, agent: AgentId) -> Vec<Envelope> {
        let mut out: Vec<Envelope> = self
            .inboxes
            .get_mut(&agent)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default();
        out.sort_by_key(|e| e.msg_id);
        out
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    pub fn take_envelopes(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.envelopes)
    }

    /// Agents currently registered, manager included.
    pub fn agents(&self) -> BTreeSet<AgentId> {
        self.inboxes.keys().copied().collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommsError {
    #[error("group of {0} has no members")]
    EmptyGroup(AgentId),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("command target {0} lies outside the world")]
    OutOfBounds(Position),
}

/// Targets and commands for every executor of a group, conductor first.
pub fn plan_commands(
    task: &SubtaskDirective,
    executors: &[Position],
    bundle: &BackendBundle,
    params: &TargetingParams,
) -> Result<Vec<SubCommand>, CommsError> {
    let targets = assign_targets(task, executors, params);
    let mut commands = Vec::with_capacity(targets.len());
    for p in targets {
        let cmd = bundle.deploy_subcommand(task, p)?;
        // Dry run: every move must stay on the map.
        for step in &cmd.steps {
            if let crate::mlm::ActionStep::MoveTo { target } = step {
                if !params.world.contains(*target) {
                    return Err(CommsError::OutOfBounds(*target));
                }
            }
        }
        commands.push(cmd);
    }
    Ok(commands)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub summary: String,
    pub conductor_command: SubCommand,
    pub envelopes: Vec<Envelope>,
}

/// Summarize what the members reported and hand each of them a command with
/// its own target. The conductor keeps the first command for itself.
#[allow(clippy::too_many_arguments)]
pub fn summarize_and_distribute(
    router: &mut Router,
    conductor: (AgentId, Position),
    members: &[(AgentId, Position)],
    task: &SubtaskDirective,
    member_texts: &[String],
    bundle: &BackendBundle,
    params: &TargetingParams,
    round: u64,
) -> Result<Distribution, CommsError> {
    if members.is_empty() {
        return Err(CommsError::EmptyGroup(conductor.0));
    }
    let summary = bundle.summarize(Some(&task.strategy), member_texts)?;
    let executors: Vec<Position> = std::iter::once(conductor.1)
        .chain(members.iter().map(|m| m.1))
        .collect();
    let mut commands = plan_commands(task, &executors, bundle, params)?.into_iter();
    let conductor_command = commands.next().expect("one command per executor");
    let mut envelopes = Vec::with_capacity(members.len());
    for ((member, _), cmd) in members.iter().zip(commands) {
        let msg_id = router.next_msg_id();
        let envelope = Envelope {
            msg_id,
            from: conductor.0,
            to: *member,
            round,
            payload: Payload::SubCommand(cmd),
        };
        router.route(envelope.clone())?;
        envelopes.push(envelope);
    }
    Ok(Distribution {
        summary,
        conductor_command,
        envelopes,
    })
}

/// Outcome history line used as a critique subject.
pub fn outcome_subject(task: &str, history: &[OutcomeReport]) -> String {
    match history.last() {
        Some(last) => format!("{task}: {last}"),
        None => format!("{task}: no outcome yet"),
    }
}
