//! Goal intake, per-agent state buffers and the owner of the shared map.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::goal::{Goal, GoalError, GoalTarget};
use crate::ids::{AgentId, BodyId};
use crate::map::{DynamicMap, MapError, MergeStats, ReportEntry};
use crate::memory::tokenize;
use crate::mlm::{BackendBundle, BackendError, DescribeInput, VisualDescriptor};
use crate::world::{EntityKind, Observation, WorldState};

pub const DEFAULT_STATE_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmittedBy {
    HumanCli,
    ConfigFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalIntake {
    pub goal: Goal,
    pub submitted_by: SubmittedBy,
    pub submitted_at: u64,
    /// Describer tokens for the goal payload.
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub step: u64,
    pub observation_text: String,
    pub observation: Arc<Observation>,
}

/// Per-agent ring buffers of recorded states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStore {
    capacity: usize,
    buffers: BTreeMap<BodyId, VecDeque<StateRecord>>,
}

impl StateStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            buffers: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn history(&self, body: BodyId) -> Option<&VecDeque<StateRecord>> {
        self.buffers.get(&body)
    }

    pub fn latest(&self, body: BodyId) -> Option<&StateRecord> {
        self.buffers.get(&body).and_then(|b| b.back())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlatformError {
    #[error("invalid goal: {0}")]
    InvalidGoal(String),
    #[error("a run is already in progress")]
    RunInProgress,
    #[error("unknown agent {0}")]
    UnknownAgent(BodyId),
    #[error("state for {body} at step {step} does not follow step {last}")]
    StaleStep { body: BodyId, step: u64, last: u64 },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl From<GoalError> for PlatformError {
    fn from(e: GoalError) -> Self {
        PlatformError::InvalidGoal(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Platform {
    map: DynamicMap,
    store: StateStore,
    intake: Option<GoalIntake>,
}

impl Platform {
    pub fn new(width: u32, height: u32, capacity: usize) -> Self {
        Self {
            map: DynamicMap::new(width, height),
            store: StateStore::new(capacity),
            intake: None,
        }
    }

    pub fn map(&self) -> &DynamicMap {
        &self.map
    }

    pub fn store(&self) -> &StateStore {
        &self.store
    }

    pub fn intake(&self) -> Option<&GoalIntake> {
        self.intake.as_ref()
    }

    /// Make `body` live with an empty buffer.
    pub fn register(&mut self, body: BodyId) {
        self.store.buffers.entry(body).or_default();
    }

    /// Validate and accept the run's goal.
    pub fn submit_goal(
        &mut self,
        goal: Goal,
        submitted_by: SubmittedBy,
        world: &WorldState,
        bundle: &BackendBundle,
    ) -> Result<&GoalIntake, PlatformError> {
        if self.intake.is_some() {
            return Err(PlatformError::RunInProgress);
        }
        goal.validate()?;
        if let GoalTarget::Audio { source } = goal.target {
            let known = world
                .entity(source)
                .is_some_and(|e| matches!(e.kind, EntityKind::Audio { .. }));
            if !known {
                return Err(PlatformError::InvalidGoal(format!(
                    "no audio source with id {source}"
                )));
            }
        }
        let descriptor = match &goal.target {
            GoalTarget::Image { tokens } => VisualDescriptor::image(tokens.iter().cloned()),
            GoalTarget::Audio { .. } => VisualDescriptor::audio([goal.target.hint()]),
            GoalTarget::Object { name } => VisualDescriptor::image([name.clone()]),
        };
        let tags = tokenize(&bundle.describe(&DescribeInput::Visual(descriptor))?);
        self.intake = Some(GoalIntake {
            goal,
            submitted_by,
            submitted_at: world.clock,
            tags,
        });
        Ok(self.intake.as_ref().expect("just set"))
    }

    /// Close the active run so another goal can be submitted.
    pub fn finish_run(&mut self) -> Option<GoalIntake> {
        self.intake.take()
    }

    /// Store one agent state and merge what it saw into the map.
    pub fn record_state(
        &mut self,
        agent: AgentId,
        observation: &Observation,
        described_text: &str,
    ) -> Result<MergeStats, PlatformError> {
        let body = observation.agent;
        let capacity = self.store.capacity;
        let buffer = self
            .store
            .buffers
            .get_mut(&body)
            .ok_or(PlatformError::UnknownAgent(body))?;
        if let Some(last) = buffer.back() {
            if observation.step <= last.step {
                return Err(PlatformError::StaleStep {
                    body,
                    step: observation.step,
                    last: last.step,
                });
            }
        }
        let stats = self
            .map
            .merge_report(&ReportEntry::from_observation(agent, observation))?;
        if buffer.len() == capacity {
            buffer.pop_front();
        }
        buffer.push_back(StateRecord {
            step: observation.step,
            observation_text: described_text.to_string(),
            observation: Arc::new(observation.clone()),
        });
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Position;
    use crate::mlm::scripted::ScriptedConfig;
    use crate::world::{generate_world, AgentProperties, GoalPlacement, SensedCell, WorldConfig};

    fn obs(body: u32, step: u64, token: Option<&str>) -> Observation {
        Observation {
            agent: BodyId(body),
            vision: vec![SensedCell {
                pos: Position::new(3, 3),
                annotations: token.map(|t| vec![t.to_string()]).unwrap_or_default(),
            }],
            audio: vec![],
            properties: AgentProperties {
                position: Position::new(3, 3),
                inventory: vec![],
                group_id: None,
            },
            step,
        }
    }

    fn world() -> WorldState {
        let cfg = WorldConfig {
            width: 32,
            height: 32,
            goal_spec: vec![GoalPlacement {
                entity: EntityKind::Audio { label: None },
                position: Some(Position::new(5, 5)),
                copies: 1,
            }],
            ..WorldConfig::default()
        };
        generate_world(&cfg).unwrap()
    }

    #[test]
    fn goal_intake_rules() {
        let w = world();
        let bundle = BackendBundle::scripted(ScriptedConfig::default());
        let mut p = Platform::new(32, 32, 4);
        let audio = w.entities()[0].id;
        let bad = Goal { target: GoalTarget::Audio { source: audio + 100 }, count: 1 };
        assert!(matches!(
            p.submit_goal(bad, SubmittedBy::ConfigFile, &w, &bundle),
            Err(PlatformError::InvalidGoal(_))
        ));
        let image = Goal {
            target: GoalTarget::Image {
                tokens: ["red", "roof", "stone", "door"].iter().map(|s| s.to_string()).collect(),
            },
            count: 1,
        };
        let intake = p.submit_goal(image, SubmittedBy::HumanCli, &w, &bundle).unwrap();
        assert_eq!(intake.tags, vec!["image", "door", "red", "roof", "stone"]);
        assert_eq!(
            p.submit_goal(Goal::object("village", 1), SubmittedBy::HumanCli, &w, &bundle),
            Err(PlatformError::RunInProgress)
        );
        p.finish_run();
        assert!(p
            .submit_goal(Goal::object("village", 1), SubmittedBy::HumanCli, &w, &bundle)
            .is_ok());
    }

    #[test]
    fn ring_buffer_and_map_merge() {
        let mut p = Platform::new(8, 8, 2);
        let agent = AgentId::sub_agent(BodyId(1));
        assert_eq!(
            p.record_state(agent, &obs(1, 0, None), "t"),
            Err(PlatformError::UnknownAgent(BodyId(1)))
        );
        p.register(BodyId(1));
        p.record_state(agent, &obs(1, 0, None), "t").unwrap();
        assert_eq!(p.store().history(BodyId(1)).unwrap().len(), 1);
        assert!(matches!(
            p.record_state(agent, &obs(1, 0, None), "t"),
            Err(PlatformError::StaleStep { .. })
        ));
        p.record_state(agent, &obs(1, 1, None), "t").unwrap();
        p.record_state(agent, &obs(1, 2, Some("pyramid")), "t").unwrap();
        let h = p.store().history(BodyId(1)).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.front().unwrap().step, 1);
        let cell = p.map().get(Position::new(3, 3)).unwrap();
        assert_eq!(cell.annotations, vec!["pyramid"]);
    }
}
