//! JSONL run trace.

use serde::{Deserialize, Serialize};

use crate::ids::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupState {
    Forming,
    Executing,
    Done,
    Revising,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub id: u32,
    pub conductor: AgentId,
    pub members: Vec<AgentId>,
    pub subgoal: String,
    pub state: GroupState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub agent: AgentId,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsDelta {
    /// Explored cells after the round.
    pub area: usize,
    pub new_cells: usize,
    /// Distinct target cells first reached this round.
    pub found: usize,
    pub found_total: usize,
    pub goal_satisfied: bool,
    pub backend_calls: u64,
}

/// What one tick did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub groups: Vec<GroupRecord>,
    pub actions: Vec<ActionRecord>,
    pub map_version: u64,
    pub metrics_delta: MetricsDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub task: String,
    pub agents: usize,
    pub backend: String,
    pub ablation: Vec<String>,
    pub max_iters: u64,
    pub spawn: String,
    pub area_target: usize,
    pub block_target: usize,
    /// Iterations after which the area metric is read.
    pub area_window: u64,
    pub seeds: Vec<u64>,
    pub trials_per_seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStart {
    pub trial: usize,
    pub seed: u64,
    /// Explored cells before the first tick.
    pub initial_area: usize,
    pub initial_found: usize,
    /// Backend calls spent during bootstrap.
    pub backend_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub trial: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub body: RoundRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEnd {
    pub trial: usize,
    pub seed: u64,
    /// Backend calls over the whole trial, including any failed round.
    pub backend_calls: u64,
    /// Why the trial stopped early, if it failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Run(RunHeader),
    Trial(TrialStart),
    Tick(TickRecord),
    TrialEnd(TrialEnd),
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}
