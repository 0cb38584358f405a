//! Model backend over HTTP.
//!
//! Each call posts `{role, prompt, schema_hint}` and expects
//! `{"output": <value>}` back. The prompt is the role template followed by
//! the call input as JSON between `INPUT:` and `END INPUT` lines. A response
//! that fails to parse is retried once; a transport failure is not.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::scripted::ScriptedBackend;
use super::{
    Act, ActError, Actor, BackendError, Critic, Critique, Curriculum, DescribeInput, Deployer,
    Describer, MultimodalInfo, OutcomeReport, Plan, PlanRequest, Planner, SkillResolver,
    SubCommand, SubGoal, SubtaskDirective,
};
use crate::geometry::Position;
use crate::map::MapImage;
use crate::memory::{CurriculumLog, SkillLibrary, SkillRecord};
use crate::world::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Planner,
    Describer,
    Summarizer,
    DeployerSubtask,
    DeployerSubcommand,
    CriticManager,
    CriticConductor,
    Actor,
    Curriculum,
}

impl Role {
    pub const ALL: [Role; 9] = [
        Role::Planner,
        Role::Describer,
        Role::Summarizer,
        Role::DeployerSubtask,
        Role::DeployerSubcommand,
        Role::CriticManager,
        Role::CriticConductor,
        Role::Actor,
        Role::Curriculum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Planner => "planner",
            Role::Describer => "describer",
            Role::Summarizer => "summarizer",
            Role::DeployerSubtask => "deployer_subtask",
            Role::DeployerSubcommand => "deployer_subcommand",
            Role::CriticManager => "critic_manager",
            Role::CriticConductor => "critic_conductor",
            Role::Actor => "actor",
            Role::Curriculum => "curriculum",
        }
    }

    pub fn from_name(name: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn template(self) -> &'static str {
        match self {
            Role::Planner => include_str!("../../prompts/v1/planner.txt"),
            Role::Describer => include_str!("../../prompts/v1/describer.txt"),
            Role::Summarizer => include_str!("../../prompts/v1/summarizer.txt"),
            Role::DeployerSubtask => include_str!("../../prompts/v1/deployer_subtask.txt"),
            Role::DeployerSubcommand => include_str!("../../prompts/v1/deployer_subcommand.txt"),
            Role::CriticManager => include_str!("../../prompts/v1/critic_manager.txt"),
            Role::CriticConductor => include_str!("../../prompts/v1/critic_conductor.txt"),
            Role::Actor => include_str!("../../prompts/v1/actor.txt"),
            Role::Curriculum => include_str!("../../prompts/v1/curriculum.txt"),
        }
    }

    fn schema_hint(self) -> &'static str {
        match self {
            Role::Planner => "Plan",
            Role::Describer | Role::Summarizer | Role::Curriculum => "string",
            Role::DeployerSubtask => "SubtaskDirective",
            Role::DeployerSubcommand => "SubCommand",
            Role::CriticManager | Role::CriticConductor => "Critique",
            Role::Actor => "Act",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub role: String,
    pub prompt: String,
    pub schema_hint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub output: Value,
}

const INPUT_OPEN: &str = "INPUT:\n";
const INPUT_CLOSE: &str = "\nEND INPUT";

pub fn build_prompt(role: Role, input: &str) -> String {
    format!("{}\n{INPUT_OPEN}{input}{INPUT_CLOSE}\n", role.template().trim_end())
}

/// The JSON input embedded in a prompt.
pub fn extract_input(prompt: &str) -> Option<&str> {
    let start = prompt.find(INPUT_OPEN)? + INPUT_OPEN.len();
    let end = prompt[start..].rfind(INPUT_CLOSE)? + start;
    Some(&prompt[start..end])
}

#[derive(Serialize, Deserialize)]
pub struct SummarizeCall {
    pub prior: Option<String>,
    pub items: Vec<String>,
}

#[derive(Serialize, Deserialize)]
pub struct SubtaskCall {
    pub info: MultimodalInfo,
    pub subgoal: SubGoal,
    pub strategy: String,
}

#[derive(Serialize, Deserialize)]
pub struct SubcommandCall {
    pub task: SubtaskDirective,
    pub position: Position,
}

#[derive(Serialize, Deserialize)]
pub struct CritiqueCall {
    pub subject: String,
    pub history: Vec<OutcomeReport>,
}

#[derive(Serialize, Deserialize)]
pub struct ActCall {
    pub command: SubCommand,
    pub cursor: usize,
    pub observation: Observation,
    pub skills: Vec<SkillRecord>,
}

#[derive(Serialize, Deserialize)]
pub struct CurriculumCall {
    pub log: CurriculumLog,
    pub map: MapImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

struct Gate {
    busy: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= self.limit {
            busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut busy = self.0.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
pub struct HttpClient {
    config: HttpConfig,
    agent: ureq::Agent,
    gate: Arc<Gate>,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let gate = Arc::new(Gate {
            busy: Mutex::new(0),
            freed: Condvar::new(),
            limit: config.max_in_flight.max(1),
        });
        Self { config, agent, gate }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    pub fn call<I: Serialize, T: DeserializeOwned>(
        &self,
        role: Role,
        input: &I,
    ) -> Result<T, BackendError> {
        let input = serde_json::to_string(input)
            .map_err(|e| BackendError::InvalidInput(e.to_string()))?;
        let request = LlmRequest {
            role: role.name().to_string(),
            prompt: build_prompt(role, &input),
            schema_hint: role.schema_hint().to_string(),
        };
        let _permit = self.gate.acquire();
        let mut detail = String::new();
        for _ in 0..2 {
            let body = match self.agent.post(&self.config.endpoint).send_json(&request) {
                Ok(resp) => resp
                    .into_string()
                    .map_err(|e| BackendError::Unreachable(e.to_string()))?,
                Err(ureq::Error::Status(code, resp)) if (400..500).contains(&code) => {
                    let text = resp.into_string().unwrap_or_default();
                    return Err(BackendError::InvalidInput(format!("HTTP {code}: {text}")));
                }
                Err(ureq::Error::Status(code, _)) => {
                    return Err(BackendError::Unreachable(format!("HTTP status {code}")))
                }
                Err(e) => return Err(BackendError::Unreachable(e.to_string())),
            };
            match serde_json::from_str::<LlmResponse>(&body)
                .and_then(|r| serde_json::from_value::<T>(r.output))
            {
                Ok(v) => return Ok(v),
                Err(e) => detail = e.to_string(),
            }
        }
        Err(BackendError::Malformed {
            role: role.name().to_string(),
            detail,
        })
    }
}

pub struct HttpBackend {
    client: HttpClient,
    local: ScriptedBackend,
}

impl HttpBackend {
    pub fn new(client: HttpClient) -> Self {
        Self {
            client,
            local: ScriptedBackend::default(),
        }
    }
}

impl Planner for HttpBackend {
    fn plan_subgoals(&self, request: &PlanRequest) -> Result<Plan, BackendError> {
        self.client.call(Role::Planner, request)
    }
}

impl Describer for HttpBackend {
    fn describe(&self, input: &DescribeInput) -> Result<String, BackendError> {
        self.client.call(Role::Describer, input)
    }

    fn summarize(&self, prior: Option<&str>, items: &[String]) -> Result<String, BackendError> {
        let call = SummarizeCall {
            prior: prior.map(str::to_string),
            items: items.to_vec(),
        };
        self.client.call(Role::Summarizer, &call)
    }
}

impl Deployer for HttpBackend {
    fn deploy_subtask(
        &self,
        info: &MultimodalInfo,
        subgoal: &SubGoal,
        strategy: &str,
    ) -> Result<SubtaskDirective, BackendError> {
        let call = SubtaskCall {
            info: info.clone(),
            subgoal: subgoal.clone(),
            strategy: strategy.to_string(),
        };
        self.client.call(Role::DeployerSubtask, &call)
    }

    fn deploy_subcommand(
        &self,
        task: &SubtaskDirective,
        position: Position,
    ) -> Result<SubCommand, BackendError> {
        let call = SubcommandCall {
            task: task.clone(),
            position,
        };
        self.client.call(Role::DeployerSubcommand, &call)
    }
}

impl Actor for HttpBackend {
    fn act(
        &self,
        command: &SubCommand,
        cursor: usize,
        observation: &Observation,
        skills: &[SkillRecord],
    ) -> Result<Act, ActError> {
        if cursor >= command.steps.len() {
            return Err(ActError::CommandExhausted);
        }
        let call = ActCall {
            command: command.clone(),
            cursor,
            observation: observation.clone(),
            skills: skills.to_vec(),
        };
        Ok(self.client.call(Role::Actor, &call)?)
    }
}

impl Curriculum for HttpBackend {
    fn propose_next_task(&self, log: &CurriculumLog, map: &MapImage) -> Result<String, BackendError> {
        let call = CurriculumCall {
            log: log.clone(),
            map: map.clone(),
        };
        self.client.call(Role::Curriculum, &call)
    }
}

/// Skill lookup is a similarity ranking and needs no model.
impl SkillResolver for HttpBackend {
    fn resolve(
        &self,
        library: &SkillLibrary,
        query: &[String],
        k: usize,
    ) -> Result<Vec<SkillRecord>, BackendError> {
        self.local.resolve(library, query, k)
    }
}

/// A critic bound to one of the two critic roles.
pub struct HttpCritic {
    backend: Arc<HttpBackend>,
    role: Role,
}

impl HttpCritic {
    pub fn manager(backend: Arc<HttpBackend>) -> Self {
        Self {
            backend,
            role: Role::CriticManager,
        }
    }

    pub fn conductor(backend: Arc<HttpBackend>) -> Self {
        Self {
            backend,
            role: Role::CriticConductor,
        }
    }
}

impl Critic for HttpCritic {
    fn critique(&self, subject: &str, history: &[OutcomeReport]) -> Result<Critique, BackendError> {
        let call = CritiqueCall {
            subject: subject.to_string(),
            history: history.to_vec(),
        };
        self.backend.client.call(self.role, &call)
    }
}
