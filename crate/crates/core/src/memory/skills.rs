//! Named action macros the conductor can retrieve and splice into commands.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::similarity::{normalize, similarity};
use crate::geometry::{Position, Rect};
use crate::mlm::ActionStep;
use crate::world::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotType {
    Position,
    Token,
    Count,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillParam {
    pub name: String,
    pub slot: SlotType,
}

/// Primitive step template, resolved against the observation that fired it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ActionTemplate {
    /// Move onto the cell that satisfied the trigger.
    MoveToTrigger,
    MoveOffset { dx: i32, dy: i32 },
    Scan,
    ReportMap,
    /// Pick up the first trigger token.
    PickUpTrigger,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub name: String,
    #[serde(default)]
    pub parameters: Vec<SkillParam>,
    pub body: Vec<ActionTemplate>,
    pub description: Vec<String>,
    /// Tokens that must all annotate one visible cell for the skill to fire.
    #[serde(default)]
    pub trigger: Vec<String>,
}

impl SkillRecord {
    /// Visible cell carrying every trigger token, skipping `exclude`, that
    /// lies nearest `anchor` (Chebyshev; ties by distance to the agent, then
    /// row-major). An empty trigger never fires.
    pub fn trigger_cell(
        &self,
        obs: &Observation,
        exclude: &[Position],
        anchor: Position,
    ) -> Option<Position> {
        if self.trigger.is_empty() {
            return None;
        }
        let me = obs.properties.position;
        obs.vision
            .iter()
            .filter(|c| !exclude.contains(&c.pos))
            .filter(|c| self.trigger.iter().all(|t| c.annotations.contains(t)))
            .map(|c| c.pos)
            .min_by_key(|p| (p.chebyshev(anchor), p.chebyshev(me), *p))
    }

    /// The concrete macro for this observation, if the trigger holds.
    pub fn expand(
        &self,
        obs: &Observation,
        exclude: &[Position],
        anchor: Position,
    ) -> Option<Vec<ActionStep>> {
        let at = self.trigger_cell(obs, exclude, anchor)?;
        let view = vision_rect(obs);
        let me = obs.properties.position;
        Some(
            self.body
                .iter()
                .map(|t| match t {
                    ActionTemplate::MoveToTrigger => ActionStep::MoveTo { target: at },
                    ActionTemplate::MoveOffset { dx, dy } => ActionStep::MoveTo {
                        target: view.clamp(Position::new(me.x + dx, me.y + dy)),
                    },
                    ActionTemplate::Scan => ActionStep::Scan,
                    ActionTemplate::ReportMap => ActionStep::ReportMap,
                    ActionTemplate::PickUpTrigger => ActionStep::PickUp {
                        item: self.trigger[0].clone(),
                    },
                    ActionTemplate::Idle => ActionStep::Idle,
                })
                .collect(),
        )
    }
}

fn vision_rect(obs: &Observation) -> Rect {
    let me = obs.properties.position;
    let (mut lo, mut hi) = (me, me);
    for c in &obs.vision {
        lo = Position::new(lo.x.min(c.pos.x), lo.y.min(c.pos.y));
        hi = Position::new(hi.x.max(c.pos.x), hi.y.max(c.pos.y));
    }
    Rect::spanning(lo, hi)
}

#[derive(Debug, thiserror::Error)]
pub enum SkillError {
    #[error("skill `{0}` already exists")]
    DuplicateName(String),
    #[error("skill `{0}` has an empty body")]
    EmptyBody(String),
    #[error("skill library: {0}")]
    Io(#[from] std::io::Error),
    #[error("skill library: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkillLibrary {
    skills: Vec<SkillRecord>,
}

impl SkillLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Macros for the landmarks and blocks the task families care about.
    pub fn builtin() -> Self {
        let mut lib = Self::new();
        let approach = |name: &str, token: &str, finish: ActionTemplate| SkillRecord {
            name: name.to_string(),
            parameters: vec![SkillParam {
                name: "target".into(),
                slot: SlotType::Position,
            }],
            body: vec![ActionTemplate::MoveToTrigger, finish, ActionTemplate::ReportMap],
            description: normalize(&[format!("approach the {token} {token} and inspect it")]),
            trigger: vec![token.to_string()],
        };
        for (name, token) in [
            ("approach_village", "village"),
            ("approach_pyramid", "pyramid"),
            ("approach_animal", "animal"),
        ] {
            lib.add(approach(name, token, ActionTemplate::Scan))
                .expect("builtin skills are unique");
        }
        lib.add(approach(
            "collect_diamond",
            "diamond_block",
            ActionTemplate::PickUpTrigger,
        ))
        .expect("builtin skills are unique");
        lib
    }

    pub fn add(&mut self, skill: SkillRecord) -> Result<(), SkillError> {
        if skill.body.is_empty() {
            return Err(SkillError::EmptyBody(skill.name));
        }
        if self.skills.iter().any(|s| s.name == skill.name) {
            return Err(SkillError::DuplicateName(skill.name));
        }
        self.skills.push(skill);
        Ok(())
    }

    pub fn skills(&self) -> &[SkillRecord] {
        &self.skills
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, SkillError> {
        let records: Vec<SkillRecord> = serde_json::from_str(text)?;
        let mut lib = Self::new();
        for r in records {
            lib.add(r)?;
        }
        Ok(lib)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SkillError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.skills).expect("skills serialize")
    }

    /// Top-k skills by description similarity; ties keep library order.
    pub fn lookup_skill(&self, query: &[String], k: usize) -> Vec<(SkillRecord, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .skills
            .iter()
            .enumerate()
            .map(|(i, s)| (i, similarity(query, &s.description)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
            .into_iter()
            .take(k)
            .map(|(i, score)| (self.skills[i].clone(), score))
            .collect()
    }

    /// Names of all skills with at least one trigger token.
    pub fn trigger_vocabulary(&self) -> BTreeSet<&str> {
        self.skills
            .iter()
            .flat_map(|s| s.trigger.iter().map(String::as_str))
            .collect()
    }
}
