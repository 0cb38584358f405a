//! Navigation goals: image, object and audio targets.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Identifier of a goal entity placed in the world.
pub type EntityId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalTarget {
    /// Symbolic stand-in for pixels: the feature tokens an image shows.
    Image { tokens: BTreeSet<String> },
    Object { name: String },
    Audio { source: EntityId },
}

impl GoalTarget {
    pub fn kind(&self) -> GoalKind {
        match self {
            GoalTarget::Image { .. } => GoalKind::Image,
            GoalTarget::Object { .. } => GoalKind::Object,
            GoalTarget::Audio { .. } => GoalKind::Audio,
        }
    }

    /// Whether a cell carrying `annotations` shows this target.
    pub fn matches_annotations<I>(&self, annotations: I, image_match_fraction: f64) -> bool
    where
        I: IntoIterator,
        I::Item: AsRef<str>,
    {
        match self {
            GoalTarget::Object { name } => annotations.into_iter().any(|a| a.as_ref() == name),
            GoalTarget::Audio { source } => {
                let token = audio_source_token(*source);
                annotations.into_iter().any(|a| a.as_ref() == token)
            }
            GoalTarget::Image { tokens } => {
                if tokens.is_empty() {
                    return false;
                }
                let overlap = annotations
                    .into_iter()
                    .filter(|a| tokens.contains(a.as_ref()))
                    .map(|a| a.as_ref().to_string())
                    .collect::<BTreeSet<_>>()
                    .len();
                overlap as f64 >= image_match_fraction * tokens.len() as f64
            }
        }
    }

    /// Tokens naming the target, used to retrieve skills.
    pub fn hint(&self) -> String {
        match self {
            GoalTarget::Image { tokens } => {
                tokens.iter().map(String::as_str).collect::<Vec<_>>().join(" ")
            }
            GoalTarget::Object { name } => name.clone(),
            GoalTarget::Audio { source } => audio_source_token(*source),
        }
    }
}

impl fmt::Display for GoalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoalTarget::Image { tokens } => {
                let t: Vec<&str> = tokens.iter().map(String::as_str).collect();
                write!(f, "image {}", t.join(" "))
            }
            GoalTarget::Object { name } => write!(f, "object {name}"),
            GoalTarget::Audio { source } => write!(f, "audio source {source}"),
        }
    }
}

/// Annotation token marking the cell of an audio source.
pub fn audio_source_token(source: EntityId) -> String {
    format!("audio_source_{source}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    Image,
    Object,
    Audio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub target: GoalTarget,
    pub count: u32,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GoalError {
    #[error("goal payload is empty")]
    EmptyPayload,
    #[error("goal count must be at least 1")]
    ZeroCount,
    #[error("payload does not fit goal kind `{0}`")]
    BadPayload(String),
    #[error("unknown goal kind `{0}`")]
    UnknownKind(String),
}

impl Goal {
    pub fn new(target: GoalTarget, count: u32) -> Result<Self, GoalError> {
        let goal = Self { target, count };
        goal.validate()?;
        Ok(goal)
    }

    pub fn object(name: &str, count: u32) -> Self {
        Self {
            target: GoalTarget::Object {
                name: name.to_string(),
            },
            count,
        }
    }

    pub fn validate(&self) -> Result<(), GoalError> {
        if self.count == 0 {
            return Err(GoalError::ZeroCount);
        }
        match &self.target {
            GoalTarget::Image { tokens } if tokens.is_empty() => Err(GoalError::EmptyPayload),
            GoalTarget::Object { name } if name.trim().is_empty() => Err(GoalError::EmptyPayload),
            _ => Ok(()),
        }
    }

    /// Parse the goal file format `{kind, payload, count}`.
    pub fn from_json(text: &str) -> Result<Self, GoalFileError> {
        let file: GoalFile = serde_json::from_str(text)?;
        Ok(Goal::try_from(file)?)
    }

    pub fn to_file(&self) -> GoalFile {
        let (kind, payload) = match &self.target {
            GoalTarget::Image { tokens } => ("image", serde_json::json!(tokens)),
            GoalTarget::Object { name } => ("object", Value::String(name.clone())),
            GoalTarget::Audio { source } => ("audio", serde_json::json!(source)),
        };
        GoalFile {
            kind: kind.to_string(),
            payload,
            count: self.count,
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "find {} x{}", self.target, self.count)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GoalFileError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Goal(#[from] GoalError),
}

/// On-disk goal document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalFile {
    pub kind: String,
    pub payload: Value,
    #[serde(default = "one")]
    pub count: u32,
}

fn one() -> u32 {
    1
}

impl TryFrom<GoalFile> for Goal {
    type Error = GoalError;

    fn try_from(file: GoalFile) -> Result<Self, GoalError> {
        let bad = || GoalError::BadPayload(file.kind.clone());
        let target = match file.kind.as_str() {
            "image" => {
                let tokens = file
                    .payload
                    .as_array()
                    .ok_or_else(bad)?
                    .iter()
                    .map(|v| v.as_str().map(str::to_string).ok_or_else(bad))
                    .collect::<Result<BTreeSet<_>, _>>()?;
                GoalTarget::Image { tokens }
            }
            "object" => GoalTarget::Object {
                name: file.payload.as_str().ok_or_else(bad)?.to_string(),
            },
            "audio" => {
                let source = file.payload.as_u64().ok_or_else(bad)?;
                GoalTarget::Audio {
                    source: EntityId::try_from(source).map_err(|_| bad())?,
                }
            }
            other => return Err(GoalError::UnknownKind(other.to_string())),
        };
        Goal::new(target, file.count)
    }
}
