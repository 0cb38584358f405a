//! Agent identities.
//!
//! A `BodyId` names a physical agent in the world. Its role is fluid: the
//! auto-organizer can turn a body into a conductor in one round and a
//! sub-agent in the next. `AgentId` is the role-qualified name used on the
//! message bus; its index is the body index, so indices are unique per tier.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BodyId(pub u32);

impl fmt::Display for BodyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "body-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Manager,
    Conductor,
    SubAgent,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Manager, Tier::Conductor, Tier::SubAgent];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId {
    pub tier: Tier,
    pub index: u32,
}

impl AgentId {
    pub const MANAGER: AgentId = AgentId {
        tier: Tier::Manager,
        index: 0,
    };

    pub fn conductor(body: BodyId) -> Self {
        Self {
            tier: Tier::Conductor,
            index: body.0,
        }
    }

    pub fn sub_agent(body: BodyId) -> Self {
        Self {
            tier: Tier::SubAgent,
            index: body.0,
        }
    }

    /// The physical body behind a conductor or sub-agent.
    pub fn body(&self) -> Option<BodyId> {
        match self.tier {
            Tier::Manager => None,
            _ => Some(BodyId(self.index)),
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tier {
            Tier::Manager => f.write_str("manager"),
            Tier::Conductor => write!(f, "conductor-{}", self.index),
            Tier::SubAgent => write!(f, "sub-{}", self.index),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed agent id `{0}`")]
pub struct ParseAgentIdError(String);

impl FromStr for AgentId {
    type Err = ParseAgentIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "manager" {
            return Ok(AgentId::MANAGER);
        }
        let bad = || ParseAgentIdError(s.to_string());
        let (tier, idx) = if let Some(rest) = s.strip_prefix("conductor-") {
            (Tier::Conductor, rest)
        } else if let Some(rest) = s.strip_prefix("sub-") {
            (Tier::SubAgent, rest)
        } else {
            return Err(bad());
        };
        let index = idx.parse().map_err(|_| bad())?;
        Ok(AgentId { tier, index })
    }
}

impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
