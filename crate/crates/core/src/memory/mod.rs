//! Multi-modal key-value memory.
//!
//! Keys are the task text plus a text descriptor of the observation the
//! task was solved under; values are plans that executed successfully.
//! Retrieval scores every entry by cosine similarity against the query
//! (visual and audio queries are transcribed to text first) and returns the
//! top k, which are then laid out as demonstrations for the planner.

mod curriculum;
mod similarity;
mod skills;

pub use curriculum::{compact_log, CurriculumLog, Episode, EpisodeResult, HeadSummary};
pub use similarity::{normalize, similarity, tokenize};
pub use skills::{
    ActionTemplate, SkillError, SkillLibrary, SkillParam, SkillRecord, SlotType,
};

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::mlm::{BackendError, DescribeInput, Describer, Plan, VisualDescriptor};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    #[default]
    Success,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: u64,
    pub task_text: String,
    pub obs_descriptor: Vec<String>,
    pub plan: Plan,
    #[serde(skip)]
    pub outcome: Outcome,
    pub created_step: u64,
}

impl MemoryEntry {
    /// Key tokens: task text together with the observation descriptor.
    pub fn key_tokens(&self) -> Vec<String> {
        let mut key = tokenize(&self.task_text);
        key.extend(normalize(&self.obs_descriptor));
        key
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScore {
    pub entry_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub entry: MemoryEntry,
    pub score: RetrievalScore,
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("refusing to store an empty plan")]
    EmptyPlan,
    #[error("memory file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("memory file {path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("memory file ids are not strictly increasing at id {0}")]
    NonMonotoneId(u64),
}

/// Append-only store. With a backing file, each new entry is appended as
/// one JSON line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
    next_id: u64,
    file: Option<PathBuf>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Open (or create) a JSONL-backed store.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref().to_path_buf();
        let mut store = if path.exists() {
            Self::load_jsonl(&path)?
        } else {
            Self::new()
        };
        store.file = Some(path);
        Ok(store)
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        let io = |source| MemoryError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut store = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: MemoryEntry =
                serde_json::from_str(&line).map_err(|source| MemoryError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })?;
            if !store.entries.is_empty() && entry.id < store.next_id {
                return Err(MemoryError::NonMonotoneId(entry.id));
            }
            store.next_id = entry.id + 1;
            store.entries.push(entry);
        }
        Ok(store)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), MemoryError> {
        let path = path.as_ref();
        let io = |source| MemoryError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = File::create(path).map_err(io)?;
        for e in &self.entries {
            writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes")).map_err(io)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&MemoryEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn store_success(
        &mut self,
        task_text: &str,
        obs_descriptor: Vec<String>,
        plan: Plan,
        created_step: u64,
    ) -> Result<u64, MemoryError> {
        if plan.subgoals.is_empty() {
            return Err(MemoryError::EmptyPlan);
        }
        let entry = MemoryEntry {
            id: self.next_id,
            task_text: task_text.to_string(),
            obs_descriptor,
            plan,
            outcome: Outcome::Success,
            created_step,
        };
        if let Some(path) = &self.file {
            let io = |source| MemoryError::Io {
                path: path.clone(),
                source,
            };
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io)?;
            writeln!(f, "{}", serde_json::to_string(&entry).expect("entry serializes"))
                .map_err(io)?;
        }
        self.next_id += 1;
        self.entries.push(entry);
        Ok(self.next_id - 1)
    }

    /// Score every entry against already-tokenized query text.
    pub fn rank(&self, query: &[String], k: usize) -> Vec<Retrieved> {
        let mut scored: Vec<Retrieved> = self
            .entries
            .iter()
            .map(|e| Retrieved {
                score: RetrievalScore {
                    entry_id: e.id,
                    score: similarity(query, &e.key_tokens()),
                },
                entry: e.clone(),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .score
                .total_cmp(&a.score.score)
                .then(a.score.entry_id.cmp(&b.score.entry_id))
        });
        scored.truncate(k);
        scored
    }
}

/// Top-k retrieval with a multi-modal query. A visual (or audio) query is
/// transcribed to text by the describer and joined with the text query.
pub fn retrieve_topk(
    store: &MemoryStore,
    query_text: &[String],
    query_visual: Option<&VisualDescriptor>,
    k: usize,
    describer: &dyn Describer,
) -> Result<Vec<Retrieved>, BackendError> {
    let mut query = normalize(query_text);
    if let Some(v) = query_visual {
        query.extend(tokenize(&describer.describe(&DescribeInput::Visual(v.clone()))?));
    }
    Ok(store.rank(&query, k))
}

/// Retrieved demonstrations laid out for the planning backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub text: String,
    pub demonstrations: usize,
}

pub fn augment_plan_context(retrieved: &[Retrieved], instruction: &str) -> PromptContext {
    let mut text = format!("instruction: {instruction}\n");
    for (rank, r) in retrieved.iter().enumerate() {
        text.push_str(&format!(
            "memory rank {} (id {}, score {:.4}): task: {} | observation: {} | plan: {}\n",
            rank + 1,
            r.entry.id,
            r.score.score,
            r.entry.task_text,
            r.entry.obs_descriptor.join(" "),
            r.entry.plan.summary()
        ));
    }
    PromptContext {
        text,
        demonstrations: retrieved.len(),
    }
}
