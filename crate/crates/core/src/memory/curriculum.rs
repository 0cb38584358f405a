//! Curriculum episode log with budgeted summarization.

use serde::{Deserialize, Serialize};

use super::similarity::tokenize;
use crate::mlm::{BackendError, Describer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeResult {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub proposed_task: String,
    pub result: EpisodeResult,
    pub summary_text: String,
}

/// Digest of the oldest episodes after they were folded away.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub folded: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurriculumLog {
    pub head: Option<HeadSummary>,
    pub episodes: Vec<Episode>,
    pub token_budget: usize,
}

impl CurriculumLog {
    pub fn new(token_budget: usize) -> Self {
        Self {
            token_budget,
            ..Self::default()
        }
    }

    pub fn push(&mut self, episode: Episode) {
        self.episodes.push(episode);
    }

    /// Summary tokens held by retained episodes (the head is not counted).
    pub fn summary_tokens(&self) -> usize {
        self.episodes
            .iter()
            .map(|e| tokenize(&e.summary_text).len())
            .sum()
    }

    pub fn succeeded(&self, task: &str) -> bool {
        self.episodes
            .iter()
            .any(|e| e.proposed_task == task && e.result == EpisodeResult::Success)
            || self
                .head
                .as_ref()
                .is_some_and(|h| h.text.contains(&format!("[ok] {task};")))
    }
}

/// Fold the oldest episodes into the head summary, one at a time, until the
/// retained summaries fit the budget. Order of retained episodes is kept.
pub fn compact_log(
    log: &CurriculumLog,
    summarizer: &dyn Describer,
) -> Result<CurriculumLog, BackendError> {
    let mut out = log.clone();
    let mut total = out.summary_tokens();
    let mut fold = 0;
    while total > out.token_budget && fold < out.episodes.len() {
        total -= tokenize(&out.episodes[fold].summary_text).len();
        fold += 1;
    }
    if fold == 0 {
        return Ok(out);
    }
    let mut head = out.head.take();
    for ep in out.episodes.drain(..fold) {
        let prior = head.as_ref().map(|h: &HeadSummary| h.text.as_str());
        let marker = match ep.result {
            EpisodeResult::Success => "ok",
            EpisodeResult::Failure => "fail",
        };
        let item = format!("[{marker}] {}; {}", ep.proposed_task, ep.summary_text);
        let text = summarizer.summarize(prior, &[item])?;
        head = Some(HeadSummary {
            folded: head.map_or(0, |h| h.folded) + 1,
            text,
        });
    }
    out.head = head;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlm::scripted::ScriptedBackend;

    fn log_of(n: usize, budget: usize) -> CurriculumLog {
        let mut log = CurriculumLog::new(budget);
        for i in 0..n {
            log.push(Episode {
                proposed_task: format!("task {i}"),
                result: if i % 2 == 0 { EpisodeResult::Success } else { EpisodeResult::Failure },
                summary_text: format!("explored region {i} found nothing new"),
            });
        }
        log
    }

    #[test]
    fn within_budget_is_unchanged() {
        let log = log_of(3, 1000);
        assert_eq!(compact_log(&log, &ScriptedBackend::default()).unwrap(), log);
    }

    #[test]
    fn zero_budget_folds_everything() {
        let out = compact_log(&log_of(4, 0), &ScriptedBackend::default()).unwrap();
        assert!(out.episodes.is_empty());
        assert_eq!(out.head.as_ref().unwrap().folded, 4);
    }

    #[test]
    fn folds_oldest_and_keeps_tail() {
        // Each summary is 6 tokens; 10 episodes = 60 tokens, budget 36 forces 4 folds.
        let log = log_of(10, 36);
        let out = compact_log(&log, &ScriptedBackend::default()).unwrap();
        assert_eq!(out.head.as_ref().unwrap().folded, 4);
        assert_eq!(out.episodes, log.episodes[4..].to_vec());
        assert!(out.summary_tokens() <= 36);
        assert!(out.succeeded("task 0"));
        // Compacting again is a no-op.
        assert_eq!(compact_log(&out, &ScriptedBackend::default()).unwrap(), out);
    }
}
