//! Deterministic heuristic backend.
//!
//! Every operation is a pure function of its inputs and the config, so
//! repeated runs are byte-identical. The planner clusters the map frontier
//! (k-means seeded by farthest-point sampling) into explore regions, or
//! targets goal sightings directly once the map shows them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    Act, ActError, ActionStep, Actor, BackendError, Critic, Critique, Curriculum, DescribeInput,
    Deployer, Describer, MultimodalInfo, OutcomeReport, Plan, PlanRequest, PlanSource, Planner,
    SkillResolver, Splice, SubCommand, SubGoal, SubGoalKind, SubtaskDirective, MAX_AGENTS,
};
use crate::geometry::{Position, Rect};
use crate::goal::GoalTarget;
use crate::map::MapImage;
use crate::memory::{tokenize, CurriculumLog, SkillLibrary, SkillRecord};
use crate::world::Observation;

/// Curriculum ladder, easiest first.
pub const LADDER: [&str; 4] = [
    "explore 100 cells",
    "find any object goal",
    "find 3 blocks",
    "composite search",
];
pub const FREE_EXPLORE: &str = "free explore";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedConfig {
    /// Frontier cells per explore cluster.
    pub area_quota: usize,
    /// Cells added around a frontier cluster to form its explore region.
    pub explore_margin: u32,
    /// Consecutive stalled rounds before the critic asks for a revision.
    pub stall_window: usize,
    /// Side of the fallback region at the origin.
    pub origin_extent: u32,
    /// Half-size of the search area placed around a sighting.
    pub search_radius: u32,
    pub kmeans_rounds: usize,
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        Self {
            area_quota: 32,
            explore_margin: 16,
            stall_window: 3,
            origin_extent: 32,
            search_radius: 2,
            kmeans_rounds: 6,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    pub config: ScriptedConfig,
}

impl ScriptedBackend {
    pub fn new(config: ScriptedConfig) -> Self {
        Self { config }
    }
}

pub fn intensity_band(intensity: f64) -> &'static str {
    if intensity < 0.33 {
        "faint"
    } else if intensity < 0.66 {
        "clear"
    } else {
        "loud"
    }
}

fn dist2(a: Position, b: Position) -> i64 {
    let dx = i64::from(a.x - b.x);
    let dy = i64::from(a.y - b.y);
    dx * dx + dy * dy
}

fn centroid(points: &[Position]) -> Option<Position> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as i64;
    let sx: i64 = points.iter().map(|p| i64::from(p.x)).sum();
    let sy: i64 = points.iter().map(|p| i64::from(p.y)).sum();
    Some(Position::new((sx / n) as i32, (sy / n) as i32))
}

/// Partition `points` into at most `k` clusters, nearest to `anchor` first.
pub fn cluster_frontier(
    points: &[Position],
    k: usize,
    anchor: Position,
    rounds: usize,
) -> Vec<Vec<Position>> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let first = *points
        .iter()
        .min_by_key(|p| (dist2(**p, anchor), **p))
        .expect("non-empty");
    let mut seeds = vec![first];
    let mut nearest: Vec<i64> = points.iter().map(|p| dist2(*p, first)).collect();
    while seeds.len() < k {
        let (idx, _) = points
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                nearest[*ia]
                    .cmp(&nearest[*ib])
                    .then_with(|| b.cmp(a))
            })
            .expect("non-empty");
        let pick = points[idx];
        if nearest[idx] == 0 {
            break;
        }
        seeds.push(pick);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(*p, pick));
        }
    }

    let mut centers: Vec<(f64, f64)> = seeds
        .iter()
        .map(|p| (f64::from(p.x), f64::from(p.y)))
        .collect();
    let assign = |centers: &[(f64, f64)]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                let (px, py) = (f64::from(p.x), f64::from(p.y));
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, &(cx, cy)) in centers.iter().enumerate() {
                    let d = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..rounds {
        let mut sums = vec![(0.0, 0.0, 0usize); centers.len()];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l].0 += f64::from(p.x);
            sums[l].1 += f64::from(p.y);
            sums[l].2 += 1;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }

    let mut clusters: Vec<Vec<Position>> = vec![Vec::new(); centers.len()];
    for (p, &l) in points.iter().zip(&labels) {
        clusters[l].push(*p);
    }
    clusters.retain(|c| !c.is_empty());
    for c in &mut clusters {
        c.sort();
    }
    clusters.sort_by_key(|c| {
        let mid = centroid(c).expect("non-empty");
        (dist2(mid, anchor), c[0])
    });
    clusters
}

fn bounding_rect(points: &[Position]) -> Rect {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = Position::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Position::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    Rect::spanning(lo, hi)
}

impl ScriptedBackend {
    fn sightings(&self, req: &PlanRequest, target: &GoalTarget) -> Vec<Position> {
        let found: BTreeSet<Position> = req.status.found.iter().copied().collect();
        let targeted: BTreeSet<Position> =
            req.status.active.iter().filter_map(SubGoal::focus).collect();
        req.map
            .annotated_cells()
            .into_iter()
            .filter(|(p, _)| !found.contains(p) && !targeted.contains(p))
            .filter(|(_, toks)| target.matches_annotations(toks, req.image_match_fraction))
            .map(|(p, _)| p)
            .collect()
    }
}

impl Planner for ScriptedBackend {
    fn plan_subgoals(&self, req: &PlanRequest) -> Result<Plan, BackendError> {
        let cfg = &self.config;
        let world = req.map.bounds;
        let max = req.max_subgoals.clamp(1, MAX_AGENTS);
        let anchor = centroid(&req.status.anchors).unwrap_or_else(|| world.center());
        let mut subgoals: Vec<SubGoal> = Vec::new();
        let mut notes: Vec<String> = Vec::new();
        let mut next_id = req.first_id;
        let mut push = |subgoals: &mut Vec<SubGoal>, kind: SubGoalKind, strategy: String| {
            subgoals.push(SubGoal {
                id: next_id,
                kind,
                quantity: 1,
                suggested_strategy: strategy,
            });
            next_id += 1;
        };

        let mut remaining = usize::MAX;
        if let Some(goal) = &req.goal {
            remaining = (goal.count as usize)
                .saturating_sub(req.status.found.len())
                .max(1);
            let mut sightings = self.sightings(req, &goal.target);
            sightings.sort_by_key(|p| (dist2(*p, anchor), *p));
            for s in sightings.iter().take(remaining.min(max)) {
                let area = Rect::window(*s, cfg.search_radius).intersect(&world);
                push(
                    &mut subgoals,
                    SubGoalKind::Search {
                        area,
                        target: goal.target.clone(),
                        focus: Some(*s),
                    },
                    format!("go to {s} and confirm the {}", goal.target),
                );
            }
            if !sightings.is_empty() {
                notes.push(format!("{} sighting(s) of {}", sightings.len(), goal.target));
            }
            if let (true, GoalTarget::Audio { source }) = (subgoals.is_empty(), &goal.target) {
                let loudest = req
                    .status
                    .heard
                    .iter()
                    .filter(|h| h.source == *source)
                    .max_by(|a, b| {
                        a.intensity
                            .total_cmp(&b.intensity)
                            .then_with(|| b.listener.cmp(&a.listener))
                    });
                if let Some(h) = loudest {
                    let distance = req.perceptible_radius_audio * (1.0 - h.intensity);
                    let radius = distance.ceil() as u32 + 1;
                    let area = Rect::window(h.listener, radius).intersect(&world);
                    let active_areas: Vec<Rect> =
                        req.status.active.iter().filter_map(SubGoal::region).collect();
                    let unexplored = area.cells().any(|p| !req.map.is_explored(p));
                    if unexplored && !active_areas.contains(&area) {
                        push(
                            &mut subgoals,
                            SubGoalKind::Search {
                                area,
                                target: goal.target.clone(),
                                focus: None,
                            },
                            format!(
                                "sweep around {} where the source sounded {} (~{distance:.0} cells)",
                                h.listener,
                                intensity_band(h.intensity)
                            ),
                        );
                        notes.push(format!("audio heard at {}", h.listener));
                    }
                }
            }
        }

        let wants_more = subgoals.len() < max && (req.goal.is_none() || subgoals.len() < remaining);
        if wants_more {
            let frontier = req.map.frontier();
            let blocked: Vec<Rect> = req.status.active.iter().filter_map(SubGoal::region).collect();
            let free: Vec<Position> = frontier
                .iter()
                .copied()
                .filter(|p| !blocked.iter().any(|r| r.contains(*p)))
                .collect();
            let pool = if free.is_empty() { frontier } else { free };
            if !pool.is_empty() {
                let slots = max - subgoals.len();
                let k = slots.min(pool.len().div_ceil(cfg.area_quota.max(1))).max(1);
                let clusters = cluster_frontier(&pool, k, anchor, cfg.kmeans_rounds);
                notes.push(format!("{} frontier cells in {} cluster(s)", pool.len(), clusters.len()));
                for c in clusters {
                    let region = bounding_rect(&c).expand(cfg.explore_margin).intersect(&world);
                    let strategy = format!("sweep outward from the frontier near {}", c[c.len() / 2]);
                    push(&mut subgoals, SubGoalKind::Explore { region }, strategy);
                }
            }
        }

        if subgoals.is_empty() && req.map.explored_count() == 0 && !req.status.anchors.is_empty() {
            notes.push("no map; surveying around each agent".into());
            for a in req.status.anchors.iter().take(max) {
                let region = Rect::window(*a, cfg.origin_extent * 2).intersect(&world);
                push(
                    &mut subgoals,
                    SubGoalKind::Explore { region },
                    format!("survey outward from {a}"),
                );
            }
        }
        if subgoals.is_empty() {
            let region = Rect::sized(cfg.origin_extent, cfg.origin_extent).intersect(&world);
            notes.push("no frontier and no sighting; falling back to the origin region".into());
            push(
                &mut subgoals,
                SubGoalKind::Explore { region },
                "re-survey the origin region".into(),
            );
        }

        Ok(Plan {
            subgoals,
            rationale: notes.join("; "),
            source: if req.memory_context.demonstrations > 0 {
                PlanSource::MemoryAugmented
            } else {
                PlanSource::Fresh
            },
        })
    }
}

impl Describer for ScriptedBackend {
    fn describe(&self, input: &DescribeInput) -> Result<String, BackendError> {
        Ok(match input {
            DescribeInput::Observation(obs) => describe_observation(obs),
            DescribeInput::Map(img) => describe_map(img),
            DescribeInput::Visual(v) => {
                let modality = match v.modality {
                    super::Modality::Image => "image",
                    super::Modality::Audio => "audio",
                };
                let mut toks: Vec<&str> = v.tokens.iter().map(String::as_str).collect();
                toks.sort_unstable();
                format!("{modality}: {}", toks.join(" "))
            }
        })
    }

    fn summarize(&self, prior: Option<&str>, items: &[String]) -> Result<String, BackendError> {
        let mut parts: Vec<String> = prior.map(str::to_string).into_iter().collect();
        for item in items {
            let head = match item.find(';') {
                Some(i) => &item[..=i],
                None => item.as_str(),
            };
            parts.push(head.to_string());
        }
        Ok(parts.join(" "))
    }
}

pub fn describe_observation(obs: &Observation) -> String {
    let p = obs.properties.position;
    let tokens = obs.visible_tokens();
    let sees = if tokens.is_empty() {
        "none".to_string()
    } else {
        tokens.into_iter().collect::<Vec<_>>().join(" ")
    };
    let hears = if obs.audio.is_empty() {
        "none".to_string()
    } else {
        obs.audio
            .iter()
            .map(|a| format!("{}:{}", a.source, intensity_band(a.intensity)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!("at ({},{}); sees: {sees}; hears: {hears}", p.x, p.y)
}

fn describe_map(img: &MapImage) -> String {
    let landmarks: Vec<String> = img
        .legend
        .iter()
        .map(|e| format!("{}@({},{})", e.token, e.pos.x, e.pos.y))
        .collect();
    format!(
        "map {}: explored {} of {}; landmarks: {}",
        img.bounds,
        img.explored_count(),
        img.bounds.area(),
        if landmarks.is_empty() {
            "none".to_string()
        } else {
            landmarks.join(" ")
        }
    )
}

impl Deployer for ScriptedBackend {
    fn deploy_subtask(
        &self,
        info: &MultimodalInfo,
        subgoal: &SubGoal,
        strategy: &str,
    ) -> Result<SubtaskDirective, BackendError> {
        let region = subgoal
            .region()
            .unwrap_or(info.map.bounds)
            .intersect(&info.map.bounds);
        let target = subgoal
            .target()
            .or_else(|| info.goal.as_ref().map(|g| g.target.clone()));
        let strategy = if strategy.is_empty() {
            subgoal.suggested_strategy.clone()
        } else {
            strategy.to_string()
        };
        Ok(SubtaskDirective {
            subgoal_id: subgoal.id,
            kind: subgoal.kind.clone(),
            region,
            goal_hint: target.as_ref().map(GoalTarget::hint).unwrap_or_default(),
            target,
            focus: subgoal.focus(),
            quantity: subgoal.quantity,
            strategy,
            map_excerpt: info.map.crop(&region),
            exclude: info.found.clone(),
        })
    }

    fn deploy_subcommand(
        &self,
        task: &SubtaskDirective,
        position: Position,
    ) -> Result<SubCommand, BackendError> {
        Ok(SubCommand {
            subgoal_id: task.subgoal_id,
            position,
            steps: vec![
                ActionStep::MoveTo { target: position },
                ActionStep::Scan,
                ActionStep::ReportMap,
            ],
            exclude: task.exclude.clone(),
            fired: Vec::new(),
        })
    }
}

impl Critic for ScriptedBackend {
    fn critique(&self, _subject: &str, history: &[OutcomeReport]) -> Result<Critique, BackendError> {
        let w = self.config.stall_window.max(1);
        if history.len() < w {
            return Ok(Critique::accept("insufficient history"));
        }
        if history[history.len() - w..].iter().all(OutcomeReport::is_stalled) {
            Ok(Critique::revise("stalled"))
        } else {
            Ok(Critique::accept("progressing"))
        }
    }
}

impl Actor for ScriptedBackend {
    fn act(
        &self,
        command: &SubCommand,
        cursor: usize,
        observation: &Observation,
        skills: &[SkillRecord],
    ) -> Result<Act, ActError> {
        let Some(step) = command.steps.get(cursor) else {
            return Err(ActError::CommandExhausted);
        };
        for skill in skills {
            if command.fired.contains(&skill.name) {
                continue;
            }
            if let Some(steps) = skill.expand(observation, &command.exclude, command.position) {
                return Ok(Act {
                    step: steps[0].clone(),
                    splice: Some(Splice {
                        skill: skill.name.clone(),
                        steps,
                    }),
                });
            }
        }
        Ok(Act {
            step: step.clone(),
            splice: None,
        })
    }
}

impl Curriculum for ScriptedBackend {
    fn propose_next_task(&self, log: &CurriculumLog, _map: &MapImage) -> Result<String, BackendError> {
        Ok(LADDER
            .iter()
            .find(|t| !log.succeeded(t))
            .map_or(FREE_EXPLORE, |t| *t)
            .to_string())
    }
}

impl SkillResolver for ScriptedBackend {
    fn resolve(
        &self,
        library: &SkillLibrary,
        query: &[String],
        k: usize,
    ) -> Result<Vec<SkillRecord>, BackendError> {
        Ok(library
            .lookup_skill(query, k)
            .into_iter()
            .filter(|(_, score)| *score > 0.0)
            .map(|(s, _)| s)
            .collect())
    }
}

/// Query tokens a conductor uses for skill lookup.
pub fn skill_query(task: &SubtaskDirective) -> Vec<String> {
    tokenize(&task.goal_hint)
}
