//! Deterministic grid world standing in for the game environment.
//!
//! Terrain is a seeded partition into `terrain_count` contiguous regions,
//! goal entities are placed from the config's placement list, and the
//! `diamond_grid_16` layout puts a diamond block on every cell whose two
//! coordinates are multiples of 16. Static content lives behind `Arc`s so a
//! world snapshot is cheap to clone; only agent bodies and the clock change
//! after generation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{line_cells, Position, Rect};
use crate::goal::{audio_source_token, EntityId, Goal, GoalTarget};
use crate::ids::BodyId;
use crate::rng::SplitMix64;

/// Spacing of the diamond lattice in `diamond_grid_16`.
pub const DIAMOND_SPACING: i32 = 16;
pub const DIAMOND_TOKEN: &str = "diamond_block";

const TERRAIN_NAMES: [&str; 10] = [
    "plains", "forest", "desert", "taiga", "swamp", "mesa", "jungle", "tundra", "savanna",
    "badlands",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Freeform,
    DiamondGrid16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntityKind {
    Object {
        name: String,
    },
    Image {
        tokens: BTreeSet<String>,
    },
    Audio {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl EntityKind {
    fn annotations(&self, id: EntityId) -> Vec<String> {
        match self {
            EntityKind::Object { name } => vec![name.clone()],
            EntityKind::Image { tokens } => tokens.iter().cloned().collect(),
            EntityKind::Audio { label } => {
                let mut v = vec![audio_source_token(id)];
                v.extend(label.iter().cloned());
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalPlacement {
    #[serde(flatten)]
    pub entity: EntityKind,
    /// Fixed cell; drawn from the seeded generator when absent.
    #[serde(default)]
    pub position: Option<Position>,
    #[serde(default = "default_copies")]
    pub copies: u32,
}

fn default_copies() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub terrain_count: u32,
    pub goal_spec: Vec<GoalPlacement>,
    pub layout: Layout,
    pub perceptible_radius_audio: f64,
    pub sensing_radius: u32,
    pub move_cap: u32,
    /// Chebyshev distance at which an agent counts as having reached a goal.
    pub goal_threshold: u32,
    /// Fraction of an image goal's tokens a sighting must show.
    pub image_match_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 128,
            height: 128,
            terrain_count: 6,
            goal_spec: Vec::new(),
            layout: Layout::Freeform,
            perceptible_radius_audio: 48.0,
            sensing_radius: 16,
            move_cap: 50,
            goal_threshold: 3,
            image_match_fraction: 0.75,
        }
    }
}

impl WorldConfig {
    pub fn bounds(&self) -> Rect {
        Rect::sized(self.width, self.height)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.width == 0 || self.height == 0 {
            return Err(WorldError::InvalidConfig("zero dimension".into()));
        }
        if self.terrain_count == 0 {
            return Err(WorldError::InvalidConfig("terrain_count must be >= 1".into()));
        }
        if u64::from(self.terrain_count) > u64::from(self.width) * u64::from(self.height) {
            return Err(WorldError::InvalidConfig(
                "terrain_count exceeds cell count".into(),
            ));
        }
        if self.move_cap == 0 {
            return Err(WorldError::InvalidConfig("move_cap must be >= 1".into()));
        }
        if self.perceptible_radius_audio.is_nan() || self.perceptible_radius_audio <= 0.0 {
            return Err(WorldError::InvalidConfig(
                "perceptible_radius_audio must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.image_match_fraction) {
            return Err(WorldError::InvalidConfig(
                "image_match_fraction outside [0,1]".into(),
            ));
        }
        let bounds = self.bounds();
        for p in &self.goal_spec {
            if let Some(pos) = p.position {
                if !bounds.contains(pos) {
                    return Err(WorldError::InvalidConfig(format!(
                        "goal placement {pos} out of bounds"
                    )));
                }
            }
            let empty = match &p.entity {
                EntityKind::Object { name } => name.trim().is_empty(),
                EntityKind::Image { tokens } => tokens.is_empty(),
                EntityKind::Audio { .. } => false,
            };
            if empty {
                return Err(WorldError::InvalidConfig("goal placement payload is empty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("unknown agent {0}")]
    UnknownAgent(BodyId),
    #[error("position {0} is out of bounds")]
    OutOfBounds(Position),
    #[error("entity {0} is not an audio source")]
    UnknownSource(EntityId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Diamond,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cell {
    pub terrain_id: u32,
    /// Sorted, de-duplicated tokens visible on this cell.
    pub annotations: Vec<String>,
    pub block: Option<BlockKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalEntity {
    pub id: EntityId,
    #[serde(flatten)]
    pub kind: EntityKind,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentBody {
    pub position: Position,
    pub inventory: Vec<String>,
    pub group_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub config: WorldConfig,
    cells: Arc<Vec<Cell>>,
    entities: Arc<Vec<GoalEntity>>,
    pub agents: BTreeMap<BodyId, AgentBody>,
    pub clock: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensedCell {
    pub pos: Position,
    pub annotations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AudioReading {
    pub source: EntityId,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProperties {
    pub position: Position,
    pub inventory: Vec<String>,
    pub group_id: Option<u32>,
}

/// What one agent perceives: vision window, audio readings, own properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: BodyId,
    pub vision: Vec<SensedCell>,
    pub audio: Vec<AudioReading>,
    pub properties: AgentProperties,
    pub step: u64,
}

impl Observation {
    /// All annotation tokens in view, sorted and unique.
    pub fn visible_tokens(&self) -> BTreeSet<&str> {
        self.vision
            .iter()
            .flat_map(|c| c.annotations.iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveResult {
    pub new_position: Position,
    pub truncated: bool,
}

pub fn generate_world(config: &WorldConfig) -> Result<WorldState, WorldError> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let (w, h) = (config.width as usize, config.height as usize);
    let bounds = config.bounds();

    let terrain = partition_terrain(w, h, config.terrain_count as usize, &mut rng);
    let mut cells: Vec<Cell> = terrain
        .into_iter()
        .map(|t| Cell {
            terrain_id: t,
            ..Cell::default()
        })
        .collect();

    let mut entities = Vec::new();
    let mut occupied = BTreeSet::new();
    for placement in &config.goal_spec {
        for _ in 0..placement.copies {
            let position = match placement.position {
                Some(p) => p,
                None => {
                    let mut pick = random_cell(bounds, &mut rng);
                    for _ in 0..64 {
                        if !occupied.contains(&pick) {
                            break;
                        }
                        pick = random_cell(bounds, &mut rng);
                    }
                    pick
                }
            };
            occupied.insert(position);
            entities.push(GoalEntity {
                id: entities.len() as EntityId,
                kind: placement.entity.clone(),
                position,
            });
        }
    }

    if config.layout == Layout::DiamondGrid16 {
        for pos in diamond_positions(bounds) {
            cells[pos.y as usize * w + pos.x as usize].block = Some(BlockKind::Diamond);
            entities.push(GoalEntity {
                id: entities.len() as EntityId,
                kind: EntityKind::Object {
                    name: DIAMOND_TOKEN.to_string(),
                },
                position: pos,
            });
        }
    }

    for e in &entities {
        let cell = &mut cells[e.position.y as usize * w + e.position.x as usize];
        cell.annotations.extend(e.kind.annotations(e.id));
        cell.annotations.sort();
        cell.annotations.dedup();
    }

    Ok(WorldState {
        config: config.clone(),
        cells: Arc::new(cells),
        entities: Arc::new(entities),
        agents: BTreeMap::new(),
        clock: 0,
    })
}

/// Lattice of diamond cells inside `bounds`.
pub fn diamond_positions(bounds: Rect) -> Vec<Position> {
    let mut out = Vec::new();
    let mut y = 0;
    while y < bounds.y1() {
        let mut x = 0;
        while x < bounds.x1() {
            let p = Position::new(x, y);
            if bounds.contains(p) {
                out.push(p);
            }
            x += DIAMOND_SPACING;
        }
        y += DIAMOND_SPACING;
    }
    out
}

fn random_cell(bounds: Rect, rng: &mut SplitMix64) -> Position {
    Position::new(
        bounds.x0 + rng.below(u64::from(bounds.width)) as i32,
        bounds.y0 + rng.below(u64::from(bounds.height)) as i32,
    )
}

/// Multi-source breadth-first growth from distinct seed cells. Each region is
/// 4-connected by construction and carries its own id, so the partition has
/// exactly `count` contiguous regions.
fn partition_terrain(w: usize, h: usize, count: usize, rng: &mut SplitMix64) -> Vec<u32> {
    const UNSET: u32 = u32::MAX;
    let mut terrain = vec![UNSET; w * h];
    let mut queue = VecDeque::new();
    let mut placed = 0;
    while placed < count {
        let idx = rng.below((w * h) as u64) as usize;
        if terrain[idx] == UNSET {
            terrain[idx] = placed as u32;
            queue.push_back(idx);
            placed += 1;
        }
    }
    while let Some(idx) = queue.pop_front() {
        let (x, y) = (idx % w, idx / w);
        let id = terrain[idx];
        let mut visit = |nx: usize, ny: usize| {
            let n = ny * w + nx;
            if terrain[n] == UNSET {
                terrain[n] = id;
                queue.push_back(n);
            }
        };
        if y > 0 {
            visit(x, y - 1);
        }
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    terrain
}

pub fn terrain_name(terrain_id: u32) -> String {
    let base = TERRAIN_NAMES[terrain_id as usize % TERRAIN_NAMES.len()];
    let round = terrain_id as usize / TERRAIN_NAMES.len();
    if round == 0 {
        base.to_string()
    } else {
        format!("{base}{round}")
    }
}

impl WorldState {
    pub fn width(&self) -> u32 {
        self.config.width
    }

    pub fn height(&self) -> u32 {
        self.config.height
    }

    pub fn bounds(&self) -> Rect {
        self.config.bounds()
    }

    pub fn cell(&self, p: Position) -> Option<&Cell> {
        if self.bounds().contains(p) {
            Some(&self.cells[p.y as usize * self.config.width as usize + p.x as usize])
        } else {
            None
        }
    }

    pub fn entities(&self) -> &[GoalEntity] {
        &self.entities
    }

    pub fn entity(&self, id: EntityId) -> Option<&GoalEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Positions holding a block, row-major.
    pub fn block_positions(&self) -> Vec<Position> {
        self.bounds()
            .cells()
            .filter(|&p| self.cell(p).is_some_and(|c| c.block.is_some()))
            .collect()
    }

    pub fn spawn(&mut self, body: BodyId, position: Position) -> Result<(), WorldError> {
        if !self.bounds().contains(position) {
            return Err(WorldError::OutOfBounds(position));
        }
        self.agents.insert(
            body,
            AgentBody {
                position,
                inventory: Vec::new(),
                group_id: None,
            },
        );
        Ok(())
    }

    pub fn position_of(&self, body: BodyId) -> Result<Position, WorldError> {
        self.agents
            .get(&body)
            .map(|a| a.position)
            .ok_or(WorldError::UnknownAgent(body))
    }

    pub fn set_group(&mut self, body: BodyId, group: Option<u32>) -> Result<(), WorldError> {
        let a = self
            .agents
            .get_mut(&body)
            .ok_or(WorldError::UnknownAgent(body))?;
        a.group_id = group;
        Ok(())
    }

    pub fn pick_up(&mut self, body: BodyId, item: &str) -> Result<(), WorldError> {
        let a = self
            .agents
            .get_mut(&body)
            .ok_or(WorldError::UnknownAgent(body))?;
        a.inventory.push(item.to_string());
        Ok(())
    }

    pub fn advance_clock(&mut self) {
        self.clock += 1;
    }

    /// One character per cell: `D` diamond, `O`/`I`/`A` goal entities,
    /// otherwise the terrain id as a base-36 digit.
    pub fn dump(&self) -> String {
        let mut glyphs: BTreeMap<Position, char> = BTreeMap::new();
        for e in self.entities.iter() {
            let g = match &e.kind {
                EntityKind::Object { name } if name == DIAMOND_TOKEN => 'D',
                EntityKind::Object { .. } => 'O',
                EntityKind::Image { .. } => 'I',
                EntityKind::Audio { .. } => 'A',
            };
            glyphs.entry(e.position).or_insert(g);
        }
        let mut out = String::with_capacity(self.cells.len() + self.height() as usize);
        for y in 0..self.height() as i32 {
            for x in 0..self.width() as i32 {
                let p = Position::new(x, y);
                let c = match glyphs.get(&p) {
                    Some(&g) => g,
                    None => {
                        let cell = self.cell(p).expect("in bounds");
                        if cell.block.is_some() {
                            'D'
                        } else {
                            std::char::from_digit(cell.terrain_id % 36, 36).unwrap_or('?')
                        }
                    }
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}

pub fn observe(world: &WorldState, agent: BodyId) -> Result<Observation, WorldError> {
    let body = world
        .agents
        .get(&agent)
        .ok_or(WorldError::UnknownAgent(agent))?;
    let window = Rect::window(body.position, world.config.sensing_radius).intersect(&world.bounds());
    let vision = window
        .cells()
        .map(|pos| SensedCell {
            pos,
            annotations: world.cell(pos).expect("window clipped").annotations.clone(),
        })
        .collect();
    let radius = world.config.perceptible_radius_audio;
    let audio = world
        .entities
        .iter()
        .filter(|e| matches!(e.kind, EntityKind::Audio { .. }))
        .filter(|e| body.position.euclidean(e.position) < radius)
        .map(|e| AudioReading {
            source: e.id,
            intensity: falloff(body.position.euclidean(e.position), radius),
        })
        .collect();
    Ok(Observation {
        agent,
        vision,
        audio,
        properties: AgentProperties {
            position: body.position,
            inventory: body.inventory.clone(),
            group_id: body.group_id,
        },
        step: world.clock,
    })
}

fn falloff(distance: f64, radius: f64) -> f64 {
    (1.0 - distance / radius).clamp(0.0, 1.0)
}

/// Linear falloff `max(0, 1 - d/R)` from an audio source.
pub fn audio_intensity(
    world: &WorldState,
    listener: Position,
    source: EntityId,
) -> Result<f64, WorldError> {
    let e = world
        .entity(source)
        .filter(|e| matches!(e.kind, EntityKind::Audio { .. }))
        .ok_or(WorldError::UnknownSource(source))?;
    Ok(falloff(
        listener.euclidean(e.position),
        world.config.perceptible_radius_audio,
    ))
}

/// Move along the straight segment, stopping at the farthest cell within
/// `move_cap` (Euclidean). The world clock is untouched.
pub fn apply_move(
    world: &mut WorldState,
    agent: BodyId,
    target: Position,
) -> Result<MoveResult, WorldError> {
    if !world.bounds().contains(target) {
        return Err(WorldError::OutOfBounds(target));
    }
    let cap = f64::from(world.config.move_cap);
    let body = world
        .agents
        .get_mut(&agent)
        .ok_or(WorldError::UnknownAgent(agent))?;
    let from = body.position;
    let result = if from.euclidean(target) <= cap {
        MoveResult {
            new_position: target,
            truncated: false,
        }
    } else {
        let stop = line_cells(from, target)
            .into_iter()
            .take_while(|c| from.euclidean(*c) <= cap)
            .last()
            .unwrap_or(from);
        MoveResult {
            new_position: stop,
            truncated: true,
        }
    };
    body.position = result.new_position;
    Ok(result)
}

/// Entities matching `goal` within Chebyshev `threshold` of `at`.
pub fn matching_entities_near(
    world: &WorldState,
    at: Position,
    target: &GoalTarget,
    threshold: u32,
) -> Vec<EntityId> {
    let fraction = world.config.image_match_fraction;
    world
        .entities
        .iter()
        .filter(|e| e.position.chebyshev(at) <= threshold)
        .filter(|e| match (&e.kind, target) {
            (EntityKind::Object { name }, GoalTarget::Object { name: want }) => name == want,
            (EntityKind::Audio { .. }, GoalTarget::Audio { source }) => e.id == *source,
            (EntityKind::Image { tokens }, GoalTarget::Image { .. }) => {
                target.matches_annotations(tokens, fraction)
            }
            _ => false,
        })
        .map(|e| e.id)
        .collect()
}

pub fn check_goal_reached(
    world: &WorldState,
    agent: BodyId,
    goal: &Goal,
    threshold: u32,
) -> Result<bool, WorldError> {
    let at = world.position_of(agent)?;
    Ok(!matching_entities_near(world, at, &goal.target, threshold).is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, w: u32, h: u32) -> WorldConfig {
        WorldConfig {
            seed,
            width: w,
            height: h,
            ..WorldConfig::default()
        }
    }

    /// Flood-fill oracle: number of 4-connected same-terrain components.
    fn region_count(world: &WorldState) -> usize {
        let (w, h) = (world.width() as i32, world.height() as i32);
        let mut seen = vec![false; (w * h) as usize];
        let mut regions = 0;
        for start in world.bounds().cells() {
            let si = (start.y * w + start.x) as usize;
            if seen[si] {
                continue;
            }
            regions += 1;
            let t = world.cell(start).unwrap().terrain_id;
            let mut stack = vec![start];
            seen[si] = true;
            while let Some(p) = stack.pop() {
                for n in p.neighbors4() {
                    if let Some(c) = world.cell(n) {
                        let ni = (n.y * w + n.x) as usize;
                        if !seen[ni] && c.terrain_id == t {
                            seen[ni] = true;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        regions
    }

    #[test]
    fn terrain_has_exactly_requested_regions() {
        let world = generate_world(&cfg(42, 256, 256)).unwrap();
        assert_eq!(region_count(&world), 6);
        for seed in 0..10 {
            let mut c = cfg(seed, 40, 30);
            c.terrain_count = 1 + seed as u32;
            assert_eq!(region_count(&generate_world(&c).unwrap()), c.terrain_count as usize);
        }
    }

    #[test]
    fn diamond_layout_matches_lattice() {
        let mut c = cfg(1, 64, 64);
        c.layout = Layout::DiamondGrid16;
        let world = generate_world(&c).unwrap();
        let mut expected = Vec::new();
        for y in (0..64).step_by(16) {
            for x in (0..64).step_by(16) {
                expected.push(Position::new(x, y));
            }
        }
        assert_eq!(world.block_positions(), expected);
        assert_eq!(expected.len(), 16);
    }

    #[test]
    fn empty_goal_spec_has_no_entities() {
        let world = generate_world(&cfg(3, 32, 32)).unwrap();
        assert!(world.entities().is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_world(&cfg(0, 0, 10)).is_err());
        let mut c = cfg(0, 2, 2);
        c.terrain_count = 5;
        assert!(matches!(generate_world(&c), Err(WorldError::InvalidConfig(_))));
        c.terrain_count = 0;
        assert!(generate_world(&c).is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        let mut c = cfg(9, 80, 60);
        c.goal_spec.push(GoalPlacement {
            entity: EntityKind::Object {
                name: "village".into(),
            },
            position: None,
            copies: 3,
        });
        assert_eq!(generate_world(&c).unwrap(), generate_world(&c).unwrap());
    }

    #[test]
    fn corner_vision_window() {
        let mut c = cfg(0, 32, 32);
        c.sensing_radius = 2;
        let mut world = generate_world(&c).unwrap();
        world.spawn(BodyId(0), Position::new(0, 0)).unwrap();
        let obs = observe(&world, BodyId(0)).unwrap();
        // Window clipped to the 3x3 in-bounds quadrant at the corner.
        assert_eq!(obs.vision.len(), 9);
        world.spawn(BodyId(1), Position::new(10, 10)).unwrap();
        let obs = observe(&world, BodyId(1)).unwrap();
        assert_eq!(obs.vision.len(), 25);
        assert!(obs.audio.is_empty());
        assert_eq!(obs, observe(&world, BodyId(1)).unwrap());
        assert_eq!(
            observe(&world, BodyId(5)),
            Err(WorldError::UnknownAgent(BodyId(5)))
        );
    }

    fn audio_world() -> WorldState {
        let mut c = cfg(0, 100, 100);
        c.perceptible_radius_audio = 40.0;
        c.goal_spec.push(GoalPlacement {
            entity: EntityKind::Audio { label: None },
            position: Some(Position::new(50, 50)),
            copies: 1,
        });
        generate_world(&c).unwrap()
    }

    #[test]
    fn audio_intensity_closed_form() {
        let world = audio_world();
        let at = |x, y| audio_intensity(&world, Position::new(x, y), 0).unwrap();
        assert_eq!(at(50, 50), 1.0);
        assert_eq!(at(50, 90), 0.0);
        assert_eq!(at(95, 50), 0.0);
        // R/4, R/2, 3R/4 along an axis: 1 - d/R.
        let samples = [at(60, 50), at(70, 50), at(80, 50)];
        assert_eq!(samples, [0.75, 0.5, 0.25]);
        assert_eq!(
            audio_intensity(&world, Position::new(0, 0), 7),
            Err(WorldError::UnknownSource(7))
        );
    }

    #[test]
    fn audio_heard_only_in_range() {
        let mut world = audio_world();
        world.spawn(BodyId(0), Position::new(50, 20)).unwrap();
        world.spawn(BodyId(1), Position::new(50, 5)).unwrap();
        let near = observe(&world, BodyId(0)).unwrap();
        assert_eq!(near.audio.len(), 1);
        assert!((near.audio[0].intensity - 0.25).abs() < 1e-12);
        assert!(observe(&world, BodyId(1)).unwrap().audio.is_empty());
    }

    #[test]
    fn moves_respect_cap() {
        let mut c = cfg(0, 200, 200);
        c.move_cap = 50;
        let mut world = generate_world(&c).unwrap();
        world.spawn(BodyId(0), Position::new(0, 0)).unwrap();
        let r = apply_move(&mut world, BodyId(0), Position::new(0, 30)).unwrap();
        assert_eq!(r, MoveResult { new_position: Position::new(0, 30), truncated: false });
        world.spawn(BodyId(0), Position::new(0, 0)).unwrap();
        let r = apply_move(&mut world, BodyId(0), Position::new(0, 80)).unwrap();
        assert_eq!(r, MoveResult { new_position: Position::new(0, 50), truncated: true });
        let r = apply_move(&mut world, BodyId(0), Position::new(0, 50)).unwrap();
        assert!(!r.truncated);
        assert_eq!(
            apply_move(&mut world, BodyId(0), Position::new(0, 500)),
            Err(WorldError::OutOfBounds(Position::new(0, 500)))
        );
        assert_eq!(world.clock, 0);
    }

    #[test]
    fn goal_reached_threshold_and_image_overlap() {
        let mut c = cfg(0, 50, 50);
        c.goal_spec = vec![
            GoalPlacement {
                entity: EntityKind::Object { name: "village".into() },
                position: Some(Position::new(10, 10)),
                copies: 1,
            },
            GoalPlacement {
                entity: EntityKind::Image {
                    tokens: ["a", "b", "c"].iter().map(|s| s.to_string()).collect(),
                },
                position: Some(Position::new(30, 30)),
                copies: 1,
            },
        ];
        let mut world = generate_world(&c).unwrap();
        world.spawn(BodyId(0), Position::new(10, 10)).unwrap();
        let village = Goal::object("village", 1);
        assert!(check_goal_reached(&world, BodyId(0), &village, 3).unwrap());
        world.spawn(BodyId(0), Position::new(14, 10)).unwrap();
        assert!(!check_goal_reached(&world, BodyId(0), &village, 3).unwrap());

        world.spawn(BodyId(0), Position::new(31, 29)).unwrap();
        let image = Goal {
            target: GoalTarget::Image {
                tokens: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
            },
            count: 1,
        };
        assert!(check_goal_reached(&world, BodyId(0), &image, 3).unwrap());
    }

    #[test]
    fn dump_is_one_glyph_per_cell() {
        let mut c = cfg(5, 33, 17);
        c.layout = Layout::DiamondGrid16;
        let world = generate_world(&c).unwrap();
        let text = world.dump();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 17);
        assert!(rows.iter().all(|r| r.chars().count() == 33));
        assert_eq!(rows[16].chars().nth(32), Some('D'));
        assert_eq!(rows[0].chars().next(), Some('D'));
    }
}
