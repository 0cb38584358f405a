//! The shared exploration map.
//!
//! Agents report the cells they sensed as text tokens; the map is the
//! running union of those reports. Explored cells never disappear. When two
//! reports annotate the same cell differently, the later `(step, agent)`
//! wins. The manager consumes the map as a text raster (`MapImage`) whose
//! legend lists every annotation with its coordinates.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{Position, Rect};
use crate::ids::AgentId;
use crate::world::Observation;

pub const GLYPH_UNEXPLORED: char = '?';
pub const GLYPH_EXPLORED: char = '.';
pub const GLYPH_ANNOTATED: char = '*';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCell {
    pub pos: Position,
    pub annotations: Vec<String>,
}

/// One agent's sensed cells at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub agent: AgentId,
    pub step: u64,
    pub cells: Vec<ReportCell>,
}

impl ReportEntry {
    pub fn from_observation(agent: AgentId, obs: &Observation) -> Self {
        Self {
            agent,
            step: obs.step,
            cells: obs
                .vision
                .iter()
                .map(|c| ReportCell {
                    pos: c.pos,
                    annotations: c.annotations.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub annotations: Vec<String>,
    pub last_agent: AgentId,
    pub last_step: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MapError {
    #[error("report has no cells")]
    EmptyReport,
    #[error("reported cell {0} is outside the map")]
    OutOfBounds(Position),
    #[error("malformed map image: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub new_cells: usize,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicMap {
    bounds: Rect,
    cells: Vec<Option<CellRecord>>,
    explored: usize,
    version: u64,
}

impl DynamicMap {
    pub fn new(width: u32, height: u32) -> Self {
        let bounds = Rect::sized(width, height);
        Self {
            bounds,
            cells: vec![None; bounds.area()],
            explored: 0,
            version: 0,
        }
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn index(&self, p: Position) -> Option<usize> {
        self.bounds
            .contains(p)
            .then(|| p.y as usize * self.bounds.width as usize + p.x as usize)
    }

    pub fn get(&self, p: Position) -> Option<&CellRecord> {
        self.index(p).and_then(|i| self.cells[i].as_ref())
    }

    pub fn is_explored(&self, p: Position) -> bool {
        self.get(p).is_some()
    }

    /// Fold one report into the map. Validation happens before any write,
    /// so a rejected report leaves the map untouched. The version advances
    /// once per merge that changes content; re-merging a report is a no-op.
    pub fn merge_report(&mut self, report: &ReportEntry) -> Result<MergeStats, MapError> {
        if report.cells.is_empty() {
            return Err(MapError::EmptyReport);
        }
        if let Some(bad) = report.cells.iter().find(|c| !self.bounds.contains(c.pos)) {
            return Err(MapError::OutOfBounds(bad.pos));
        }
        let mut stats = MergeStats::default();
        let incoming_key = (report.step, report.agent);
        for rc in &report.cells {
            let mut annotations = rc.annotations.clone();
            annotations.sort();
            annotations.dedup();
            let idx = self.index(rc.pos).expect("validated");
            match &mut self.cells[idx] {
                slot @ None => {
                    *slot = Some(CellRecord {
                        annotations,
                        last_agent: report.agent,
                        last_step: report.step,
                    });
                    self.explored += 1;
                    stats.new_cells += 1;
                    stats.changed = true;
                }
                Some(rec) => {
                    let current_key = (rec.last_step, rec.last_agent);
                    if incoming_key > current_key {
                        rec.annotations = annotations;
                        rec.last_agent = report.agent;
                        rec.last_step = report.step;
                        stats.changed = true;
                    } else if incoming_key == current_key {
                        let merged: Vec<String> = rec
                            .annotations
                            .iter()
                            .cloned()
                            .chain(annotations)
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .collect();
                        if merged != rec.annotations {
                            rec.annotations = merged;
                            stats.changed = true;
                        }
                    }
                }
            }
        }
        if stats.changed {
            self.version += 1;
        }
        Ok(stats)
    }

    pub fn explored_area(&self) -> usize {
        self.explored
    }

    /// Explored cells in row-major order.
    pub fn explored_cells(&self) -> impl Iterator<Item = (Position, &CellRecord)> + '_ {
        let w = self.bounds.width as usize;
        self.cells.iter().enumerate().filter_map(move |(i, c)| {
            c.as_ref()
                .map(|rec| (Position::new((i % w) as i32, (i / w) as i32), rec))
        })
    }

    pub fn unexplored_in(&self, rect: &Rect) -> usize {
        rect.cells().filter(|&p| !self.is_explored(p)).count()
    }

    pub fn render_for_manager(&self, bounds: &Rect) -> MapImage {
        let mut rows = Vec::with_capacity(bounds.height as usize);
        let mut legend = Vec::new();
        for y in bounds.y0..bounds.y1() {
            let mut row = String::with_capacity(bounds.width as usize);
            for x in bounds.x0..bounds.x1() {
                let p = Position::new(x, y);
                let glyph = match self.get(p) {
                    None => GLYPH_UNEXPLORED,
                    Some(rec) if rec.annotations.is_empty() => GLYPH_EXPLORED,
                    Some(rec) => {
                        legend.extend(rec.annotations.iter().map(|t| LegendEntry {
                            token: t.clone(),
                            pos: p,
                        }));
                        GLYPH_ANNOTATED
                    }
                };
                row.push(glyph);
            }
            rows.push(row);
        }
        MapImage {
            bounds: *bounds,
            rows,
            legend,
        }
    }

    pub fn frontier_cells(&self, bounds: &Rect) -> BTreeSet<Position> {
        bounds
            .cells()
            .filter(|&p| !self.is_explored(p))
            .filter(|p| p.neighbors4().iter().any(|&n| self.is_explored(n)))
            .collect()
    }

    pub fn to_snapshot(&self) -> MapSnapshot {
        MapSnapshot {
            version: self.version,
            cells: self
                .explored_cells()
                .map(|(p, rec)| SnapshotCell {
                    x: p.x,
                    y: p.y,
                    annotations: rec.annotations.clone(),
                    last_agent: rec.last_agent,
                    last_step: rec.last_step,
                })
                .collect(),
        }
    }

    pub fn from_snapshot(width: u32, height: u32, snap: &MapSnapshot) -> Result<Self, MapError> {
        let mut map = DynamicMap::new(width, height);
        for c in &snap.cells {
            let p = Position::new(c.x, c.y);
            let idx = map.index(p).ok_or(MapError::OutOfBounds(p))?;
            if map.cells[idx].is_none() {
                map.explored += 1;
            }
            map.cells[idx] = Some(CellRecord {
                annotations: c.annotations.clone(),
                last_agent: c.last_agent,
                last_step: c.last_step,
            });
        }
        map.version = snap.version;
        Ok(map)
    }
}

/// Serialized map, cells sorted by `(y, x)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub version: u64,
    pub cells: Vec<SnapshotCell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCell {
    pub x: i32,
    pub y: i32,
    pub annotations: Vec<String>,
    pub last_agent: AgentId,
    pub last_step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub token: String,
    pub pos: Position,
}

/// Text raster of a map region handed to the planning layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapImage {
    pub bounds: Rect,
    pub rows: Vec<String>,
    pub legend: Vec<LegendEntry>,
}

impl MapImage {
    /// Raster with nothing explored.
    pub fn blank(bounds: Rect) -> Self {
        let row: String = std::iter::repeat_n(GLYPH_UNEXPLORED, bounds.width as usize).collect();
        Self {
            bounds,
            rows: vec![row; bounds.height as usize],
            legend: Vec::new(),
        }
    }

    /// Sub-raster covering `rect ∩ bounds`.
    pub fn crop(&self, rect: &Rect) -> MapImage {
        let r = self.bounds.intersect(rect);
        let (dx, dy) = ((r.x0 - self.bounds.x0) as usize, (r.y0 - self.bounds.y0) as usize);
        let rows = self.rows[dy..dy + r.height as usize]
            .iter()
            .map(|row| row[dx..dx + r.width as usize].to_string())
            .collect();
        let legend = self
            .legend
            .iter()
            .filter(|e| r.contains(e.pos))
            .cloned()
            .collect();
        MapImage {
            bounds: r,
            rows,
            legend,
        }
    }

    /// Unexplored cells with an explored 4-neighbour.
    pub fn frontier(&self) -> Vec<Position> {
        self.unexplored_positions()
            .filter(|p| p.neighbors4().iter().any(|&n| self.is_explored(n)))
            .collect()
    }

    pub fn glyph(&self, p: Position) -> Option<char> {
        if !self.bounds.contains(p) {
            return None;
        }
        let row = self.rows.get((p.y - self.bounds.y0) as usize)?;
        row.as_bytes()
            .get((p.x - self.bounds.x0) as usize)
            .map(|&b| b as char)
    }

    pub fn is_explored(&self, p: Position) -> bool {
        matches!(self.glyph(p), Some(g) if g != GLYPH_UNEXPLORED)
    }

    pub fn explored_positions(&self) -> BTreeSet<Position> {
        self.bounds.cells().filter(|&p| self.is_explored(p)).collect()
    }

    pub fn explored_count(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.bytes().filter(|&b| b as char != GLYPH_UNEXPLORED).count())
            .sum()
    }

    pub fn unexplored_positions(&self) -> impl Iterator<Item = Position> + '_ {
        self.bounds.cells().filter(|&p| !self.is_explored(p))
    }

    /// Legend entries grouped by cell, row-major.
    pub fn annotated_cells(&self) -> Vec<(Position, Vec<&str>)> {
        let mut out: Vec<(Position, Vec<&str>)> = Vec::new();
        let mut entries: Vec<&LegendEntry> = self.legend.iter().collect();
        entries.sort_by(|a, b| a.pos.cmp(&b.pos).then_with(|| a.token.cmp(&b.token)));
        for e in entries {
            match out.last_mut() {
                Some((p, tokens)) if *p == e.pos => tokens.push(&e.token),
                _ => out.push((e.pos, vec![&e.token])),
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let b = &self.bounds;
        let mut out = format!("map x0={} y0={} w={} h={}\n", b.x0, b.y0, b.width, b.height);
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out.push_str("legend:\n");
        for e in &self.legend {
            let _ = writeln!(out, "{} @ ({},{})", e.token, e.pos.x, e.pos.y);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, MapError> {
        let err = |m: &str| MapError::Parse(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("missing header"))?;
        let mut fields = header
            .strip_prefix("map ")
            .ok_or_else(|| err("bad header"))?
            .split_whitespace();
        let mut field = |name: &str| -> Result<i64, MapError> {
            let f = fields.next().ok_or_else(|| err("short header"))?;
            f.strip_prefix(name)
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err("bad header field"))
        };
        let x0 = field("x0")? as i32;
        let y0 = field("y0")? as i32;
        let w = field("w")? as u32;
        let h = field("h")? as u32;
        let bounds = Rect::new(x0, y0, w, h);
        let mut rows = Vec::with_capacity(h as usize);
        for _ in 0..h {
            let row = lines.next().ok_or_else(|| err("missing row"))?;
            if row.chars().count() != w as usize
                || !row
                    .chars()
                    .all(|c| [GLYPH_UNEXPLORED, GLYPH_EXPLORED, GLYPH_ANNOTATED].contains(&c))
            {
                return Err(err("bad row"));
            }
            rows.push(row.to_string());
        }
        if lines.next() != Some("legend:") {
            return Err(err("missing legend"));
        }
        let mut legend = Vec::new();
        for line in lines {
            let (token, coords) = line.rsplit_once(" @ ").ok_or_else(|| err("bad legend"))?;
            let (x, y) = coords
                .strip_prefix('(')
                .and_then(|c| c.strip_suffix(')'))
                .and_then(|c| c.split_once(','))
                .ok_or_else(|| err("bad legend coords"))?;
            let pos = Position::new(
                x.parse().map_err(|_| err("bad x"))?,
                y.parse().map_err(|_| err("bad y"))?,
            );
            legend.push(LegendEntry {
                token: token.to_string(),
                pos,
            });
        }
        Ok(Self {
            bounds,
            rows,
            legend,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::BodyId;

    fn report(agent: u32, step: u64, cells: &[(i32, i32)], tag: Option<&str>) -> ReportEntry {
        ReportEntry {
            agent: AgentId::sub_agent(BodyId(agent)),
            step,
            cells: cells
                .iter()
                .map(|&(x, y)| ReportCell {
                    pos: Position::new(x, y),
                    annotations: tag.into_iter().map(str::to_string).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn merge_into_empty_and_idempotent() {
        let mut m = DynamicMap::new(10, 10);
        let r = report(0, 1, &[(0, 0), (1, 0), (2, 0)], None);
        m.merge_report(&r).unwrap();
        assert_eq!(m.explored_area(), 3);
        assert_eq!(m.version(), 1);
        let once = m.clone();
        let stats = m.merge_report(&r).unwrap();
        assert!(!stats.changed);
        assert_eq!(m, once);
    }

    #[test]
    fn repeated_cell_within_a_report_is_idempotent() {
        let mut m = DynamicMap::new(4, 4);
        let mut r = report(0, 0, &[(1, 1)], Some("diamond_block"));
        r.cells.push(ReportCell {
            pos: Position::new(1, 1),
            annotations: Vec::new(),
        });
        m.merge_report(&r).unwrap();
        let once = m.clone();
        assert!(!m.merge_report(&r).unwrap().changed);
        assert_eq!(m, once);
        assert_eq!(m.get(Position::new(1, 1)).unwrap().annotations, ["diamond_block"]);
    }

    #[test]
    fn disjoint_reports_commute() {
        let a_cells: Vec<(i32, i32)> = (0..10).map(|i| (i, 0)).collect();
        let b_cells: Vec<(i32, i32)> = (0..7).map(|i| (i, 5)).collect();
        let a = report(0, 1, &a_cells, Some("tree"));
        let b = report(1, 2, &b_cells, None);
        let mut ab = DynamicMap::new(12, 12);
        ab.merge_report(&a).unwrap();
        ab.merge_report(&b).unwrap();
        let mut ba = DynamicMap::new(12, 12);
        ba.merge_report(&b).unwrap();
        ba.merge_report(&a).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.explored_area(), 17);
    }

    #[test]
    fn later_step_wins_conflicts() {
        let mut m = DynamicMap::new(4, 4);
        m.merge_report(&report(3, 5, &[(1, 1)], Some("old"))).unwrap();
        m.merge_report(&report(0, 4, &[(1, 1)], Some("older"))).unwrap();
        assert_eq!(m.get(Position::new(1, 1)).unwrap().annotations, vec!["old"]);
        m.merge_report(&report(1, 6, &[(1, 1)], Some("new"))).unwrap();
        let rec = m.get(Position::new(1, 1)).unwrap();
        assert_eq!(rec.annotations, vec!["new"]);
        assert_eq!(rec.last_step, 6);
        // Same step: higher agent id wins the tie.
        m.merge_report(&report(2, 6, &[(1, 1)], Some("tie"))).unwrap();
        assert_eq!(m.get(Position::new(1, 1)).unwrap().annotations, vec!["tie"]);
        m.merge_report(&report(0, 6, &[(1, 1)], Some("lost"))).unwrap();
        assert_eq!(m.get(Position::new(1, 1)).unwrap().annotations, vec!["tie"]);
    }

    #[test]
    fn rejected_reports_leave_map_untouched() {
        let mut m = DynamicMap::new(4, 4);
        let before = m.clone();
        assert_eq!(
            m.merge_report(&report(0, 1, &[(0, 0), (9, 9)], None)),
            Err(MapError::OutOfBounds(Position::new(9, 9)))
        );
        assert_eq!(m.merge_report(&report(0, 1, &[], None)), Err(MapError::EmptyReport));
        assert_eq!(m, before);
    }

    #[test]
    fn full_window_counts_25() {
        let mut m = DynamicMap::new(20, 20);
        let cells: Vec<(i32, i32)> = Rect::window(Position::new(5, 5), 2)
            .cells()
            .map(|p| (p.x, p.y))
            .collect();
        m.merge_report(&report(0, 0, &cells, None)).unwrap();
        assert_eq!(m.explored_area(), 25);
    }

    #[test]
    fn render_glyphs_and_legend() {
        let m = DynamicMap::new(3, 3);
        let img = m.render_for_manager(&Rect::sized(3, 3));
        assert_eq!(img.rows, vec!["???", "???", "???"]);

        let mut m = DynamicMap::new(8, 8);
        m.merge_report(&report(0, 0, &[(1, 1)], None)).unwrap();
        m.merge_report(&report(0, 0, &[(4, 2)], Some("village"))).unwrap();
        let img = m.render_for_manager(&Rect::sized(8, 8));
        assert_eq!(img.rows[1].chars().nth(1), Some(GLYPH_EXPLORED));
        assert_eq!(img.rows[2].chars().nth(4), Some(GLYPH_ANNOTATED));
        let text = img.to_text();
        assert!(text.contains("village @ (4,2)"));
        assert_eq!(MapImage::parse(&text).unwrap(), img);
    }

    #[test]
    fn frontier_around_single_cell() {
        let mut m = DynamicMap::new(10, 10);
        let b = Rect::sized(10, 10);
        assert!(m.frontier_cells(&b).is_empty());
        m.merge_report(&report(0, 0, &[(5, 5)], None)).unwrap();
        let expected: BTreeSet<Position> = [(4, 5), (6, 5), (5, 4), (5, 6)]
            .iter()
            .map(|&(x, y)| Position::new(x, y))
            .collect();
        assert_eq!(m.frontier_cells(&b), expected);
        let all: Vec<(i32, i32)> = b.cells().map(|p| (p.x, p.y)).collect();
        m.merge_report(&report(0, 1, &all, None)).unwrap();
        assert!(m.frontier_cells(&b).is_empty());
    }

    #[test]
    fn snapshot_is_sorted_and_reloads() {
        let mut m = DynamicMap::new(6, 6);
        m.merge_report(&report(2, 3, &[(5, 0), (0, 4), (2, 1)], Some("x"))).unwrap();
        let snap = m.to_snapshot();
        let order: Vec<(i32, i32)> = snap.cells.iter().map(|c| (c.y, c.x)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        let json = serde_json::to_string(&snap).unwrap();
        assert!(json.starts_with("{\"version\":1,\"cells\":[{\"x\":5,\"y\":0"));
        assert_eq!(DynamicMap::from_snapshot(6, 6, &snap).unwrap(), m);
    }

    #[test]
    fn crop_matches_direct_render() {
        let mut m = DynamicMap::new(10, 10);
        m.merge_report(&report(0, 0, &[(2, 2), (3, 3), (8, 8)], Some("x"))).unwrap();
        m.merge_report(&report(0, 1, &[(4, 2)], None)).unwrap();
        let full = m.render_for_manager(&Rect::sized(10, 10));
        let part = Rect::new(2, 2, 4, 3);
        assert_eq!(full.crop(&part), m.render_for_manager(&part));
        assert_eq!(
            full.frontier().into_iter().collect::<BTreeSet<_>>(),
            m.frontier_cells(&Rect::sized(10, 10))
        );
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(MapImage::parse("").is_err());
        assert!(MapImage::parse("map x0=0 y0=0 w=2 h=1\n?x\nlegend:\n").is_err());
        assert!(MapImage::parse("map x0=0 y0=0 w=2 h=1\n??\n").is_err());
    }
}
