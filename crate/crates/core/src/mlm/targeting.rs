//! Per-executor target selection inside a subtask region.

use crate::geometry::{Position, Rect};
use crate::map::MapImage;

use super::SubtaskDirective;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetingParams {
    pub world: Rect,
    pub sensing_radius: u32,
    pub move_cap: u32,
}

fn dist2(a: Position, b: Position) -> i64 {
    let dx = i64::from(a.x - b.x);
    let dy = i64::from(a.y - b.y);
    dx * dx + dy * dy
}

/// Cells of `region` at Chebyshev distance exactly `d` from `c`.
fn ring(c: Position, d: i32, region: &Rect) -> impl Iterator<Item = Position> + '_ {
    let (x0, x1) = (c.x - d, c.x + d);
    let (y0, y1) = (c.y - d, c.y + d);
    let top = (x0..=x1).map(move |x| Position::new(x, y0));
    let bottom = (x0..=x1).filter(move |_| d > 0).map(move |x| Position::new(x, y1));
    let left = (y0 + 1..y1).map(move |y| Position::new(x0, y));
    let right = (y0 + 1..y1).filter(move |_| d > 0).map(move |y| Position::new(x1, y));
    top.chain(bottom)
        .chain(left)
        .chain(right)
        .filter(move |p| region.contains(*p))
}

fn max_ring(c: Position, region: &Rect) -> i32 {
    [
        c.x - region.x0,
        region.x1() - 1 - c.x,
        c.y - region.y0,
        region.y1() - 1 - c.y,
    ]
    .into_iter()
    .map(i32::abs)
    .max()
    .unwrap_or(0)
        + 1
}

/// Nearest (Euclidean, then row-major) cell of `region` passing `ok`,
/// starting at Chebyshev distance `from`.
fn nearest_where(
    e: Position,
    from: i32,
    region: &Rect,
    mut ok: impl FnMut(Position) -> bool,
) -> Option<Position> {
    let mut best: Option<(i64, Position)> = None;
    for d in from..=max_ring(e, region) {
        if let Some((bd, _)) = best {
            if i64::from(d) * i64::from(d) > bd {
                break;
            }
        }
        for p in ring(e, d, region) {
            if ok(p) {
                let key = (dist2(e, p), p);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Cell nearest `c` inside `bounds` not already taken.
fn spiral_free(c: Position, bounds: &Rect, taken: &[Position]) -> Position {
    let c = bounds.clamp(c);
    nearest_where(c, 0, bounds, |p| !taken.contains(&p)).unwrap_or(c)
}

fn unexplored(map: &MapImage, p: Position) -> bool {
    map.glyph(p).is_some_and(|g| g == '?')
}

/// One target per executor, in order. Targets are pairwise distinct and lie
/// inside the subtask region (or the world, for a focus outside it).
///
/// With a focus, the first executor heads for it and the rest take the
/// nearest free cells around it. Otherwise each executor picks the nearest
/// unexplored cell beyond its own sensing window and away from the targets
/// already chosen, then aims a sensing radius past it.
pub fn assign_targets(
    task: &SubtaskDirective,
    executors: &[Position],
    params: &TargetingParams,
) -> Vec<Position> {
    let region = task.region.intersect(&params.world);
    let region = if region.is_empty() { params.world } else { region };
    let r = params.sensing_radius as i32;
    let mut chosen: Vec<Position> = Vec::with_capacity(executors.len());

    for (i, &e) in executors.iter().enumerate() {
        if let Some(focus) = task.focus {
            let p = if i == 0 && params.world.contains(focus) {
                focus
            } else {
                spiral_free(focus, &params.world, &chosen)
            };
            chosen.push(p);
            continue;
        }

        let map = &task.map_excerpt;
        let clear_of = |p: Position, chosen: &[Position]| {
            chosen.iter().all(|c| c.chebyshev(p) as i32 > r)
        };
        let u = nearest_where(e, r + 1, &region, |p| {
            unexplored(map, p) && clear_of(p, &chosen)
        })
        .or_else(|| nearest_where(e, 0, &region, |p| unexplored(map, p) && clear_of(p, &chosen)))
        .or_else(|| nearest_where(e, 0, &region, |p| unexplored(map, p) && !chosen.contains(&p)));

        let p = match u {
            Some(u) if u != e => {
                let len = e.euclidean(u);
                let step = (params.move_cap as f64).min(len + f64::from(r));
                let scale = step / len;
                let raw = Position::new(
                    e.x + (f64::from(u.x - e.x) * scale).round() as i32,
                    e.y + (f64::from(u.y - e.y) * scale).round() as i32,
                );
                let p = region.clamp(raw);
                if chosen.contains(&p) {
                    u
                } else {
                    p
                }
            }
            Some(u) => u,
            None => spiral_free(region.center(), &region, &chosen),
        };
        let p = if chosen.contains(&p) {
            spiral_free(p, &region, &chosen)
        } else {
            p
        };
        chosen.push(p);
    }
    chosen
}
