//! Group allocation under the agent budget.

use crate::geometry::Position;
use crate::ids::BodyId;
use crate::mlm::SubGoal;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub subgoal: SubGoal,
    pub conductor: BodyId,
    pub members: Vec<BodyId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Organization {
    pub groups: Vec<Allocation>,
    /// Subgoals left without agents, in priority order.
    pub queued: Vec<SubGoal>,
}

/// Group sizes for `bodies` agents over `subgoals` groups: one conductor
/// each, an equal share of the rest, leftovers to the first groups.
pub fn group_sizes(bodies: usize, subgoals: usize) -> Vec<usize> {
    let n = subgoals.min(bodies);
    if n == 0 {
        return Vec::new();
    }
    let share = (bodies - n) / n;
    let extra = (bodies - n) % n;
    (0..n).map(|i| 1 + share + usize::from(i < extra)).collect()
}

fn anchor(subgoal: &SubGoal, fallback: Position) -> Position {
    subgoal
        .focus()
        .or_else(|| subgoal.region().map(|r| r.center()))
        .unwrap_or(fallback)
}

fn dist2(a: Position, b: Position) -> i64 {
    let dx = i64::from(a.x - b.x);
    let dy = i64::from(a.y - b.y);
    dx * dx + dy * dy
}

/// Assign idle bodies to subgoals in priority order. Each subgoal takes its
/// share of the nearest remaining bodies; the nearest becomes conductor.
pub fn auto_organize(idle: &[(BodyId, Position)], subgoals: &[SubGoal]) -> Organization {
    let sizes = group_sizes(idle.len(), subgoals.len());
    let mut pool: Vec<(BodyId, Position)> = idle.to_vec();
    pool.sort_by_key(|(b, _)| *b);
    let centroid = if pool.is_empty() {
        Position::new(0, 0)
    } else {
        let n = pool.len() as i64;
        Position::new(
            (pool.iter().map(|p| i64::from(p.1.x)).sum::<i64>() / n) as i32,
            (pool.iter().map(|p| i64::from(p.1.y)).sum::<i64>() / n) as i32,
        )
    };
    let mut groups = Vec::with_capacity(sizes.len());
    for (subgoal, &size) in subgoals.iter().zip(&sizes) {
        let a = anchor(subgoal, centroid);
        pool.sort_by_key(|(b, p)| (dist2(*p, a), *b));
        let taken: Vec<BodyId> = pool.drain(..size).map(|(b, _)| b).collect();
        groups.push(Allocation {
            subgoal: subgoal.clone(),
            conductor: taken[0],
            members: taken[1..].to_vec(),
        });
    }
    Organization {
        groups,
        queued: subgoals[sizes.len()..].to_vec(),
    }
}
