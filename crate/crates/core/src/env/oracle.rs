use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::dynamics::{success, GoalMap};
use super::{Action, AgentState, EnvConfig, GridWorld, Heading, Task};
use crate::error::{Error, Result};

/// Shortest action sequence to a success state, ending with `Done`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OraclePlan {
    pub actions: Vec<Action>,
}

impl OraclePlan {
    pub fn moves(&self) -> usize {
        self.actions.iter().filter(|a| **a == Action::MoveAhead).count()
    }

    /// Actions before the final `Done`.
    pub fn cost(&self) -> usize {
        self.actions.len() - 1
    }
}

fn state_index(world: &GridWorld, s: &AgentState) -> usize {
    world.index(s.pos) * 4 + s.heading.index()
}

/// Plan minimizing `(actions, moves)` lexicographically over `(cell, heading)` states.
///
/// Costs are additive, so replanning from any state on the returned path
/// reproduces the remaining action and move counts exactly.
pub fn oracle_plan(
    world: &GridWorld,
    goal_map: &GoalMap,
    start: &AgentState,
    task: &Task,
    cfg: &EnvConfig,
) -> Result<OraclePlan> {
    let n = world.width() * world.height() * 4;
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut parent: Vec<Option<(usize, Action)>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    let s0 = state_index(world, start);
    best[s0] = Some((0, 0));
    heap.push(Reverse((0usize, 0usize, s0)));
    let decode = |i: usize| AgentState {
        pos: world.pos_of(i / 4),
        heading: Heading::from_index(i % 4),
    };
    while let Some(Reverse((cost, moves, si))) = heap.pop() {
        if best[si] != Some((cost, moves)) {
            continue;
        }
        let s = decode(si);
        if success(world, goal_map, &s, task, cfg) {
            let mut actions = vec![Action::Done];
            let mut cur = si;
            while let Some((prev, a)) = parent[cur] {
                actions.push(a);
                cur = prev;
            }
            actions.reverse();
            return Ok(OraclePlan { actions });
        }
        for action in [Action::MoveAhead, Action::RotateLeft, Action::RotateRight] {
            let mut next = s;
            let mut dm = 0;
            match action {
                Action::MoveAhead => {
                    let (dx, dy) = s.heading.forward();
                    let t = s.pos.offset(dx, dy);
                    if !world.is_open(t) {
                        continue;
                    }
                    next.pos = t;
                    dm = 1;
                }
                Action::RotateLeft => next.heading = s.heading.turn_left(),
                Action::RotateRight => next.heading = s.heading.turn_right(),
                Action::Done => unreachable!(),
            }
            let ni = state_index(world, &next);
            let cand = (cost + 1, moves + dm);
            if best[ni].is_none_or(|b| cand < b) {
                best[ni] = Some(cand);
                parent[ni] = Some((si, action));
                heap.push(Reverse((cand.0, cand.1, ni)));
            }
        }
    }
    Err(Error::Oracle(format!(
        "no success state reachable from ({}, {}) facing {:?}",
        start.pos.x, start.pos.y, start.heading
    )))
}

/// Next expert action; `Done` exactly when the success predicate holds.
pub fn oracle_action(
    world: &GridWorld,
    goal_map: &GoalMap,
    state: &AgentState,
    task: &Task,
    cfg: &EnvConfig,
) -> Result<Action> {
    Ok(oracle_plan(world, goal_map, state, task, cfg)?.actions[0])
}
