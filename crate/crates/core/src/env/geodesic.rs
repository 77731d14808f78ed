use std::collections::VecDeque;

use super::{GridWorld, Pos};

const NEIGHBOURS: [(i32, i32); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

/// Multi-source BFS distances over open cells; `None` marks unreachable or wall cells.
pub fn distance_field(world: &GridWorld, sources: &[Pos]) -> Vec<Option<u32>> {
    let mut dist = vec![None; world.width() * world.height()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if world.is_open(s) && dist[world.index(s)].is_none() {
            dist[world.index(s)] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(p) = queue.pop_front() {
        let d = dist[world.index(p)].expect("queued cells carry a distance");
        for (dx, dy) in NEIGHBOURS {
            let q = p.offset(dx, dy);
            if world.is_open(q) && dist[world.index(q)].is_none() {
                dist[world.index(q)] = Some(d + 1);
                queue.push_back(q);
            }
        }
    }
    dist
}

/// 4-connected shortest-path length through non-wall cells, `None` when unreachable.
pub fn geodesic(world: &GridWorld, from: Pos, to: Pos) -> Option<u32> {
    if !world.is_open(from) || !world.is_open(to) {
        return None;
    }
    distance_field(world, &[to])[world.index(from)]
}
