use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geodesic::distance_field;
use super::serialize::WorldJson;
use super::{AgentState, Cell, EnvConfig, GridWorld, Heading, Pos, Task, TaskVariant};
use crate::error::{Error, Result};

const MAX_PLACEMENT_TRIES: usize = 64;

/// True when every open cell can reach every other open cell.
pub fn is_connected(world: &GridWorld) -> bool {
    let Some(first) = world.open_cells().next() else {
        return true;
    };
    let field = distance_field(world, &[first]);
    world.open_cells().all(|p| field[world.index(p)].is_some())
}

fn carve_walls(rng: &mut ChaCha8Rng, cfg: &EnvConfig) -> GridWorld {
    let (w, h) = (cfg.width, cfg.height);
    let mut cells = vec![Cell::Empty; w * h];
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                cells[y * w + x] = Cell::Wall;
            }
        }
    }
    let mut interior: Vec<usize> = (0..w * h).filter(|&i| cells[i] == Cell::Empty).collect();
    interior.shuffle(rng);
    let n_walls = (cfg.obstacle_density * interior.len() as f64).round() as usize;
    for &i in &interior[..n_walls] {
        cells[i] = Cell::Wall;
    }
    let mut world = GridWorld::new(w, h, cfg.categories, cells).expect("border is walled");
    keep_largest_component(&mut world);
    world
}

/// Walls off every open region except the largest one.
fn keep_largest_component(world: &mut GridWorld) {
    let n = world.width() * world.height();
    let mut label = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for start in world.open_cells().collect::<Vec<_>>() {
        if label[world.index(start)] != usize::MAX {
            continue;
        }
        let field = distance_field(world, &[start]);
        let id = sizes.len();
        let mut size = 0;
        for (i, d) in field.iter().enumerate() {
            if d.is_some() {
                label[i] = id;
                size += 1;
            }
        }
        sizes.push(size);
    }
    let Some(best) = (0..sizes.len()).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i))) else {
        return;
    };
    for i in 0..n {
        if label[i] != usize::MAX && label[i] != best {
            let p = world.pos_of(i);
            world.set(p, Cell::Wall);
        }
    }
}

/// Procedurally generates a world, a spawn state and a task, deterministically in `seed`.
pub fn generate(seed: u64, cfg: &EnvConfig) -> Result<(GridWorld, AgentState, Task)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = match &cfg.layout {
        Some(rows) => WorldJson::parse_rows(rows, cfg.categories)?,
        None => carve_walls(&mut rng, cfg),
    };
    if !is_connected(&world) {
        return Err(Error::Generation {
            seed,
            reason: "open cells are not connected".into(),
        });
    }

    let mut empties: Vec<Pos> = world.open_cells().filter(|&p| world.cell(p) == Cell::Empty).collect();
    if cfg.layout.is_none() {
        let needed = cfg.categories * cfg.objects_per_category;
        if empties.len() < needed + 2 {
            return Err(Error::Generation {
                seed,
                reason: format!("only {} open cells for {needed} objects", empties.len()),
            });
        }
        empties.shuffle(&mut rng);
        for c in 0..cfg.categories {
            for _ in 0..cfg.objects_per_category {
                let p = empties.pop().expect("counted above");
                world.set(p, Cell::Object(c as u8));
            }
        }
        empties.sort();
    }

    let open: Vec<Pos> = world.open_cells().collect();
    for _ in 0..MAX_PLACEMENT_TRIES {
        let heading = Heading::from_index(rng.gen_range(0..4));
        match cfg.task {
            TaskVariant::PointNav => {
                let spawn = open[rng.gen_range(0..open.len())];
                let field = distance_field(&world, &[spawn]);
                let goals: Vec<Pos> = open
                    .iter()
                    .copied()
                    .filter(|p| field[world.index(*p)].is_some_and(|d| d >= cfg.min_start_distance))
                    .collect();
                if goals.is_empty() {
                    continue;
                }
                let goal = goals[rng.gen_range(0..goals.len())];
                return Ok((world, AgentState { pos: spawn, heading }, Task::PointNav { goal }));
            }
            TaskVariant::ObjectNav => {
                let present: Vec<u8> = (0..cfg.categories as u8)
                    .filter(|&c| !world.cells_of_category(c).is_empty())
                    .collect();
                if present.is_empty() {
                    return Err(Error::Generation {
                        seed,
                        reason: "no objects in world".into(),
                    });
                }
                let category = present[rng.gen_range(0..present.len())];
                let field = distance_field(&world, &world.cells_of_category(category));
                let spawns: Vec<Pos> = open
                    .iter()
                    .copied()
                    .filter(|p| field[world.index(*p)].is_some_and(|d| d >= cfg.min_start_distance))
                    .collect();
                if spawns.is_empty() {
                    continue;
                }
                let spawn = spawns[rng.gen_range(0..spawns.len())];
                return Ok((world, AgentState { pos: spawn, heading }, Task::ObjectNav { category }));
            }
        }
    }
    Err(Error::Generation {
        seed,
        reason: format!("no spawn/goal pair at distance >= {}", cfg.min_start_distance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::geodesic;

    #[test]
    fn zero_density_has_no_interior_walls() {
        let cfg = EnvConfig {
            obstacle_density: 0.0,
            ..EnvConfig::default()
        };
        let (w, _, _) = generate(3, &cfg).unwrap();
        let walls = w.cells().iter().filter(|c| c.is_wall()).count();
        assert_eq!(walls, 2 * 11 + 2 * 9);
        assert!(is_connected(&w));
    }

    #[test]
    fn same_seed_same_episode() {
        let cfg = EnvConfig::default();
        assert_eq!(generate(17, &cfg).unwrap(), generate(17, &cfg).unwrap());
        let obj = EnvConfig {
            task: TaskVariant::ObjectNav,
            ..EnvConfig::default()
        };
        assert_eq!(generate(17, &obj).unwrap(), generate(17, &obj).unwrap());
    }

    #[test]
    fn spawn_and_goal_are_apart() {
        let cfg = EnvConfig::default();
        for seed in 0..50 {
            let (w, s, t) = generate(seed, &cfg).unwrap();
            let Task::PointNav { goal } = t else { unreachable!() };
            assert!(geodesic(&w, s.pos, goal).unwrap() >= 3);
        }
    }

    #[test]
    fn invalid_density_is_rejected() {
        let cfg = EnvConfig {
            obstacle_density: 0.5,
            ..EnvConfig::default()
        };
        assert!(matches!(generate(0, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_layout_reports_seed() {
        let cfg = EnvConfig {
            layout: Some(vec!["#####".into(), "#...#".into(), "#####".into()]),
            ..EnvConfig::default()
        };
        match generate(42, &cfg) {
            Err(Error::Generation { seed, .. }) => assert_eq!(seed, 42),
            other => panic!("expected generation error, got {other:?}"),
        }
    }
}
