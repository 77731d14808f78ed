use super::geodesic::distance_field;
use super::{
    generate, Action, AgentState, EnvConfig, Goal, GridWorld, Observation, Pos, RewardConfig, StepInfo, StepResult,
    Task,
};
use crate::error::{Error, Result};

/// Distance fields needed to score a task in a fixed world.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalMap {
    /// Distance from every cell to the nearest goal cell.
    goal_dist: Vec<Option<u32>>,
    /// ObjectNav only: each target cell with its own distance field.
    targets: Vec<(Pos, Vec<Option<u32>>)>,
}

impl GoalMap {
    pub fn new(world: &GridWorld, task: &Task) -> Self {
        match *task {
            Task::PointNav { goal } => Self {
                goal_dist: distance_field(world, &[goal]),
                targets: Vec::new(),
            },
            Task::ObjectNav { category } => {
                let cells = world.cells_of_category(category);
                Self {
                    goal_dist: distance_field(world, &cells),
                    targets: cells.iter().map(|&c| (c, distance_field(world, &[c]))).collect(),
                }
            }
        }
    }

    pub fn distance(&self, world: &GridWorld, p: Pos) -> Option<u32> {
        if world.contains(p) {
            self.goal_dist[world.index(p)]
        } else {
            None
        }
    }
}

/// Window coordinates `(row, col)` of world cell `p`, if visible from `state`.
pub(crate) fn window_coords(state: &AgentState, window: usize, p: Pos) -> Option<(usize, usize)> {
    let (fx, fy) = state.heading.forward();
    let (rx, ry) = state.heading.right();
    let (dx, dy) = (p.x - state.pos.x, p.y - state.pos.y);
    let forward = dx * fx + dy * fy;
    let lateral = dx * rx + dy * ry;
    let half = (window / 2) as i32;
    let row = half + 1 - forward;
    let col = lateral + half;
    let w = window as i32;
    ((0..w).contains(&row) && (0..w).contains(&col)).then_some((row as usize, col as usize))
}

fn window_cell(state: &AgentState, window: usize, row: usize, col: usize) -> Pos {
    let (fx, fy) = state.heading.forward();
    let (rx, ry) = state.heading.right();
    let half = (window / 2) as i32;
    let forward = half + 1 - row as i32;
    let lateral = col as i32 - half;
    state
        .pos
        .offset(forward * fx + lateral * rx, forward * fy + lateral * ry)
}

fn bearing(state: &AgentState, goal: Pos) -> f64 {
    let (fx, fy) = state.heading.forward();
    let (rx, ry) = state.heading.right();
    let (dx, dy) = (goal.x - state.pos.x, goal.y - state.pos.y);
    let forward = (dx * fx + dy * fy) as f64;
    let lateral = (dx * rx + dy * ry) as f64;
    lateral.atan2(forward)
}

/// Egocentric observation of `state`.
pub fn observe(world: &GridWorld, goal_map: &GoalMap, state: &AgentState, task: &Task, window: usize) -> Observation {
    let mut cells = Vec::with_capacity(window * window);
    for row in 0..window {
        for col in 0..window {
            cells.push(world.cell(window_cell(state, window, row, col)).channel());
        }
    }
    let goal = match *task {
        Task::PointNav { goal } => Goal::Point {
            distance: goal_map.distance(world, state.pos).unwrap_or(u32::MAX) as f64,
            bearing: bearing(state, goal),
        },
        Task::ObjectNav { category } => Goal::Object { category },
    };
    Observation {
        window,
        channels: 2 + world.categories(),
        cells,
        goal,
    }
}

/// Success predicate evaluated when the agent calls `Done`/`Stop`.
pub fn success(world: &GridWorld, goal_map: &GoalMap, state: &AgentState, task: &Task, cfg: &EnvConfig) -> bool {
    match task {
        Task::PointNav { .. } => goal_map
            .distance(world, state.pos)
            .is_some_and(|d| d <= cfg.point_success_radius),
        Task::ObjectNav { .. } => goal_map.targets.iter().any(|(cell, field)| {
            field[world.index(state.pos)].is_some_and(|d| d <= cfg.object_success_radius)
                && window_coords(state, cfg.window, *cell).is_some()
        }),
    }
}

/// Shaped reward: success bonus, progress along the geodesic, step and collision penalties.
pub fn reward(prev_geodesic: u32, new_geodesic: u32, success_event: bool, collided: bool, cfg: &RewardConfig) -> f64 {
    let mut r = cfg.shaping * (prev_geodesic as f64 - new_geodesic as f64) - cfg.step_penalty;
    if success_event {
        r += cfg.success;
    }
    if collided {
        r -= cfg.collision_penalty;
    }
    r
}

pub(crate) fn step_with(
    world: &GridWorld,
    goal_map: &GoalMap,
    state: &AgentState,
    task: &Task,
    action: Action,
    elapsed: usize,
    cfg: &EnvConfig,
) -> (AgentState, StepResult) {
    let prev = goal_map.distance(world, state.pos).unwrap_or(u32::MAX);
    let mut next = *state;
    let mut collided = false;
    let mut moved = false;
    let mut succeeded = false;
    let mut done = false;
    match action {
        Action::MoveAhead => {
            let (dx, dy) = state.heading.forward();
            let target = state.pos.offset(dx, dy);
            if world.is_open(target) {
                next.pos = target;
                moved = true;
            } else {
                collided = true;
            }
        }
        Action::RotateLeft => next.heading = state.heading.turn_left(),
        Action::RotateRight => next.heading = state.heading.turn_right(),
        Action::Done => {
            succeeded = success(world, goal_map, &next, task, cfg);
            done = true;
        }
    }
    if elapsed + 1 >= cfg.max_steps {
        done = true;
    }
    let new = goal_map.distance(world, next.pos).unwrap_or(u32::MAX);
    let r = reward(prev, new, succeeded, collided, &cfg.reward);
    let observation = observe(world, goal_map, &next, task, cfg.window);
    (
        next,
        StepResult {
            observation,
            reward: r,
            done,
            info: StepInfo {
                success: succeeded,
                geodesic_to_goal: new,
                collided,
                moved,
            },
        },
    )
}

/// Pure transition: `elapsed` is the number of actions already taken this episode.
pub fn step(
    world: &GridWorld,
    state: &AgentState,
    task: &Task,
    action: Action,
    elapsed: usize,
    cfg: &EnvConfig,
) -> (AgentState, StepResult) {
    let goal_map = GoalMap::new(world, task);
    step_with(world, &goal_map, state, task, action, elapsed, cfg)
}

/// A running episode: world, task and agent plus bookkeeping for metrics.
#[derive(Debug, Clone)]
pub struct Episode {
    pub world: GridWorld,
    pub state: AgentState,
    pub task: Task,
    pub config: EnvConfig,
    pub seed: u64,
    goal_map: GoalMap,
    elapsed: usize,
    moves: usize,
    done: bool,
    success: bool,
}

impl Episode {
    pub fn new(world: GridWorld, state: AgentState, task: Task, config: EnvConfig, seed: u64) -> Self {
        let goal_map = GoalMap::new(&world, &task);
        Self {
            world,
            state,
            task,
            config,
            seed,
            goal_map,
            elapsed: 0,
            moves: 0,
            done: false,
            success: false,
        }
    }

    pub fn generate(seed: u64, config: &EnvConfig) -> Result<Self> {
        let (world, state, task) = generate(seed, config)?;
        Ok(Self::new(world, state, task, config.clone(), seed))
    }

    pub fn observation(&self) -> Observation {
        observe(&self.world, &self.goal_map, &self.state, &self.task, self.config.window)
    }

    pub fn goal_map(&self) -> &GoalMap {
        &self.goal_map
    }

    pub fn geodesic_to_goal(&self) -> u32 {
        self.goal_map.distance(&self.world, self.state.pos).unwrap_or(u32::MAX)
    }

    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    /// Number of `MoveAhead` actions that changed the agent's cell.
    pub fn moves(&self) -> usize {
        self.moves
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn succeeded(&self) -> bool {
        self.success
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let (next, result) = step_with(
            &self.world,
            &self.goal_map,
            &self.state,
            &self.task,
            action,
            self.elapsed,
            &self.config,
        );
        self.state = next;
        self.elapsed += 1;
        self.moves += result.info.moved as usize;
        self.done = result.done;
        self.success = result.info.success;
        Ok(result)
    }
}
