//! Partially observable grid navigation.
//!
//! A world is a rectangle of cells surrounded by walls. The agent occupies a
//! cell and faces one of four headings; it sees a small egocentric window and
//! a goal descriptor, never the full map.

mod dynamics;
mod generate;
mod geodesic;
mod oracle;
mod serialize;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dynamics::{observe, reward, step, success, Episode, GoalMap};
pub use generate::{generate, is_connected};
pub use geodesic::{distance_field, geodesic};
pub use oracle::{oracle_action, oracle_plan, OraclePlan};
pub use serialize::{EpisodeSnapshot, WorldJson};

pub const NUM_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Empty,
    Wall,
    Object(u8),
}

impl Cell {
    /// Observation channel: 0 empty, 1 wall, `2 + c` object category `c`.
    pub fn channel(self) -> u8 {
        match self {
            Cell::Empty => 0,
            Cell::Wall => 1,
            Cell::Object(c) => 2 + c,
        }
    }

    pub fn is_wall(self) -> bool {
        matches!(self, Cell::Wall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    /// Unit step in grid coordinates (y grows downwards).
    pub fn forward(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn right(self) -> (i32, i32) {
        self.turn_right().forward()
    }

    pub fn turn_right(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn turn_left(self) -> Self {
        Self::from_index(self.index() + 3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft,
    RotateRight,
    /// `Done` for PointNav, `Stop` for ObjectNav.
    Done,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::MoveAhead, Action::RotateLeft, Action::RotateRight, Action::Done];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::OutOfRange {
            what: "action set",
            index: i,
            size: NUM_ACTIONS,
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::MoveAhead => "MoveAhead",
            Action::RotateLeft => "RotateLeft",
            Action::RotateRight => "RotateRight",
            Action::Done => "Done",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Pos,
    pub heading: Heading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskVariant {
    PointNav,
    ObjectNav,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PointNav { goal: Pos },
    ObjectNav { category: u8 },
}

impl Task {
    pub fn variant(&self) -> TaskVariant {
        match self {
            Task::PointNav { .. } => TaskVariant::PointNav,
            Task::ObjectNav { .. } => TaskVariant::ObjectNav,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    width: usize,
    height: usize,
    categories: usize,
    cells: Vec<Cell>,
}

impl GridWorld {
    pub fn new(width: usize, height: usize, categories: usize, cells: Vec<Cell>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::shape("grid world", &[width, height], &[cells.len()]));
        }
        let world = Self {
            width,
            height,
            categories,
            cells,
        };
        for y in 0..height as i32 {
            for x in 0..width as i32 {
                let p = Pos::new(x, y);
                let border = x == 0 || y == 0 || x == width as i32 - 1 || y == height as i32 - 1;
                if border && !world.cell(p).is_wall() {
                    return Err(Error::Format(format!("border cell ({x}, {y}) is not a wall")));
                }
                if let Cell::Object(c) = world.cell(p) {
                    if c as usize >= categories {
                        return Err(Error::OutOfRange {
                            what: "object categories",
                            index: c as usize,
                            size: categories,
                        });
                    }
                }
            }
        }
        Ok(world)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn contains(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn index(&self, p: Pos) -> usize {
        p.y as usize * self.width + p.x as usize
    }

    pub fn pos_of(&self, index: usize) -> Pos {
        Pos::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Cell at `p`; anything outside the world reads as a wall.
    pub fn cell(&self, p: Pos) -> Cell {
        if self.contains(p) {
            self.cells[self.index(p)]
        } else {
            Cell::Wall
        }
    }

    pub fn is_open(&self, p: Pos) -> bool {
        !self.cell(p).is_wall()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub(crate) fn set(&mut self, p: Pos, c: Cell) {
        let i = self.index(p);
        self.cells[i] = c;
    }

    pub fn open_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.cells.len())
            .filter(|&i| !self.cells[i].is_wall())
            .map(|i| self.pos_of(i))
    }

    pub fn cells_of_category(&self, category: u8) -> Vec<Pos> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i] == Cell::Object(category))
            .map(|i| self.pos_of(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    /// Geodesic distance in cells and bearing in radians (positive to the right).
    Point {
        distance: f64,
        bearing: f64,
    },
    Object {
        category: u8,
    },
}

/// Scale applied to the geodesic distance before it reaches the network.
pub const GOAL_DISTANCE_SCALE: f64 = 0.1;

impl Goal {
    /// Dense features for the PointNav goal encoder: `[0.1 * distance, sin, cos]`.
    pub fn point_features(&self) -> Option<[f64; 3]> {
        match *self {
            Goal::Point { distance, bearing } => Some([GOAL_DISTANCE_SCALE * distance, bearing.sin(), bearing.cos()]),
            Goal::Object { .. } => None,
        }
    }
}

/// Egocentric view: `window x window` cells, each carrying one channel id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub window: usize,
    pub channels: usize,
    /// Row-major channel ids; row 0 is farthest ahead, column 0 is leftmost.
    pub cells: Vec<u8>,
    pub goal: Goal,
}

impl Observation {
    pub fn feature_len(&self) -> usize {
        self.window * self.window * self.channels
    }

    /// Flattened `window x window x channels` one-hot encoding.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_len()];
        self.write_one_hot(&mut out);
        out
    }

    pub fn write_one_hot(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &c) in self.cells.iter().enumerate() {
            out[i * self.channels + c as usize] = 1.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success: bool,
    pub geodesic_to_goal: u32,
    pub collided: bool,
    pub moved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub success: f64,
    pub shaping: f64,
    pub step_penalty: f64,
    pub collision_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            success: 10.0,
            shaping: 1.0,
            step_penalty: 0.01,
            collision_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub task: TaskVariant,
    pub width: usize,
    pub height: usize,
    pub obstacle_density: f64,
    pub categories: usize,
    pub objects_per_category: usize,
    pub window: usize,
    pub max_steps: usize,
    pub min_start_distance: u32,
    pub point_success_radius: u32,
    pub object_success_radius: u32,
    pub reward: RewardConfig,
    /// Fixed map given as row strings; overrides random generation of walls.
    pub layout: Option<Vec<String>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: TaskVariant::PointNav,
            width: 11,
            height: 11,
            obstacle_density: 0.2,
            categories: 6,
            objects_per_category: 1,
            window: 5,
            max_steps: 128,
            min_start_distance: 3,
            point_success_radius: 1,
            object_success_radius: 2,
            reward: RewardConfig::default(),
            layout: None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layout.is_none() && (self.width < 7 || self.height < 7) {
            return Err(Error::Config(format!(
                "env.width/env.height must be at least 7, got {}x{}",
                self.width, self.height
            )));
        }
        if !(0.0..=0.4).contains(&self.obstacle_density) {
            return Err(Error::Config(format!(
                "env.obstacle_density must lie in [0, 0.4], got {}",
                self.obstacle_density
            )));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "env.window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.categories == 0 || self.categories > 26 {
            return Err(Error::Config("env.categories must lie in 1..=26".into()));
        }
        if self.task == TaskVariant::ObjectNav && self.objects_per_category == 0 {
            return Err(Error::Config(
                "object navigation needs env.objects_per_category >= 1".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("env.max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        2 + self.categories
    }

    pub fn observation_len(&self) -> usize {
        self.window * self.window * self.channels()
    }
}
