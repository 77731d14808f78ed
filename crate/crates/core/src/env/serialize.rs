//! JSON forms of worlds and episodes. Cells are written as row strings:
//! `#` wall, `.` empty, `A`..`Z` object categories.

use serde::{Deserialize, Serialize};

use super::{AgentState, Cell, GridWorld, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldJson {
    pub width: usize,
    pub height: usize,
    pub categories: usize,
    pub rows: Vec<String>,
}

impl WorldJson {
    pub fn from_world(world: &GridWorld) -> Self {
        let rows = (0..world.height())
            .map(|y| {
                (0..world.width())
                    .map(|x| match world.cells()[y * world.width() + x] {
                        Cell::Empty => '.',
                        Cell::Wall => '#',
                        Cell::Object(c) => (b'A' + c) as char,
                    })
                    .collect()
            })
            .collect();
        Self {
            width: world.width(),
            height: world.height(),
            categories: world.categories(),
            rows,
        }
    }

    pub fn to_world(&self) -> Result<GridWorld> {
        let world = Self::parse_rows(&self.rows, self.categories)?;
        if world.width() != self.width || world.height() != self.height {
            return Err(Error::Format(format!(
                "declared size {}x{} does not match rows {}x{}",
                self.width,
                self.height,
                world.width(),
                world.height()
            )));
        }
        Ok(world)
    }

    pub fn parse_rows(rows: &[String], categories: usize) -> Result<GridWorld> {
        let height = rows.len();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        if height < 3 || width < 3 {
            return Err(Error::Format("a world needs at least 3x3 cells".into()));
        }
        let mut cells = Vec::with_capacity(width * height);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::Format(format!("row {y} has a different width")));
            }
            for ch in row.chars() {
                cells.push(match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Empty,
                    'A'..='Z' => Cell::Object(ch as u8 - b'A'),
                    other => return Err(Error::Format(format!("unknown cell character {other:?} in row {y}"))),
                });
            }
        }
        GridWorld::new(width, height, categories, cells)
    }
}

/// A complete episode start: world, agent and task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSnapshot {
    pub seed: u64,
    pub world: WorldJson,
    pub agent: AgentState,
    pub task: Task,
}

impl EpisodeSnapshot {
    pub fn new(seed: u64, world: &GridWorld, agent: AgentState, task: Task) -> Self {
        Self {
            seed,
            world: WorldJson::from_world(world),
            agent,
            task,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("episode snapshot", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::json("episode snapshot", e))
    }
}
