//! Oracle demonstrations as JSON lines: one header object, then one object
//! per step.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{oracle_action, Observation};
use crate::error::{Error, Result};
use crate::seeding;
use crate::train::{fresh_episode, Demo, DemoStep};

use super::config::{RunConfig, VERSION};

pub const FORMAT: &str = "cannav-demos";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub episode: usize,
    pub world_seed: u64,
    pub t: usize,
    pub observation: Observation,
    pub action: usize,
}

/// Oracle rollouts on training-range worlds drawn from the `demo-gen` stream.
pub fn generate_demos(cfg: &RunConfig, n: usize) -> Result<Vec<Demo>> {
    let mut rng = seeding::stream(cfg.seed, seeding::DEMO_GEN, 0);
    let mut demos = Vec::with_capacity(n);
    for episode in 0..n {
        let mut ep = fresh_episode(&mut rng, &cfg.env)?;
        let mut steps = Vec::new();
        let mut obs = ep.observation();
        while !ep.is_done() {
            let a = oracle_action(&ep.world, ep.goal_map(), &ep.state, &ep.task, &ep.config)?;
            steps.push(DemoStep {
                observation: obs,
                action: a.index(),
            });
            obs = ep.step(a)?.observation;
        }
        if !ep.succeeded() {
            return Err(Error::Oracle(format!("oracle failed on world seed {}", ep.seed)));
        }
        demos.push(Demo {
            episode,
            world_seed: ep.seed,
            steps,
        });
    }
    Ok(demos)
}

pub fn write_demos(path: &Path, cfg: &RunConfig, demos: &[Demo]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = DemoHeader {
        format: FORMAT.into(),
        version: VERSION.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        episodes: demos.len(),
    };
    write_line(&mut w, path, &header)?;
    for d in demos {
        for (t, s) in d.steps.iter().enumerate() {
            write_line(
                &mut w,
                path,
                &DemoRecord {
                    episode: d.episode,
                    world_seed: d.world_seed,
                    t,
                    observation: s.observation.clone(),
                    action: s.action,
                },
            )?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    writeln!(w, "{s}").map_err(|e| Error::io(path, e))
}

/// Reads a demo file back into episodes. Steps must arrive in order.
pub fn read_demos(path: &Path) -> Result<(DemoHeader, Vec<Demo>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty demo file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: DemoHeader =
        serde_json::from_str(&first).map_err(|e| Error::json(format!("{}: header", path.display()), e))?;
    if header.format != FORMAT {
        return Err(Error::Format(format!("{}: not a demo file", path.display())));
    }
    let mut demos: Vec<Demo> = Vec::with_capacity(header.episodes);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let rec: DemoRecord =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{}: line {}", path.display(), i + 2), e))?;
        let start_new = demos.last().map_or(true, |d| d.episode != rec.episode);
        if start_new {
            demos.push(Demo {
                episode: rec.episode,
                world_seed: rec.world_seed,
                steps: Vec::new(),
            });
        }
        let d = demos.last_mut().expect("pushed above");
        if rec.t != d.steps.len() {
            return Err(Error::Format(format!(
                "{}: line {} is out of order",
                path.display(),
                i + 2
            )));
        }
        d.steps.push(DemoStep {
            observation: rec.observation,
            action: rec.action,
        });
    }
    if demos.len() != header.episodes {
        return Err(Error::Format(format!(
            "{}: header promises {} episodes, found {}",
            path.display(),
            header.episodes,
            demos.len()
        )));
    }
    Ok((header, demos))
}

pub fn gen_demos_cmd(cfg: &RunConfig, n: usize, out: &Path) -> Result<Vec<Demo>> {
    let demos = generate_demos(cfg, n)?;
    write_demos(out, cfg, &demos)?;
    Ok(demos)
}
