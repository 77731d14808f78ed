use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::model::AgentConfig;
use crate::train::{BcConfig, CausalConfig, EvalConfig, PpoConfig};

/// Which checkpoints a training run leaves on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepCheckpoints {
    /// `ckpt_<step>.json` at every evaluation.
    #[default]
    All,
    /// Only the last evaluation's checkpoint and the best-SR alias.
    FinalAndBest,
}

/// Everything a command needs, with every default spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub ppo: PpoConfig,
    pub causal: CausalConfig,
    pub bc: BcConfig,
    pub eval: EvalConfig,
    /// Record elapsed seconds in the training log; off keeps logs reproducible.
    pub log_wall_time: bool,
    pub keep_checkpoints: KeepCheckpoints,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            ppo: PpoConfig::default(),
            causal: CausalConfig::default(),
            bc: BcConfig::default(),
            eval: EvalConfig::default(),
            log_wall_time: false,
            keep_checkpoints: KeepCheckpoints::All,
        }
    }
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets `a.b.c = value` inside a JSON object tree.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

impl RunConfig {
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides; values parse as JSON, else as strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = serde_json::to_value(self).map_err(|e| Error::json("config", e))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut tree, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::Config(format!("override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.ppo.validate()?;
        self.bc.validate()?;
        self.eval.validate()?;
        if self.env.max_steps > self.agent.max_steps {
            return Err(Error::Config(format!(
                "env.max_steps ({}) exceeds agent.max_steps ({})",
                self.env.max_steps, self.agent.max_steps
            )));
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_string(&c).expect("config serializes").as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line that opens every CSV artifact.
    pub fn provenance_line(&self) -> String {
        self.provenance_with_seed(self.seed)
    }

    /// Provenance for artifacts driven by a seed other than the run's own.
    pub fn provenance_with_seed(&self, seed: u64) -> String {
        format!(
            "# cannav {VERSION} config_hash={} seed={seed} num_envs={}",
            self.hash(),
            self.ppo.num_envs
        )
    }
}
