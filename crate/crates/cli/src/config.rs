// SPDX-License-Identifier: Apache-2.0

//! Server configuration file.
//!
//! ```json
//! { "port": 7878, "world": "worlds/trier.json", "session": { "tick_rate": 30 } }
//! ```
//!
//! `world` is resolved relative to the config file. Command-line flags and the
//! `TOURCAST_PORT` / `TOURCAST_TICK_RATE` variables override the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tourcast_core::{SessionConfig, World};

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub world: PathBuf,
    #[serde(default)]
    pub session: SessionConfig,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub port: Option<u16>,
    pub tick_rate: Option<f64>,
    pub world: Option<PathBuf>,
    pub bind: Option<String>,
}

/// A validated server setup: the world is parsed and the session config checked.
#[derive(Debug)]
pub struct Resolved {
    pub bind: String,
    pub port: u16,
    pub world: World,
    pub session: SessionConfig,
}

pub fn load(path: &Path, overrides: &Overrides) -> anyhow::Result<Resolved> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let mut cfg: ServerConfig =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.world = base.join(&cfg.world);
    if let Some(p) = overrides.port {
        cfg.port = p;
    }
    if let Some(t) = overrides.tick_rate {
        cfg.session.tick_rate = t;
    }
    if let Some(w) = &overrides.world {
        cfg.world = w.clone();
    }
    if let Some(b) = &overrides.bind {
        cfg.bind = b.clone();
    }
    cfg.session.validate().map_err(|e| anyhow::anyhow!("{}: session.{e}", path.display()))?;
    let world_text =
        std::fs::read_to_string(&cfg.world).map_err(|e| anyhow::anyhow!("{}: {e}", cfg.world.display()))?;
    let world = World::from_json(&world_text).map_err(|e| anyhow::anyhow!("{}: {e}", cfg.world.display()))?;
    Ok(Resolved { bind: cfg.bind, port: cfg.port, world, session: cfg.session })
}
