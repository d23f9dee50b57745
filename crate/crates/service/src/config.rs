//! Service configuration, read from TOML. Engine keys sit at the top level
//! next to the service keys:
//!
//! ```toml
//! listen = "127.0.0.1:7870"
//! auth_file = "auth.json"
//! tick_interval_s = 3600
//! default_dim = 64
//!
//! [store]
//! dir = "data"
//!
//! [policy]
//! promote_threshold = 0.6
//! ```
//!
//! Relative paths are taken relative to the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use colma_core::EngineConfig;

use crate::error::{Result, ServiceError};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7870";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    /// JSON list of principals. Required by `serve`.
    pub auth_file: Option<PathBuf>,
    /// Seconds between scheduled consolidation ticks; 0 disables them.
    pub tick_interval_s: u64,
    #[serde(flatten)]
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.to_owned(),
            auth_file: None,
            tick_interval_s: 0,
            engine: EngineConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ServiceConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        if cfg.engine.store.dir.is_relative() {
            cfg.engine.store.dir = base.join(&cfg.engine.store.dir);
        }
        if let Some(a) = &cfg.auth_file {
            if a.is_relative() {
                cfg.auth_file = Some(base.join(a));
            }
        }
        cfg.engine.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }
}
