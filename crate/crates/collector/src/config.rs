use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use homescope_core::endpoints::{ListDatabases, ListError, ListPaths};
use homescope_core::identity::{LabelRules, RulesError};
use homescope_core::tls::{CipherRegistry, RegistryError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("parsing {0}: {1}")]
    Parse(PathBuf, toml::de::Error),
    #[error("{var}={value:?}: {msg}")]
    Env { var: &'static str, value: String, msg: String },
    #[error(transparent)]
    Lists(#[from] ListError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: SocketAddr,
    pub store: PathBuf,
    /// Directory holding list files under their standard names. Entries
    /// in `[lists]` win over it.
    pub lists_dir: Option<PathBuf>,
    pub lists: ListPaths,
    pub rules: Option<PathBuf>,
    pub cipher_registry: Option<PathBuf>,
    /// Built dashboard bundle, served at `/` when set.
    pub ui_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store: PathBuf::from("homescope-store.json"),
            lists_dir: None,
            lists: ListPaths::default(),
            rules: None,
            cipher_registry: None,
            ui_dir: None,
        }
    }
}

pub const ENV_BIND: &str = "HOMESCOPE_BIND";
pub const ENV_STORE: &str = "HOMESCOPE_STORE";
pub const ENV_LISTS_DIR: &str = "HOMESCOPE_LISTS_DIR";
pub const ENV_RULES: &str = "HOMESCOPE_RULES";
pub const ENV_CIPHER_REGISTRY: &str = "HOMESCOPE_CIPHER_REGISTRY";
pub const ENV_UI_DIR: &str = "HOMESCOPE_UI_DIR";

impl Config {
    /// Reads the file if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let base = match path {
            Some(p) => Config::from_file(p)?,
            None => Config::default(),
        };
        base.with_env(|k| std::env::var(k).ok())
    }

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.into(), e))?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(path.into(), e))
    }

    pub fn with_env(mut self, var: impl Fn(&str) -> Option<String>) -> Result<Config, ConfigError> {
        if let Some(v) = var(ENV_BIND) {
            self.bind = v.parse().map_err(|e: std::net::AddrParseError| ConfigError::Env {
                var: ENV_BIND,
                value: v.clone(),
                msg: e.to_string(),
            })?;
        }
        if let Some(v) = var(ENV_STORE) {
            self.store = v.into();
        }
        if let Some(v) = var(ENV_LISTS_DIR) {
            self.lists_dir = Some(v.into());
        }
        if let Some(v) = var(ENV_RULES) {
            self.rules = Some(v.into());
        }
        if let Some(v) = var(ENV_CIPHER_REGISTRY) {
            self.cipher_registry = Some(v.into());
        }
        if let Some(v) = var(ENV_UI_DIR) {
            self.ui_dir = Some(v.into());
        }
        Ok(self)
    }

    pub fn list_paths(&self) -> ListPaths {
        let from_dir = self.lists_dir.as_deref().map(ListPaths::in_dir).unwrap_or_default();
        self.lists.clone().or(from_dir)
    }

    pub fn list_databases(&self) -> Result<ListDatabases, ConfigError> {
        Ok(ListDatabases::load(&self.list_paths())?)
    }

    pub fn label_rules(&self) -> Result<LabelRules, ConfigError> {
        Ok(match &self.rules {
            Some(p) => LabelRules::load(p)?,
            None => LabelRules::bundled(),
        })
    }

    pub fn registry(&self) -> Result<CipherRegistry, ConfigError> {
        Ok(match &self.cipher_registry {
            Some(p) => CipherRegistry::load(p)?,
            None => CipherRegistry::bundled(),
        })
    }
}
