//! Service configuration file and environment overrides.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Deserialize;
use thiserror::Error;

pub const ENV_PORT: &str = "FRAUDLENS_PORT";
pub const ENV_STORE: &str = "FRAUDLENS_STORE";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for {name}: {value:?}")]
    Env { name: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteAssistantConfig {
    /// OpenAI-compatible chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_assistant_deadline")]
    pub deadline_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Provider fixture files; live stubs are used when empty.
    #[serde(default)]
    pub fixtures: Vec<PathBuf>,
    #[serde(default)]
    pub scoring_config: Option<PathBuf>,
    /// Interaction log; kept in memory when absent.
    #[serde(default)]
    pub store_path: Option<PathBuf>,
    #[serde(default = "default_locale")]
    pub default_locale: String,
    /// Extra `<locale>.toml` message catalogs.
    #[serde(default)]
    pub locales_dir: Option<PathBuf>,
    #[serde(default = "default_salt")]
    pub salt: String,
    #[serde(default = "default_hops")]
    pub trusted_hops: usize,
    #[serde(default = "default_rate")]
    pub rate_limit_per_minute: u32,
    #[serde(default)]
    pub fixed_clock: Option<DateTime<Utc>>,
    #[serde(default)]
    pub assistant: Option<RemoteAssistantConfig>,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}
fn default_port() -> u16 {
    8080
}
fn default_locale() -> String {
    fraudlens_core::catalog::DEFAULT_LOCALE.into()
}
fn default_salt() -> String {
    "fraudlens".into()
}
fn default_hops() -> usize {
    1
}
fn default_rate() -> u32 {
    60
}
fn default_assistant_deadline() -> u64 {
    fraudlens_core::assistant::REMOTE_DEADLINE_MS
}

impl Default for ServiceConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })
    }

    /// Loads `path`, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        let mut config = Self::from_toml(&text, &shown)?;
        config.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.fixtures.iter_mut().for_each(join);
        self.scoring_config.iter_mut().for_each(join);
        self.store_path.iter_mut().for_each(join);
        self.locales_dir.iter_mut().for_each(join);
    }

    /// Applies port and store overrides read through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(value) = lookup(ENV_PORT) {
            self.port = value.trim().parse().map_err(|_| ConfigError::Env { name: ENV_PORT, value })?;
        }
        if let Some(value) = lookup(ENV_STORE) {
            self.store_path = (!value.trim().is_empty()).then(|| PathBuf::from(value));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ServiceConfig::default();
        assert_eq!((c.port, c.trusted_hops, c.rate_limit_per_minute), (8080, 1, 60));
        assert!(c.store_path.is_none() && c.fixtures.is_empty());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("svc.toml");
        std::fs::write(&file, "fixtures = [\"f.jsonl\"]\nstore_path = \"/abs/log.jsonl\"\n").unwrap();
        let c = ServiceConfig::load(&file).unwrap();
        assert_eq!(c.fixtures, vec![dir.path().join("f.jsonl")]);
        assert_eq!(c.store_path, Some(PathBuf::from("/abs/log.jsonl")));
    }

    #[test]
    fn env_overrides() {
        let mut c = ServiceConfig::default();
        c.apply_env(|k| match k {
            ENV_PORT => Some("9191".into()),
            ENV_STORE => Some("/tmp/x.jsonl".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.port, 9191);
        assert_eq!(c.store_path, Some(PathBuf::from("/tmp/x.jsonl")));
        assert!(c.apply_env(|_| Some("nope".into())).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ServiceConfig::from_toml("api_key = \"x\"", "t").is_err());
    }
}
