//! Service configuration, read from one TOML file.

use std::path::{Path, PathBuf};

use immercity_core::cues::CueConfig;
use immercity_core::ingest::FeedSource;
use immercity_core::marker::{MarkerCalibration, DEFAULT_MARKER_SIZE};
use immercity_core::LayoutParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    pub port: u16,
    pub store_path: PathBuf,
    pub sessions_path: PathBuf,
    pub default_seed: u64,
    /// Allowed browser origin; `"*"` allows any.
    pub cors_origin: Option<String>,
    pub marker_size: u32,
    pub layout: LayoutParams,
    pub cues: CueConfig,
    pub marker: MarkerCalibration,
    pub sources: Vec<FeedSource>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            store_path: "data/store.jsonl".into(),
            sessions_path: "data/sessions.jsonl".into(),
            default_seed: 2018,
            cors_origin: None,
            marker_size: DEFAULT_MARKER_SIZE,
            layout: LayoutParams::default(),
            cues: CueConfig::default(),
            marker: MarkerCalibration::default(),
            sources: Vec::new(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    /// The config file if given, otherwise built-in defaults rooted at the
    /// working directory.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.layout.validate().map_err(|e| invalid(&e))?;
        self.cues.validate().map_err(|e| invalid(&e))?;
        for source in &self.sources {
            source.validate().map_err(|e| invalid(&e))?;
        }
        if self.marker_size < immercity_core::marker::MIN_MAP_SIZE {
            return Err(ConfigError::Invalid(format!("marker_size {} is below 256", self.marker_size)));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn store_file(&self) -> PathBuf {
        self.resolve(&self.store_path)
    }

    pub fn sessions_file(&self) -> PathBuf {
        self.resolve(&self.sessions_path)
    }
}
