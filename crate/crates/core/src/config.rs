//! Operator configuration, read from a TOML file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::BasicConstraints;
use crate::engine::{Clock, Engine};
use crate::store::Store;
use crate::pipeline::{
    GenerationProvider, HttpProvider, HttpProviderConfig, Lexicons, MockProvider, Pipeline, PromptError,
    PromptLibrary, ProviderError, ProviderMode, DEFAULT_MAX_RETRIES,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Prompts(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub mode: ProviderMode,
    pub seed: u64,
    pub max_retries: u32,
    pub http: HttpProviderConfig,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            mode: ProviderMode::Mock,
            seed: 7,
            max_retries: DEFAULT_MAX_RETRIES,
            http: HttpProviderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub path: PathBuf,
    /// Defaults to `<path>.assets`.
    pub asset_dir: Option<PathBuf>,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection { path: PathBuf::from("storyecho.journal"), asset_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    /// Generation jobs allowed to run at once.
    pub job_parallelism: usize,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection { bind: "127.0.0.1:8080".into(), job_parallelism: 2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub provider: ProviderSection,
    pub store: StoreSection,
    pub server: ServerSection,
    /// Directory of prompt template overrides, one `<stage>.txt` per stage.
    pub prompts_dir: Option<PathBuf>,
    pub constraints: BasicConstraints,
    pub lexicons: Lexicons,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let cfg: Config = toml::from_str(&text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        use crate::domain::Invariants;
        self.constraints
            .check_invariants()
            .map_err(|e| ConfigError::Invalid(format!("constraints: {e}")))?;
        if self.server.job_parallelism == 0 {
            return Err(ConfigError::Invalid("server.job_parallelism must be at least 1".into()));
        }
        Ok(())
    }

    pub fn asset_dir(&self) -> PathBuf {
        self.store
            .asset_dir
            .clone()
            .unwrap_or_else(|| crate::store::default_asset_dir(&self.store.path))
    }

    pub fn prompt_library(&self) -> Result<PromptLibrary, ConfigError> {
        Ok(match &self.prompts_dir {
            Some(dir) => PromptLibrary::load_dir(dir)?,
            None => PromptLibrary::bundled(),
        })
    }

    /// Builds the configured provider. Real mode fails without the credential.
    pub fn provider(&self) -> Result<Arc<dyn GenerationProvider>, ConfigError> {
        Ok(match self.provider.mode {
            ProviderMode::Mock => Arc::new(MockProvider::new(self.provider.seed)),
            ProviderMode::Real => Arc::new(HttpProvider::from_env(self.provider.http.clone())?),
        })
    }

    /// Opens the configured store and wires it to `provider`.
    pub fn open_engine(&self, provider: Arc<dyn GenerationProvider>, clock: Clock) -> Result<Engine, ConfigError> {
        let store = Store::open_with_assets(&self.store.path, self.asset_dir())?;
        let pipeline = self.pipeline_with(provider)?;
        Ok(Engine::new(store, pipeline, self.constraints.clone(), clock)?)
    }

    pub fn pipeline_with(&self, provider: Arc<dyn GenerationProvider>) -> Result<Pipeline, ConfigError> {
        Ok(Pipeline::new(provider, self.prompt_library()?)
            .with_lexicons(self.lexicons.clone())
            .with_max_retries(self.provider.max_retries)
            .with_seed(self.provider.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: Config = toml::from_str("[provider]\nseed = 3\n[server]\njob_parallelism = 4\n").unwrap();
        assert_eq!(cfg.provider.seed, 3);
        assert_eq!(cfg.provider.mode, ProviderMode::Mock);
        assert_eq!(cfg.server.job_parallelism, 4);
        assert_eq!(cfg.constraints, BasicConstraints::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[provider]\ncolour = 1\n").is_err());
    }

    #[test]
    fn real_mode_needs_the_credential() {
        let mut cfg = Config::default();
        cfg.provider.mode = ProviderMode::Real;
        cfg.provider.http.api_key_env = "STORYECHO_TEST_KEY_THAT_IS_NOT_SET".into();
        assert!(matches!(cfg.provider(), Err(ConfigError::Provider(ProviderError::Config(_)))));
    }
}
