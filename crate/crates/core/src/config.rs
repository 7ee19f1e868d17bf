//! Provider configuration: `<root>/config` (TOML) overlaid with `B2D_*`
//! environment variables.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::http::HttpProviders;
use crate::providers::mock::MockProviders;
use crate::providers::{ProviderError, Providers, RetryPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid value for {var}: {value:?}")]
    Env { var: &'static str, value: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!("unknown provider {other:?}; expected mock or http")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub chat_model: String,
    pub image_model: String,
    pub embed_model: String,
    pub embed_dims: usize,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key: None,
            chat_model: "gpt-4o".into(),
            image_model: "gpt-image-1".into(),
            embed_model: "text-embedding-3-large".into(),
            embed_dims: 3072,
            timeout_ms: 120_000,
            max_retries: 1,
            backoff_ms: 250,
            temperature: 0.7,
        }
    }
}

impl ProviderConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { transport_retries: self.max_retries, backoff_ms: self.backoff_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub provider: ProviderKind,
    /// Seed for the mock providers.
    pub seed: u64,
    pub providers: ProviderConfig,
}

fn env_parse<T: FromStr>(var: &'static str) -> Result<Option<T>, ConfigError> {
    match std::env::var(var) {
        Ok(value) if !value.trim().is_empty() => {
            value.trim().parse().map(Some).map_err(|_| ConfigError::Env { var, value })
        }
        _ => Ok(None),
    }
}

impl AppConfig {
    /// Reads `<root>/config` when present, then applies env overrides.
    pub fn load(root: &Path) -> Result<Self, ConfigError> {
        let path = root.join("config");
        let mut config = if path.exists() {
            let text = std::fs::read_to_string(&path)
                .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
        } else {
            Self::default()
        };
        config.apply_env()?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_env_only() -> Self {
        let mut config = Self::default();
        // Best effort: invalid values fall back to defaults.
        let _ = config.apply_env();
        config
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Some(kind) = env_parse::<ProviderKind>("B2D_PROVIDER")? {
            self.provider = kind;
        }
        if let Some(seed) = env_parse("B2D_SEED")? {
            self.seed = seed;
        }
        let p = &mut self.providers;
        if let Some(v) = env_parse("B2D_HTTP_ENDPOINT")? {
            p.endpoint = v;
        }
        if let Some(v) = env_parse("B2D_HTTP_API_KEY")? {
            p.api_key = Some(v);
        }
        if let Some(v) = env_parse("B2D_CHAT_MODEL")? {
            p.chat_model = v;
        }
        if let Some(v) = env_parse("B2D_IMAGE_MODEL")? {
            p.image_model = v;
        }
        if let Some(v) = env_parse("B2D_EMBED_MODEL")? {
            p.embed_model = v;
        }
        if let Some(v) = env_parse("B2D_TIMEOUT_MS")? {
            p.timeout_ms = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.providers.timeout_ms == 0 {
            return Err(ConfigError::Parse("timeout_ms must be positive".into()));
        }
        Ok(())
    }

    /// Builds the configured providers. The mock handle is returned too so
    /// callers can inspect its call log or inject faults.
    pub fn build_providers(&self) -> Result<(Providers, Option<Arc<MockProviders>>), ConfigError> {
        match self.provider {
            ProviderKind::Mock => {
                let mock = Arc::new(MockProviders::new(self.seed));
                Ok((Providers::from_mock(mock.clone()), Some(mock)))
            }
            ProviderKind::Http => {
                let http = Arc::new(HttpProviders::new(self.providers.clone())?);
                Ok((Providers { chat: http.clone(), images: http.clone(), embedder: http }, None))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_is_read() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("config"),
            "provider = \"http\"\nseed = 9\n[providers]\nendpoint = \"http://localhost:1\"\ntimeout_ms = 50\n",
        )
        .unwrap();
        let c = AppConfig::load(dir.path()).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.providers.timeout_ms, 50);
        assert_eq!(c.providers.chat_model, "gpt-4o");
        assert!(c.build_providers().is_ok());
    }

    #[test]
    fn zero_timeout_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config"), "[providers]\ntimeout_ms = 0\n").unwrap();
        assert!(AppConfig::load(dir.path()).is_err());
    }

    #[test]
    fn missing_file_gives_mock_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let c = AppConfig::load(dir.path()).unwrap();
        // Env may override in CI; only the parse path is checked here.
        assert!(c.providers.timeout_ms > 0);
        assert_eq!("mock".parse::<ProviderKind>().unwrap(), ProviderKind::Mock);
        assert!("grpc".parse::<ProviderKind>().is_err());
    }
}
