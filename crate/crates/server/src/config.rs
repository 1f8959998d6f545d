//! TOML configuration: storage paths, protocol overrides and the LLM provider.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use lbt_core::llm::http::{ChatCompletionsProvider, DEFAULT_API_KEY_ENV};
use lbt_core::llm::mock::{MockProvider, SyntheticProvider};
use lbt_core::llm::{Backoff, CompletionProvider, LlmGateway};
use lbt_core::service::PlatformConfig;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub port: u16,
    pub bank: PathBuf,
    /// Write generated materials and questions back to the bank file.
    pub save_bank: bool,
    /// Event log. Events are kept in memory only when unset.
    pub events: Option<PathBuf>,
    /// Environment variable holding the researcher token for exports.
    pub admin_token_env: String,
    /// Seconds between scheduler passes over due posttests.
    pub scheduler_seconds: u64,
    pub backoff: Backoff,
    pub platform: PlatformConfig,
    pub provider: ProviderConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            port: 8080,
            bank: PathBuf::from("data/sample_bank.json"),
            save_bank: false,
            events: None,
            admin_token_env: "LBT_ADMIN_TOKEN".into(),
            scheduler_seconds: 300,
            backoff: Backoff::default(),
            platform: PlatformConfig::default(),
            provider: ProviderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Offline generator; no network.
    Synthetic {
        #[serde(default)]
        seed: u64,
    },
    /// Recorded responses keyed by request hash.
    Fixture {
        path: PathBuf,
        /// Answer unrecorded requests with the synthetic generator.
        #[serde(default)]
        synthetic_fallback: bool,
    },
    /// OpenAI-compatible chat completions. The key is read from the
    /// environment, never from this file.
    Openai {
        #[serde(default = "default_base_url")]
        base_url: String,
        model: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout")]
        timeout_seconds: u64,
        #[serde(default)]
        min_interval_ms: u64,
    },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Synthetic { seed: 0 }
    }
}

fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

fn default_timeout() -> u64 {
    60
}

impl ServerConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&raw).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(raw: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(raw)?)
    }

    /// Gateway with the configured provider registered under every provider
    /// id the platform uses.
    pub fn gateway(&self) -> anyhow::Result<LlmGateway> {
        let (provider, interval): (Arc<dyn CompletionProvider>, Duration) = match &self.provider {
            ProviderConfig::Synthetic { seed } => (Arc::new(SyntheticProvider::new(*seed)), Duration::ZERO),
            ProviderConfig::Fixture {
                path,
                synthetic_fallback,
            } => {
                let mut mock = MockProvider::from_fixture_file(path)
                    .with_context(|| format!("loading fixtures from {}", path.display()))?;
                if *synthetic_fallback {
                    mock = mock.with_fallback(Arc::new(SyntheticProvider::new(self.platform.seed)));
                }
                (Arc::new(mock), Duration::ZERO)
            }
            ProviderConfig::Openai {
                base_url,
                model,
                api_key_env,
                timeout_seconds,
                min_interval_ms,
            } => {
                let provider =
                    ChatCompletionsProvider::from_env(base_url, model, api_key_env, Duration::from_secs(*timeout_seconds))
                        .map_err(|_| anyhow::anyhow!("environment variable {api_key_env} is not set"))?;
                (Arc::new(provider), Duration::from_millis(*min_interval_ms))
            }
        };
        let mut gateway = LlmGateway::new(self.backoff);
        for id in [&self.platform.agent.provider_id, &self.platform.generation.provider_id] {
            gateway.register(id, provider.clone(), interval);
        }
        Ok(gateway)
    }
}
