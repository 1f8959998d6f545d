//! Chat-completion access: prompt rendering, provider abstraction with
//! retries, response parsing and deterministic mock providers.

pub mod http;
pub mod mock;
pub mod parse;
pub mod prompts;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_material_response, parse_mcq_response, ParseError};
pub use prompts::{render_material_prompt, render_student_prompt, PromptError};

/// Temperature for material and question-bank generation.
pub const GENERATION_TEMPERATURE: f64 = 0.0;
/// Temperature for the simulated student. Zero made the model repeat itself.
pub const STUDENT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    /// The rendered prompt, sent as the system message.
    pub system_or_user_text: String,
    /// Optional follow-up user message (the teacher's turn for the student agent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_text: Option<String>,
    pub temperature: f64,
    pub max_retries: u32,
    pub provider_id: String,
}

impl PromptRequest {
    pub fn new(text: impl Into<String>, provider_id: impl Into<String>) -> Self {
        PromptRequest {
            system_or_user_text: text.into(),
            user_text: None,
            temperature: GENERATION_TEMPERATURE,
            max_retries: 2,
            provider_id: provider_id.into(),
        }
    }

    pub fn with_user_text(mut self, text: impl Into<String>) -> Self {
        self.user_text = Some(text.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    fn check(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionText {
    pub text: String,
    pub provider_latency_ms: u64,
    /// Provider calls made, including the successful one.
    pub attempt_count: u32,
}

/// Failure of a single provider call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider rate limited the request")]
    RateLimited,
    #[error("provider rejected the credentials")]
    AuthFailure,
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Fatal(String),
    #[error("no fixture for request hash {0}")]
    MissingFixture(String),
}

impl ProviderError {
    fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderError::Timeout | ProviderError::RateLimited | ProviderError::Transient(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("provider timed out")]
    ProviderTimeout,
    #[error("provider rate limited the request")]
    RateLimited,
    #[error("provider rejected the credentials")]
    AuthFailure,
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Provider(String),
}

impl From<ProviderError> for GatewayError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::Timeout => GatewayError::ProviderTimeout,
            ProviderError::RateLimited => GatewayError::RateLimited,
            ProviderError::AuthFailure => GatewayError::AuthFailure,
            other => GatewayError::Provider(other.to_string()),
        }
    }
}

/// A chat-completion backend. Implementations make exactly one call; retry
/// policy lives in [`LlmGateway`].
pub trait CompletionProvider: Send + Sync {
    fn complete_once(&self, request: &PromptRequest) -> Result<String, ProviderError>;
}

impl<F> CompletionProvider for F
where
    F: Fn(&PromptRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete_once(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        self(request)
    }
}

/// Exponential backoff between retries: `base * 2^n`, capped at `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backoff {
    pub base_ms: u64,
    pub max_ms: u64,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base_ms: 500,
            max_ms: 8_000,
        }
    }
}

impl Backoff {
    pub const NONE: Backoff = Backoff { base_ms: 0, max_ms: 0 };

    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_ms.saturating_mul(factor).min(self.max_ms))
    }
}

struct Registered {
    provider: Arc<dyn CompletionProvider>,
    min_interval: Duration,
    last_call: Mutex<Option<Instant>>,
}

impl Registered {
    fn throttle(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut last = self.last_call.lock().unwrap();
        if let Some(prev) = *last {
            let since = prev.elapsed();
            if since < self.min_interval {
                std::thread::sleep(self.min_interval - since);
            }
        }
        *last = Some(Instant::now());
    }
}

/// Routes requests to providers by id and applies retry with backoff.
pub struct LlmGateway {
    providers: HashMap<String, Registered>,
    backoff: Backoff,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.providers.keys().collect();
        ids.sort();
        f.debug_struct("LlmGateway")
            .field("providers", &ids)
            .field("backoff", &self.backoff)
            .finish()
    }
}

impl LlmGateway {
    pub fn new(backoff: Backoff) -> Self {
        LlmGateway {
            providers: HashMap::new(),
            backoff,
        }
    }

    /// Gateway with a single provider registered under `id`.
    pub fn single(id: &str, provider: Arc<dyn CompletionProvider>, backoff: Backoff) -> Self {
        let mut gw = Self::new(backoff);
        gw.register(id, provider, Duration::ZERO);
        gw
    }

    /// Registers a provider. `min_interval` spaces consecutive calls.
    pub fn register(&mut self, id: &str, provider: Arc<dyn CompletionProvider>, min_interval: Duration) {
        self.providers.insert(
            id.to_owned(),
            Registered {
                provider,
                min_interval,
                last_call: Mutex::new(None),
            },
        );
    }

    /// Calls the provider, retrying timeouts, rate limits and transient
    /// failures up to `max_retries` times. Credential failures are not
    /// retried. With `max_retries == 0` the provider's own error surfaces.
    pub fn complete(&self, request: &PromptRequest) -> Result<CompletionText, GatewayError> {
        request.check()?;
        let entry = self
            .providers
            .get(&request.provider_id)
            .ok_or_else(|| GatewayError::UnknownProvider(request.provider_id.clone()))?;

        let mut attempts = 0u32;
        loop {
            attempts += 1;
            entry.throttle();
            let started = Instant::now();
            match entry.provider.complete_once(request) {
                Ok(text) => {
                    return Ok(CompletionText {
                        text,
                        provider_latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempts,
                    })
                }
                Err(e) if e.is_transient() && attempts <= request.max_retries => {
                    std::thread::sleep(self.backoff.delay(attempts - 1));
                }
                Err(e) if e.is_transient() && request.max_retries > 0 => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}
