//! OpenAI-compatible chat-completions provider.

use std::fmt;
use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionProvider, PromptRequest, ProviderError};

/// Default environment variable holding the provider API key.
pub const DEFAULT_API_KEY_ENV: &str = "LBT_LLM_API_KEY";

#[derive(Clone)]
pub struct ChatCompletionsProvider {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl fmt::Debug for ChatCompletionsProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatCompletionsProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl ChatCompletionsProvider {
    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`.
    pub fn new(base_url: &str, model: &str, api_key: String, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        ChatCompletionsProvider {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_owned(),
            api_key,
            agent,
        }
    }

    /// Reads the API key from `env_var`.
    pub fn from_env(base_url: &str, model: &str, env_var: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let key = std::env::var(env_var).map_err(|_| ProviderError::AuthFailure)?;
        Ok(Self::new(base_url, model, key, timeout))
    }

    fn body(&self, request: &PromptRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_or_user_text})];
        if let Some(user) = &request.user_text {
            messages.push(json!({"role": "user", "content": user}));
        }
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
        })
    }
}

impl CompletionProvider for ChatCompletionsProvider {
    fn complete_once(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        let response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.body(request));
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(ProviderError::Timeout),
            Err(e) => return Err(ProviderError::Transient(e.to_string())),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::AuthFailure),
            429 => return Err(ProviderError::RateLimited),
            408 | 500..=599 => return Err(ProviderError::Transient(format!("HTTP {status}"))),
            _ => return Err(ProviderError::Fatal(format!("HTTP {status}"))),
        }
        let body: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Fatal(format!("bad response body: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Fatal("response has no choices[0].message.content".into()))
    }
}
