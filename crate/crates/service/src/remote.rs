//! Chat backend for OpenAI-compatible completion endpoints.

use async_trait::async_trait;
use fraudlens_core::assistant::{BackendError, ChatBackend, SessionContext};
use serde_json::{json, Value};

use crate::config::RemoteAssistantConfig;

#[derive(Debug, Clone)]
pub struct HttpChatBackend {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChatBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpChatBackend { client: reqwest::Client::new(), endpoint: endpoint.into(), model: model.into(), api_key }
    }

    pub fn from_config(config: &RemoteAssistantConfig) -> Self {
        let api_key = config.api_key_env.as_deref().and_then(|name| std::env::var(name).ok());
        Self::new(&config.endpoint, &config.model, api_key)
    }
}

/// Facts from the session appended to the system prompt so the model can
/// refer to the user's latest verdict or audit.
pub fn context_note(context: &SessionContext) -> String {
    let mut lines = Vec::new();
    if let Some(v) = &context.last_verdict {
        lines.push(format!(
            "Latest verification: {} `{}` scored {}/100 ({:?}).",
            v.entity.kind.as_str(),
            v.entity.canonical,
            v.display_score,
            v.label
        ));
    }
    if let Some(a) = &context.last_audit {
        let triggered: Vec<&str> = a.indicators.iter().filter(|i| i.triggered).map(|i| i.indicator.as_str()).collect();
        lines.push(format!("Latest connection audit, triggered indicators: {}.", triggered.join(", ")));
    }
    if !context.locale.is_empty() {
        lines.push(format!("Answer in the language with code `{}`.", context.locale));
    }
    lines.join("\n")
}

#[async_trait]
impl ChatBackend for HttpChatBackend {
    async fn complete(&self, system_prompt: &str, user_text: &str, context: &SessionContext) -> Result<String, BackendError> {
        let note = context_note(context);
        let system = if note.is_empty() { system_prompt.to_string() } else { format!("{system_prompt}\n\n{note}") };
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user_text},
            ],
        });
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(BackendError::Unavailable(format!("status {}", response.status())));
        }
        let value: Value = response.json().await.map_err(|e| BackendError::Unavailable(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .ok_or(BackendError::Empty)
    }
}
