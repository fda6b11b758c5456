//! OpenAI-compatible `/chat/completions` transport.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ModelSpec, TEMPERATURE};

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpBackend {
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { agent }
    }

    pub fn endpoint(spec: &ModelSpec) -> String {
        format!("{}/chat/completions", spec.base_url.as_str().trim_end_matches('/'))
    }
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&self, spec: &ModelSpec, prompt: &str) -> Result<String, BackendError> {
        let mut request = self.agent.post(Self::endpoint(spec));
        if !spec.api_key_env.is_empty() {
            let key = std::env::var(&spec.api_key_env)
                .map_err(|_| BackendError::Auth(format!("environment variable {} is not set", spec.api_key_env)))?;
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let body = ChatRequest {
            model: &spec.model_id,
            messages: [Message { role: "user", content: prompt }],
            temperature: TEMPERATURE,
        };
        let mut response = request.send_json(&body).map_err(|e| BackendError::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| BackendError::Retryable(e.to_string()))?;
        match status {
            200..=299 => {}
            429 => return Err(BackendError::RateLimited(format!("HTTP 429: {}", snippet(&text)))),
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}: {}", snippet(&text)))),
            408 | 500..=599 => return Err(BackendError::Retryable(format!("HTTP {status}: {}", snippet(&text)))),
            _ => return Err(BackendError::Fatal(format!("HTTP {status}: {}", snippet(&text)))),
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("unreadable completion body: {e}")))?;
        Ok(parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default())
    }
}

fn snippet(body: &str) -> &str {
    let end = body.char_indices().nth(200).map_or(body.len(), |(i, _)| i);
    &body[..end]
}
