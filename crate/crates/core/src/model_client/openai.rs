use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    Backend, BackendError, CompletionRequest, CompletionResponse, TokenLogprob, TopLogprob,
};

/// OpenAI-compatible `/chat/completions` backend.
pub struct OpenAiBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    top_logprobs: u8,
    http: reqwest::blocking::Client,
}

impl OpenAiBackend {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client builds");
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            top_logprobs: 5,
            http,
        }
    }

    /// Reads the bearer token from `api_key_env`; a missing variable means
    /// no Authorization header (local servers usually need none).
    pub fn from_env(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key_env: &str,
    ) -> Self {
        Self::new(base_url, model, std::env::var(api_key_env).ok())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if request.logprob_request {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(self.top_logprobs);
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireTop>,
}

#[derive(Deserialize)]
struct WireTop {
    token: String,
    logprob: f64,
}

/// Decodes a chat-completions reply body.
pub(crate) fn decode_reply(
    body: &str,
    backend_id: &str,
) -> Result<CompletionResponse, BackendError> {
    let decode_err = |message: String| BackendError::Decode {
        message,
        body: body.to_string(),
    };
    let parsed: ChatResponse = serde_json::from_str(body).map_err(|e| decode_err(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| decode_err("reply has no choices".into()))?;
    let text = choice
        .message
        .content
        .ok_or_else(|| decode_err("reply message has no content".into()))?;
    let token_logprobs = choice.logprobs.and_then(|l| l.content).map(|tokens| {
        tokens
            .into_iter()
            .map(|t| TokenLogprob {
                token: t.token,
                logprob: t.logprob.min(0.0),
                top: t
                    .top_logprobs
                    .into_iter()
                    .map(|a| TopLogprob {
                        token: a.token,
                        logprob: a.logprob.min(0.0),
                    })
                    .collect(),
            })
            .collect()
    });
    Ok(CompletionResponse {
        text,
        token_logprobs,
        backend_id: backend_id.to_string(),
    })
}

impl Backend for OpenAiBackend {
    fn id(&self) -> String {
        format!("openai:{}@{}", self.model, self.base_url)
    }

    fn generate(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let mut call = self.http.post(self.endpoint()).json(&self.body(request));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let reply = call
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = reply.status();
        let body = reply
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transport(format!("HTTP {status}: {body}")));
        }
        if !status.is_success() {
            return Err(BackendError::Rejected {
                status: status.as_u16(),
                body,
            });
        }
        decode_reply(&body, &self.id())
    }
}
