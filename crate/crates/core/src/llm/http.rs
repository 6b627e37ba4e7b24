use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{ChatBackend, LlmConfig, LlmError};
use crate::prompt::Prompt;

const MAX_RETRIES: u32 = 3;

/// OpenAI-style chat completions over HTTP.
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    sampling: serde_json::Map<String, Value>,
    http: reqwest::blocking::Client,
    retry_base: Duration,
}

impl HttpBackend {
    pub fn new(config: &LlmConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: config.endpoint.clone(),
            model: config.model_id.clone(),
            api_key: config.api_key.clone(),
            sampling: config.sampling.clone(),
            http,
            retry_base: Duration::from_millis(1000),
        })
    }

    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    pub fn request_body(&self, prompt: &Prompt) -> Value {
        let mut content = vec![json!({"type": "text", "text": prompt.text()})];
        for img in &prompt.images {
            let b64 = base64::engine::general_purpose::STANDARD.encode(&img.png_bytes);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(self.model));
        body.insert("messages".into(), json!([{"role": "user", "content": content}]));
        for (k, v) in &self.sampling {
            body.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Value::Object(body)
    }
}

fn overflow_message(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    b.contains("context_length") || b.contains("context length") || b.contains("maximum context") || b.contains("too many tokens")
}

impl ChatBackend for HttpBackend {
    fn send(&self, prompt: &Prompt) -> Result<String, LlmError> {
        let body = self.request_body(prompt);
        let mut attempt = 0;
        loop {
            let mut req = self.http.post(&self.endpoint).json(&body);
            if let Some(k) = &self.api_key {
                req = req.bearer_auth(k);
            }
            let (err, wait) = match req.send() {
                Err(e) => (LlmError::Transport(e.to_string()), None),
                Ok(resp) => {
                    let status = resp.status();
                    let retry_after = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<u64>().ok());
                    let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
                    if status.is_success() {
                        let v: Value = serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
                        return v["choices"][0]["message"]["content"]
                            .as_str()
                            .map(str::to_string)
                            .ok_or_else(|| LlmError::BadResponse("no choices[0].message.content".into()));
                    }
                    if status.as_u16() == 429 {
                        (LlmError::RateLimited { retry_after }, retry_after.map(Duration::from_secs))
                    } else if status.is_server_error() {
                        (LlmError::Provider { status: status.as_u16(), body: text }, None)
                    } else if overflow_message(&text) {
                        return Err(LlmError::ContextOverflow(text));
                    } else {
                        return Err(LlmError::Provider { status: status.as_u16(), body: text });
                    }
                }
            };
            if attempt >= MAX_RETRIES {
                return Err(err);
            }
            log::warn!("llm request failed ({err}), retrying");
            std::thread::sleep(wait.unwrap_or(self.retry_base * 2u32.pow(attempt)));
            attempt += 1;
        }
    }
}
