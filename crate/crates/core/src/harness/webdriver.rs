//! Minimal W3C WebDriver client: just the commands the harness needs.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::HarnessError;

#[derive(Debug, Clone)]
pub struct WebDriverClient {
    endpoint: String,
    http: reqwest::blocking::Client,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRect {
    pub width: f64,
    pub height: f64,
}

impl WebDriverClient {
    pub fn new(endpoint: &str, request_timeout: Duration) -> Result<Self, HarnessError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .connect_timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| HarnessError::Protocol {
                error: "client".into(),
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            http,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn send(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> Result<Value, HarnessError> {
        let url = format!("{}{}", self.endpoint, path);
        let mut req = self.http.request(method, &url);
        // WebDriver requires a JSON body on every POST, even an empty one.
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().map_err(|e| {
            if e.is_connect() {
                HarnessError::EndpointUnreachable(format!("{}: {e}", self.endpoint))
            } else if e.is_timeout() {
                HarnessError::NavigationTimeout
            } else {
                HarnessError::Protocol {
                    error: "transport".into(),
                    message: e.to_string(),
                }
            }
        })?;
        let status = resp.status();
        let payload: Value = resp.json().map_err(|e| HarnessError::Protocol {
            error: "decode".into(),
            message: e.to_string(),
        })?;
        let value = payload.get("value").cloned().unwrap_or(Value::Null);
        if status.is_success() {
            return Ok(value);
        }
        let error = value
            .get("error")
            .and_then(Value::as_str)
            .unwrap_or("unknown error")
            .to_string();
        let message = value
            .get("message")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        Err(match error.as_str() {
            "timeout" => HarnessError::NavigationTimeout,
            "javascript error" | "script timeout" => HarnessError::Script(message),
            "invalid session id" | "no such window" => HarnessError::Closed,
            _ => HarnessError::Protocol { error, message },
        })
    }

    pub fn new_session(&self, capabilities: &Value) -> Result<String, HarnessError> {
        let v = self.send(
            reqwest::Method::POST,
            "/session",
            Some(json!({ "capabilities": capabilities })),
        )?;
        v.get("sessionId")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| HarnessError::Protocol {
                error: "session".into(),
                message: format!("no sessionId in {v}"),
            })
    }

    pub fn delete_session(&self, session: &str) -> Result<(), HarnessError> {
        self.send(reqwest::Method::DELETE, &format!("/session/{session}"), None)
            .map(|_| ())
    }

    pub fn set_timeouts(&self, session: &str, page_load: Duration, script: Duration) -> Result<(), HarnessError> {
        self.send(
            reqwest::Method::POST,
            &format!("/session/{session}/timeouts"),
            Some(json!({
                "pageLoad": page_load.as_millis() as u64,
                "script": script.as_millis() as u64,
            })),
        )
        .map(|_| ())
    }

    pub fn navigate(&self, session: &str, url: &str) -> Result<(), HarnessError> {
        self.send(
            reqwest::Method::POST,
            &format!("/session/{session}/url"),
            Some(json!({ "url": url })),
        )
        .map(|_| ())
    }

    pub fn set_window_rect(&self, session: &str, width: u32, height: u32) -> Result<WindowRect, HarnessError> {
        let v = self.send(
            reqwest::Method::POST,
            &format!("/session/{session}/window/rect"),
            Some(json!({ "width": width, "height": height })),
        )?;
        Ok(WindowRect {
            width: v.get("width").and_then(Value::as_f64).unwrap_or(0.0),
            height: v.get("height").and_then(Value::as_f64).unwrap_or(0.0),
        })
    }

    pub fn execute(&self, session: &str, script: &str, args: Vec<Value>) -> Result<Value, HarnessError> {
        self.send(
            reqwest::Method::POST,
            &format!("/session/{session}/execute/sync"),
            Some(json!({ "script": script, "args": args })),
        )
    }

    /// Viewport screenshot as PNG bytes.
    pub fn screenshot(&self, session: &str) -> Result<Vec<u8>, HarnessError> {
        let v = self.send(
            reqwest::Method::GET,
            &format!("/session/{session}/screenshot"),
            None,
        )?;
        let b64 = v.as_str().ok_or_else(|| HarnessError::Screenshot("non-string payload".into()))?;
        base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| HarnessError::Screenshot(e.to_string()))
    }
}
