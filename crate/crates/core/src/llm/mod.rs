//! Chat-completion client, patch extraction from model output, and the
//! majority vote over repeated runs.

mod extract;
mod http;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patch::CssPatch;
use crate::prompt::Prompt;

pub use extract::{extract_patch, fenced_blocks};
pub use http::HttpBackend;

pub const LLM_API_KEY_ENV: &str = "REDEFIX_LLM_API_KEY";
pub const DEFAULT_MODEL: &str = "Mistral Small 3.1 (24B)";
pub const DEFAULT_MAJORITY_RUNS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("prompt needs ~{tokens} tokens, over the {max} token context")]
    PromptTooLarge { tokens: usize, max: usize },
    #[error("transport: {0}")]
    Transport(String),
    #[error("rate limited by provider (retry after {retry_after:?}s)")]
    RateLimited { retry_after: Option<u64> },
    #[error("provider rejected the prompt as too long: {0}")]
    ContextOverflow(String),
    #[error("provider error {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("mock script exhausted after {0} responses")]
    MockExhausted(usize),
    #[error("mock script {path}: {message}")]
    MockScript { path: PathBuf, message: String },
    #[error("no CSS patch found in the response")]
    NoPatchFound,
    #[error("none of the {0} runs produced a parseable patch")]
    AllRunsUnparseable(usize),
    #[error("invalid llm config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model_id: String,
    pub max_context_tokens: usize,
    /// Tokens kept free for the completion when budgeting prompts.
    pub completion_reserve: usize,
    pub mock_script: Option<PathBuf>,
    pub request_timeout_secs: u64,
    /// Extra request fields (temperature etc.) passed through untouched.
    pub sampling: serde_json::Map<String, serde_json::Value>,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_id: DEFAULT_MODEL.into(),
            max_context_tokens: 128_000,
            completion_reserve: 4096,
            mock_script: None,
            request_timeout_secs: 300,
            sampling: serde_json::Map::new(),
            api_key: None,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_context_tokens == 0 {
            return Err(LlmError::Config("max_context_tokens must be positive".into()));
        }
        if self.completion_reserve >= self.max_context_tokens {
            return Err(LlmError::Config("completion_reserve leaves no room for the prompt".into()));
        }
        Ok(())
    }

    /// Token budget available to the prompt itself.
    pub fn prompt_budget(&self) -> usize {
        self.max_context_tokens.saturating_sub(self.completion_reserve)
    }

    pub fn with_env_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(LLM_API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        self
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, prompt: &Prompt) -> Result<String, LlmError>;
}

/// Replays a JSON array of canned responses in order.
#[derive(Debug)]
pub struct MockBackend {
    responses: Vec<String>,
    next: Mutex<usize>,
}

impl MockBackend {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            responses,
            next: Mutex::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let err = |message: String| LlmError::MockScript {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let responses: Vec<String> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(responses))
    }

    pub fn calls(&self) -> usize {
        *self.next.lock().unwrap()
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, _prompt: &Prompt) -> Result<String, LlmError> {
        let mut next = self.next.lock().unwrap();
        let r = self
            .responses
            .get(*next)
            .cloned()
            .ok_or(LlmError::MockExhausted(self.responses.len()))?;
        *next += 1;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchCandidate {
    pub raw_response: String,
    pub patch: CssPatch,
    pub normalized_key: String,
}

impl PatchCandidate {
    pub fn from_response(raw: String) -> Result<Self, LlmError> {
        let patch = extract_patch(&raw)?;
        Ok(Self {
            normalized_key: patch.normalized_key(),
            patch,
            raw_response: raw,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub candidate: PatchCandidate,
    pub votes: usize,
    pub runs: usize,
    pub unparseable: usize,
}

pub struct LlmClient {
    config: LlmConfig,
    backend: Box<dyn ChatBackend>,
    calls: Mutex<usize>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("config", &self.config).finish_non_exhaustive()
    }
}

impl LlmClient {
    /// Mock backend when `mock_script` is set, HTTP otherwise.
    pub fn from_config(config: LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let backend: Box<dyn ChatBackend> = match &config.mock_script {
            Some(path) => Box::new(MockBackend::load(path)?),
            None => Box::new(HttpBackend::new(&config)?),
        };
        Ok(Self::with_backend(config, backend))
    }

    pub fn with_backend(config: LlmConfig, backend: Box<dyn ChatBackend>) -> Self {
        Self {
            config,
            backend,
            calls: Mutex::new(0),
        }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Requests sent so far (including failed ones).
    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }

    pub fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        if prompt.token_estimate > self.config.max_context_tokens {
            return Err(LlmError::PromptTooLarge {
                tokens: prompt.token_estimate,
                max: self.config.max_context_tokens,
            });
        }
        *self.calls.lock().unwrap() += 1;
        self.backend.send(prompt)
    }

    /// Runs the prompt `n` times and returns the most frequent patch; ties go
    /// to the patch seen first. Runs are sequential, so a scripted mock is
    /// consumed in order.
    pub fn majority_patch(&self, prompt: &Prompt, n: usize) -> Result<MajorityVote, LlmError> {
        if n == 0 {
            return Err(LlmError::Config("majority needs at least one run".into()));
        }
        let mut candidates = Vec::new();
        let mut unparseable = 0;
        for _ in 0..n {
            match PatchCandidate::from_response(self.complete(prompt)?) {
                Ok(c) => candidates.push(c),
                Err(LlmError::NoPatchFound) => unparseable += 1,
                Err(e) => return Err(e),
            }
        }
        let (winner, votes) = vote(&candidates).ok_or(LlmError::AllRunsUnparseable(n))?;
        Ok(MajorityVote {
            candidate: candidates[winner].clone(),
            votes,
            runs: n,
            unparseable,
        })
    }
}

/// Index of the first candidate whose key has the highest count, and that count.
pub fn vote(candidates: &[PatchCandidate]) -> Option<(usize, usize)> {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (i, c) in candidates.iter().enumerate() {
        counts.entry(&c.normalized_key).or_insert((i, 0)).1 += 1;
    }
    counts
        .into_values()
        .min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)))
        .map(|(first, count)| (first, count))
}
