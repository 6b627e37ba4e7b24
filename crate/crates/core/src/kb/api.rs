//! Stack Exchange API access: a live HTTP client and a canned fixture.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use super::{KbError, SoAnswer, SoComment, SoQuestion};

pub const SO_API_KEY_ENV: &str = "REDEFIX_SO_API_KEY";
pub const DEFAULT_API_BASE: &str = "https://api.stackexchange.com/2.3";

#[derive(Debug, Clone, Default)]
pub struct SearchPage {
    pub items: Vec<SoQuestion>,
    pub has_more: bool,
}

pub trait StackExchangeApi {
    /// One page of `search/advanced` restricted to a single tag.
    fn search(&self, query: &str, tag: &str, page: u32) -> Result<SearchPage, KbError>;
    fn answers(&self, question_ids: &[u64]) -> Result<Vec<SoAnswer>, KbError>;
    fn comments(&self, answer_ids: &[u64]) -> Result<Vec<SoComment>, KbError>;
}

#[derive(Debug, Deserialize)]
struct Wrapper<T> {
    #[serde(default = "Vec::new")]
    items: Vec<T>,
    #[serde(default)]
    has_more: bool,
    quota_remaining: Option<i64>,
    backoff: Option<u64>,
}

#[derive(Debug)]
pub struct HttpApi {
    base: String,
    key: Option<String>,
    site: String,
    http: reqwest::blocking::Client,
    min_interval: Duration,
    retry_base: Duration,
    max_retries: u32,
    next_slot: Mutex<Instant>,
    exhausted: Mutex<bool>,
}

impl HttpApi {
    pub fn new(base: &str, key: Option<String>) -> Result<Self, KbError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .gzip(true)
            .build()
            .map_err(|e| KbError::Http(e.to_string()))?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            key,
            site: "stackoverflow".into(),
            http,
            // 25 requests per second
            min_interval: Duration::from_millis(40),
            retry_base: Duration::from_millis(500),
            max_retries: 3,
            next_slot: Mutex::new(Instant::now()),
            exhausted: Mutex::new(false),
        })
    }

    pub fn from_env() -> Result<Self, KbError> {
        let key = std::env::var(SO_API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            return Err(KbError::MissingKey);
        }
        Self::new(DEFAULT_API_BASE, key)
    }

    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    fn wait_turn(&self) {
        let mut slot = self.next_slot.lock().unwrap();
        let now = Instant::now();
        if *slot > now {
            std::thread::sleep(*slot - now);
        }
        *slot = Instant::now().max(*slot) + self.min_interval;
    }

    fn get<T: DeserializeOwned>(&self, path: &str, params: &[(&str, String)]) -> Result<Wrapper<T>, KbError> {
        if *self.exhausted.lock().unwrap() {
            return Err(KbError::quota(None));
        }
        let mut query: Vec<(&str, String)> = params.to_vec();
        query.push(("site", self.site.clone()));
        query.push(("filter", "withbody".into()));
        if let Some(k) = &self.key {
            query.push(("key", k.clone()));
        }
        let url = format!("{}{}", self.base, path);
        let mut attempt = 0;
        loop {
            self.wait_turn();
            let result = self.http.get(&url).query(&query).send();
            let retryable = match result {
                Ok(resp) => {
                    let status = resp.status();
                    let body: Value = resp.json().map_err(|e| KbError::Http(format!("{url}: {e}")))?;
                    if let Some(id) = body.get("error_id").and_then(Value::as_i64) {
                        let msg = body.get("error_message").and_then(Value::as_str).unwrap_or_default();
                        let name = body.get("error_name").and_then(Value::as_str).unwrap_or_default();
                        if id == 502 || name == "throttle_violation" {
                            *self.exhausted.lock().unwrap() = true;
                            return Err(KbError::quota(retry_after_from(msg)));
                        }
                        if status.is_server_error() {
                            format!("{name}: {msg}")
                        } else {
                            return Err(KbError::Http(format!("{url}: {name}: {msg}")));
                        }
                    } else if status.is_success() {
                        let wrapper: Wrapper<T> = serde_json::from_value(body)
                            .map_err(|e| KbError::Http(format!("{url}: {e}")))?;
                        if let Some(b) = wrapper.backoff {
                            let mut slot = self.next_slot.lock().unwrap();
                            *slot = (*slot).max(Instant::now() + Duration::from_secs(b));
                        }
                        if wrapper.quota_remaining == Some(0) {
                            *self.exhausted.lock().unwrap() = true;
                        }
                        return Ok(wrapper);
                    } else if status.is_server_error() || status.as_u16() == 429 {
                        format!("HTTP {status}")
                    } else {
                        return Err(KbError::Http(format!("{url}: HTTP {status}")));
                    }
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.max_retries {
                return Err(KbError::Http(format!("{url}: {retryable} (after {attempt} retries)")));
            }
            std::thread::sleep(self.retry_base * 2u32.pow(attempt));
            attempt += 1;
        }
    }

    fn by_ids<T: DeserializeOwned>(&self, kind: &str, ids: &[u64], tail: &str) -> Result<Vec<T>, KbError> {
        let mut out = Vec::new();
        for chunk in ids.chunks(100) {
            let joined = chunk.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
            let mut page = 1;
            loop {
                let w: Wrapper<T> = self.get(
                    &format!("/{kind}/{joined}/{tail}"),
                    &[("page", page.to_string()), ("pagesize", "100".into())],
                )?;
                out.extend(w.items);
                if !w.has_more || page >= 25 {
                    break;
                }
                page += 1;
            }
        }
        Ok(out)
    }
}

fn retry_after_from(message: &str) -> Option<u64> {
    // "too many requests from this IP, more requests available in 8640 seconds"
    let idx = message.find("available in ")?;
    message[idx + 13..].split_whitespace().next()?.parse().ok()
}

impl StackExchangeApi for HttpApi {
    fn search(&self, query: &str, tag: &str, page: u32) -> Result<SearchPage, KbError> {
        let w: Wrapper<SoQuestion> = self.get(
            "/search/advanced",
            &[
                ("q", query.to_string()),
                ("tagged", tag.to_string()),
                ("page", page.to_string()),
                ("pagesize", "100".into()),
                ("order", "desc".into()),
                ("sort", "relevance".into()),
            ],
        )?;
        Ok(SearchPage {
            items: w.items,
            has_more: w.has_more,
        })
    }

    fn answers(&self, question_ids: &[u64]) -> Result<Vec<SoAnswer>, KbError> {
        self.by_ids("questions", question_ids, "answers")
    }

    fn comments(&self, answer_ids: &[u64]) -> Result<Vec<SoComment>, KbError> {
        self.by_ids("answers", answer_ids, "comments")
    }
}

/// Canned API responses read from `questions.json`, `answers.json` and
/// `comments.json` in one directory. Search matches a phrase as a
/// case-insensitive substring of title or body, restricted to the tag. An
/// optional `quota.json` (`{"requests": n}`) makes the (n+1)-th call fail
/// with quota exhaustion.
#[derive(Debug)]
pub struct FixtureApi {
    questions: Vec<SoQuestion>,
    answers: Vec<SoAnswer>,
    comments: Vec<SoComment>,
    quota: Option<usize>,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
struct QuotaFile {
    requests: usize,
}

impl FixtureApi {
    pub fn load(dir: &Path) -> Result<Self, KbError> {
        fn read<T: DeserializeOwned>(path: &Path) -> Result<T, KbError> {
            let text = std::fs::read_to_string(path).map_err(|e| KbError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| KbError::Invalid(format!("{}: {e}", path.display())))
        }
        if !dir.is_dir() {
            return Err(KbError::Invalid(format!("fixture directory {} not found", dir.display())));
        }
        let quota_path = dir.join("quota.json");
        let quota = if quota_path.is_file() {
            Some(read::<QuotaFile>(&quota_path)?.requests)
        } else {
            None
        };
        Ok(Self {
            questions: read(&dir.join("questions.json"))?,
            answers: read(&dir.join("answers.json"))?,
            comments: read(&dir.join("comments.json"))?,
            quota,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn charge(&self) -> Result<(), KbError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        match self.quota {
            Some(q) if n >= q => Err(KbError::quota(Some(86400))),
            _ => Ok(()),
        }
    }
}

impl StackExchangeApi for FixtureApi {
    fn search(&self, query: &str, tag: &str, page: u32) -> Result<SearchPage, KbError> {
        self.charge()?;
        if page > 1 {
            return Ok(SearchPage::default());
        }
        let q = query.to_lowercase();
        let items = self
            .questions
            .iter()
            .filter(|x| x.tags.iter().any(|t| t == tag))
            .filter(|x| x.title.to_lowercase().contains(&q) || x.body.to_lowercase().contains(&q))
            .cloned()
            .collect();
        Ok(SearchPage { items, has_more: false })
    }

    fn answers(&self, question_ids: &[u64]) -> Result<Vec<SoAnswer>, KbError> {
        self.charge()?;
        Ok(self
            .answers
            .iter()
            .filter(|a| question_ids.contains(&a.question_id))
            .cloned()
            .collect())
    }

    fn comments(&self, answer_ids: &[u64]) -> Result<Vec<SoComment>, KbError> {
        self.charge()?;
        Ok(self
            .comments
            .iter()
            .filter(|c| answer_ids.contains(&c.post_id))
            .cloned()
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_retry_after() {
        assert_eq!(
            retry_after_from("too many requests from this IP, more requests available in 8640 seconds"),
            Some(8640)
        );
        assert_eq!(retry_after_from("nope"), None);
    }
}
