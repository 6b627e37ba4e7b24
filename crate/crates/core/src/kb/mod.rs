//! Stack Overflow knowledge base: ingestion, filtering, cleaning and the
//! per-RLF-type document stores.

mod api;
mod clean;
mod rake;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::RlfType;
use crate::retriever::tokenize;

pub use api::{FixtureApi, HttpApi, SearchPage, StackExchangeApi, DEFAULT_API_BASE, SO_API_KEY_ENV};
pub use clean::clean_html;
pub use rake::{default_stopwords, rake_keywords, DEFAULT_STOPWORDS};

pub const TAGS: [&str; 2] = ["css", "html"];

#[derive(Debug, Error)]
pub enum KbError {
    #[error("Stack Exchange quota exhausted{}", .retry_after.map(|s| format!(" (retry after {s}s)")).unwrap_or_default())]
    QuotaExhausted {
        retry_after: Option<u64>,
        completed_phrases: Vec<String>,
        partial: Vec<SoQuestion>,
    },
    #[error("Stack Exchange request failed: {0}")]
    Http(String),
    #[error("no API key: set {SO_API_KEY_ENV} or pass a fixture directory")]
    MissingKey,
    #[error("no keywords configured for {0}")]
    MissingKeywords(RlfType),
    #[error("knowledge base store {0} not found")]
    MissingStore(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid knowledge base data: {0}")]
    Invalid(String),
}

impl KbError {
    pub(crate) fn quota(retry_after: Option<u64>) -> Self {
        KbError::QuotaExhausted {
            retry_after,
            completed_phrases: Vec::new(),
            partial: Vec::new(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        KbError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub rlf_type: RlfType,
    pub phrases: Vec<String>,
}

impl KeywordSet {
    pub fn validate(&self) -> Result<(), KbError> {
        if self.phrases.is_empty() {
            return Err(KbError::MissingKeywords(self.rlf_type));
        }
        for p in &self.phrases {
            let n = p.split_whitespace().count();
            if !(1..=6).contains(&n) || p.to_lowercase() != *p {
                return Err(KbError::Invalid(format!("keyword phrase {p:?} must be 1-6 lowercase words")));
            }
        }
        Ok(())
    }
}

/// Question as returned by the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoQuestion {
    #[serde(rename = "question_id")]
    pub id: u64,
    pub link: String,
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub score: i64,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub answer_count: u64,
    #[serde(default)]
    pub comment_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoAnswer {
    #[serde(rename = "answer_id")]
    pub id: u64,
    pub question_id: u64,
    pub score: i64,
    #[serde(default)]
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoComment {
    #[serde(rename = "comment_id")]
    pub id: u64,
    /// The answer this comment is attached to.
    pub post_id: u64,
    #[serde(default)]
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbMetadata {
    #[serde(rename = "ID")]
    pub id: u64,
    #[serde(rename = "LINK")]
    pub link: String,
    #[serde(rename = "TITLE")]
    pub title: String,
    /// Question body as received (HTML).
    #[serde(rename = "BODY")]
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbDocument {
    pub rlf_type: RlfType,
    pub metadata: KbMetadata,
    pub cleaned_question: String,
    pub answers: Vec<String>,
    pub comments: Vec<String>,
}

/// True when the only `<` characters start `<code>` or `</code>`.
pub fn is_clean_text(text: &str) -> bool {
    let mut rest = text;
    while let Some(i) = rest.find('<') {
        let tail = &rest[i..];
        if let Some(t) = tail.strip_prefix("<code>").or_else(|| tail.strip_prefix("</code>")) {
            rest = t;
        } else {
            return false;
        }
    }
    true
}

impl KbDocument {
    pub fn validate(&self) -> Result<(), KbError> {
        let bad = |m: &str| Err(KbError::Invalid(format!("document {}: {m}", self.metadata.id)));
        if self.metadata.id == 0 || self.metadata.link.is_empty() || self.metadata.title.is_empty() {
            return bad("incomplete metadata");
        }
        if self.answers.is_empty() && self.comments.is_empty() {
            return bad("no answers or comments");
        }
        let texts = std::iter::once(&self.cleaned_question)
            .chain(&self.answers)
            .chain(&self.comments);
        for t in texts {
            if !is_clean_text(t) {
                return bad("cleaned text contains markup");
            }
        }
        Ok(())
    }

    /// Everything the retriever indexes: title, question, answers, comments.
    pub fn full_text(&self) -> String {
        let mut parts = vec![self.metadata.title.as_str(), self.cleaned_question.as_str()];
        parts.extend(self.answers.iter().map(String::as_str));
        parts.extend(self.comments.iter().map(String::as_str));
        parts.join("\n")
    }
}

fn mentions_property(text: &str, lexicon: &HashSet<&str>) -> bool {
    tokenize(text).iter().any(|t| lexicon.contains(t.as_str()))
}

/// Applies the relevance rules to one question and bundles what survives.
/// Comments are judged on their own, independent of whether the answer they
/// hang off survived.
pub fn filter_and_bundle(
    rlf_type: RlfType,
    q: &SoQuestion,
    answers: &[SoAnswer],
    comments: &[SoComment],
    property_lexicon: &[String],
) -> Option<KbDocument> {
    if answers.is_empty() && comments.is_empty() {
        return None;
    }
    let lexicon: HashSet<&str> = property_lexicon.iter().map(String::as_str).collect();
    let mut kept: Vec<(&SoAnswer, String)> = answers
        .iter()
        .filter(|a| a.score >= 1)
        .map(|a| (a, clean_html(&a.body)))
        .filter(|(_, text)| mentions_property(text, &lexicon))
        .collect();
    kept.sort_by(|a, b| b.0.score.cmp(&a.0.score).then(a.0.id.cmp(&b.0.id)));
    let mut kept_comments: Vec<(u64, String)> = comments
        .iter()
        .map(|c| (c.id, clean_html(&c.body)))
        .filter(|(_, text)| !text.is_empty() && mentions_property(text, &lexicon))
        .collect();
    kept_comments.sort_by_key(|(id, _)| *id);
    if kept.is_empty() && kept_comments.is_empty() {
        return None;
    }
    Some(KbDocument {
        rlf_type,
        metadata: KbMetadata {
            id: q.id,
            link: q.link.clone(),
            title: html_escape::decode_html_entities(&q.title).into_owned(),
            body: q.body.clone(),
        },
        cleaned_question: clean_html(&q.body),
        answers: kept.into_iter().map(|(_, t)| t).collect(),
        comments: kept_comments.into_iter().map(|(_, t)| t).collect(),
    })
}

/// Searches every phrase under each tag, paging until exhausted or
/// `page_cap`. Results are de-duplicated by id, first sighting wins.
pub fn fetch_questions(
    rlf_type: RlfType,
    keywords: &KeywordSet,
    api: &dyn StackExchangeApi,
    page_cap: u32,
) -> Result<Vec<SoQuestion>, KbError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut completed = Vec::new();
    for phrase in &keywords.phrases {
        for tag in TAGS {
            let mut page = 1;
            loop {
                let result = match api.search(phrase, tag, page) {
                    Ok(r) => r,
                    Err(KbError::QuotaExhausted { retry_after, .. }) => {
                        return Err(KbError::QuotaExhausted {
                            retry_after,
                            completed_phrases: completed,
                            partial: out,
                        })
                    }
                    Err(e) => return Err(e),
                };
                for q in result.items {
                    if seen.insert(q.id) {
                        out.push(q);
                    }
                }
                if !result.has_more || page >= page_cap {
                    break;
                }
                page += 1;
            }
        }
        log::debug!("{rlf_type}: phrase {phrase:?} done, {} questions so far", out.len());
        completed.push(phrase.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbBuildConfig {
    pub keywords: Vec<KeywordSet>,
    pub lexicons: BTreeMap<RlfType, Vec<String>>,
    pub page_cap: u32,
}

impl Default for KbBuildConfig {
    fn default() -> Self {
        Self {
            keywords: default_keyword_sets(),
            lexicons: RlfType::REPAIRABLE
                .iter()
                .map(|t| (*t, default_lexicon(*t)))
                .collect(),
            page_cap: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub fetched_questions: usize,
    pub questions: usize,
    pub answers: usize,
    pub comments: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KbStats {
    pub complete: bool,
    pub error: Option<String>,
    pub questions: usize,
    pub answers: usize,
    pub comments: usize,
    pub per_type: BTreeMap<RlfType, TypeStats>,
}

pub fn store_file(dir: &Path, rlf_type: RlfType) -> PathBuf {
    dir.join(format!("{}.jsonl", rlf_type.as_str()))
}

pub const STATS_FILE: &str = "stats.json";

/// Fetches, filters and writes one JSONL store per repairable RLF type plus
/// `stats.json`. Quota exhaustion does not fail the build: whatever was
/// gathered is written and the stats are flagged incomplete.
pub fn build_kb(config: &KbBuildConfig, api: &dyn StackExchangeApi, out_dir: &Path) -> Result<KbStats, KbError> {
    std::fs::create_dir_all(out_dir).map_err(|e| KbError::io(out_dir, e))?;
    let mut stats = KbStats {
        complete: true,
        ..Default::default()
    };
    for rlf_type in RlfType::REPAIRABLE {
        let keywords = config
            .keywords
            .iter()
            .find(|k| k.rlf_type == rlf_type)
            .ok_or(KbError::MissingKeywords(rlf_type))?;
        keywords.validate()?;
        let lexicon = config.lexicons.get(&rlf_type).cloned().unwrap_or_else(|| default_lexicon(rlf_type));

        let mut docs = Vec::new();
        let mut fetched = 0;
        if stats.complete {
            match gather(rlf_type, keywords, &lexicon, api, config.page_cap) {
                Ok((n, d)) => {
                    fetched = n;
                    docs = d;
                }
                Err(Gathered::Partial { fetched: n, docs: d, error }) => {
                    fetched = n;
                    docs = d;
                    stats.complete = false;
                    stats.error = Some(error.to_string());
                }
                Err(Gathered::Failed(e)) => return Err(e),
            }
        }
        docs.sort_by_key(|d| d.metadata.id);
        write_store(&store_file(out_dir, rlf_type), &docs)?;
        let t = TypeStats {
            fetched_questions: fetched,
            questions: docs.len(),
            answers: docs.iter().map(|d| d.answers.len()).sum(),
            comments: docs.iter().map(|d| d.comments.len()).sum(),
        };
        stats.questions += t.questions;
        stats.answers += t.answers;
        stats.comments += t.comments;
        stats.per_type.insert(rlf_type, t);
    }
    let path = out_dir.join(STATS_FILE);
    let text = serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n";
    std::fs::write(&path, text).map_err(|e| KbError::io(&path, e))?;
    Ok(stats)
}

enum Gathered {
    Partial {
        fetched: usize,
        docs: Vec<KbDocument>,
        error: KbError,
    },
    Failed(KbError),
}

fn gather(
    rlf_type: RlfType,
    keywords: &KeywordSet,
    lexicon: &[String],
    api: &dyn StackExchangeApi,
    page_cap: u32,
) -> Result<(usize, Vec<KbDocument>), Gathered> {
    let (questions, pending_error) = match fetch_questions(rlf_type, keywords, api, page_cap) {
        Ok(q) => (q, None),
        Err(KbError::QuotaExhausted {
            retry_after,
            completed_phrases,
            partial,
        }) => (
            partial,
            Some(KbError::QuotaExhausted {
                retry_after,
                completed_phrases,
                partial: Vec::new(),
            }),
        ),
        Err(e) => return Err(Gathered::Failed(e)),
    };
    let fetched = questions.len();
    let partial = |docs, error| Gathered::Partial { fetched, docs, error };
    if let Some(e) = pending_error {
        return Err(partial(Vec::new(), e));
    }
    let ids: Vec<u64> = questions.iter().map(|q| q.id).collect();
    let answers = if ids.is_empty() {
        Vec::new()
    } else {
        match api.answers(&ids) {
            Ok(a) => a,
            Err(e @ KbError::QuotaExhausted { .. }) => return Err(partial(Vec::new(), e)),
            Err(e) => return Err(Gathered::Failed(e)),
        }
    };
    let answer_ids: Vec<u64> = answers.iter().map(|a| a.id).collect();
    let comments = if answer_ids.is_empty() {
        Vec::new()
    } else {
        match api.comments(&answer_ids) {
            Ok(c) => c,
            Err(e @ KbError::QuotaExhausted { .. }) => return Err(partial(Vec::new(), e)),
            Err(e) => return Err(Gathered::Failed(e)),
        }
    };
    let owner: BTreeMap<u64, u64> = answers.iter().map(|a| (a.id, a.question_id)).collect();
    let docs = questions
        .iter()
        .filter_map(|q| {
            let qa: Vec<SoAnswer> = answers.iter().filter(|a| a.question_id == q.id).cloned().collect();
            let qc: Vec<SoComment> = comments
                .iter()
                .filter(|c| owner.get(&c.post_id) == Some(&q.id))
                .cloned()
                .collect();
            filter_and_bundle(rlf_type, q, &qa, &qc, lexicon)
        })
        .collect();
    Ok((fetched, docs))
}

fn write_store(path: &Path, docs: &[KbDocument]) -> Result<(), KbError> {
    let mut f = std::fs::File::create(path).map_err(|e| KbError::io(path, e))?;
    for d in docs {
        let line = serde_json::to_string(d).expect("document serialize");
        writeln!(f, "{line}").map_err(|e| KbError::io(path, e))?;
    }
    Ok(())
}

/// Read access to a built knowledge base directory.
#[derive(Debug, Clone)]
pub struct KbStore {
    dir: PathBuf,
}

impl KbStore {
    pub fn open(dir: &Path) -> Result<Self, KbError> {
        if !dir.join(STATS_FILE).is_file() {
            return Err(KbError::MissingStore(dir.to_path_buf()));
        }
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stats(&self) -> Result<KbStats, KbError> {
        let path = self.dir.join(STATS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| KbError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| KbError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Loads and re-validates every document stored for `rlf_type`.
    pub fn documents(&self, rlf_type: RlfType) -> Result<Vec<KbDocument>, KbError> {
        let path = store_file(&self.dir, rlf_type);
        if !path.is_file() {
            return Err(KbError::MissingStore(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| KbError::io(&path, e))?;
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let doc: KbDocument = serde_json::from_str(line)
                .map_err(|e| KbError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if doc.rlf_type != rlf_type {
                return Err(KbError::Invalid(format!("{}:{}: wrong RLF type", path.display(), i + 1)));
            }
            doc.validate()?;
            docs.push(doc);
        }
        Ok(docs)
    }
}

/// Seed phrases per repairable type, curated by hand from RAKE output over
/// definition texts and common question titles.
pub fn default_keyword_sets() -> Vec<KeywordSet> {
    let set = |t, p: &[&str]| KeywordSet {
        rlf_type: t,
        phrases: p.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        set(
            RlfType::ElementCollision,
            &["elements collide", "elements overlap", "divs overlap", "overlapping elements", "text overlaps"],
        ),
        set(
            RlfType::ElementProtrusion,
            &["overflows parent", "overflows container", "child wider than parent", "content overflows div", "image overflows container"],
        ),
        set(
            RlfType::ViewportProtrusion,
            &["appear outside screen", "horizontal scrollbar", "off screen", "wider than screen", "overflow viewport"],
        ),
        set(
            RlfType::WrappingElements,
            &["elements wrap", "wraps to next line", "items wrap", "navbar wraps", "inline blocks wrap"],
        ),
    ]
}

/// CSS properties relevant to each repairable type.
pub fn default_lexicon(rlf_type: RlfType) -> Vec<String> {
    let props: &[&str] = match rlf_type {
        RlfType::ElementCollision => &["margin", "padding", "position", "top", "left", "float", "display", "flex-wrap", "width"],
        RlfType::ElementProtrusion => &["width", "max-width", "min-width", "box-sizing", "overflow", "padding", "border"],
        RlfType::ViewportProtrusion => &["width", "max-width", "position", "left", "right", "overflow-x"],
        RlfType::WrappingElements => &["width", "white-space", "flex-wrap", "float", "display", "font-size"],
        RlfType::SmallRange => &[],
    };
    props.iter().map(|s| s.to_string()).collect()
}

pub fn all_properties(lexicons: &BTreeMap<RlfType, Vec<String>>) -> BTreeSet<String> {
    lexicons.values().flatten().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: u64) -> SoQuestion {
        SoQuestion {
            id,
            link: format!("https://stackoverflow.com/q/{id}"),
            title: "Divs &amp; spans overlap".into(),
            body: "<p>My <b>divs</b> overlap</p>".into(),
            score: 1,
            tags: vec!["css".into()],
            answer_count: 0,
            comment_count: 0,
        }
    }

    fn a(id: u64, score: i64, body: &str) -> SoAnswer {
        SoAnswer {
            id,
            question_id: 1,
            score,
            body: body.into(),
        }
    }

    fn c(id: u64, body: &str) -> SoComment {
        SoComment {
            id,
            post_id: 10,
            body: body.into(),
        }
    }

    fn lex(p: &[&str]) -> Vec<String> {
        p.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn zero_score_answer_only() {
        let doc = filter_and_bundle(RlfType::ElementCollision, &q(1), &[a(10, 0, "set width")], &[], &lex(&["width"]));
        assert!(doc.is_none());
    }

    #[test]
    fn keeps_answer_mentioning_property() {
        let doc = filter_and_bundle(
            RlfType::ElementProtrusion,
            &q(1),
            &[a(10, 3, "<p>Use <code>box-sizing: border-box</code>.</p>")],
            &[],
            &lex(&["box-sizing"]),
        )
        .unwrap();
        assert_eq!(doc.answers, vec!["Use <code>box-sizing: border-box</code>."]);
        assert_eq!(doc.metadata.title, "Divs & spans overlap");
        assert_eq!(doc.cleaned_question, "My divs overlap");
        doc.validate().unwrap();
    }

    #[test]
    fn composed_rules() {
        let doc = filter_and_bundle(
            RlfType::ElementCollision,
            &q(1),
            &[a(10, 5, "fix the width"), a(11, -1, "width again")],
            &[c(20, "the width is wrong")],
            &lex(&["width"]),
        )
        .unwrap();
        assert_eq!(doc.answers.len(), 1);
        assert_eq!(doc.comments.len(), 1);
    }

    #[test]
    fn nothing_relevant() {
        assert!(filter_and_bundle(RlfType::ElementCollision, &q(1), &[], &[], &lex(&["width"])).is_none());
        assert!(filter_and_bundle(
            RlfType::ElementCollision,
            &q(1),
            &[a(10, 9, "try restarting")],
            &[c(20, "thanks")],
            &lex(&["width"])
        )
        .is_none());
    }

    #[test]
    fn max_width_is_not_width() {
        assert!(filter_and_bundle(RlfType::ElementCollision, &q(1), &[a(10, 2, "max-width")], &[], &lex(&["width"])).is_none());
    }

    #[test]
    fn clean_text_language() {
        assert!(is_clean_text("a <code>b</code> c"));
        assert!(is_clean_text("no tags &lt; here"));
        assert!(!is_clean_text("a <b>b</b>"));
        assert!(!is_clean_text("<code"));
    }

    #[test]
    fn keyword_sets_valid() {
        for k in default_keyword_sets() {
            k.validate().unwrap();
        }
        assert!(KeywordSet { rlf_type: RlfType::ElementCollision, phrases: vec![] }.validate().is_err());
    }
}
