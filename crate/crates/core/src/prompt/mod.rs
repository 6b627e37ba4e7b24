//! Repair prompts: the five-part initial prompt, retry continuations, and
//! token budgeting.

mod excerpt;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::Screenshot;
use crate::kb::KbDocument;
use crate::layout::{BoundingBox, RlfRecord, RlfType};
use crate::patch::CssPatch;

pub use excerpt::page_excerpt;

pub const DEFAULT_TEMPLATE: &str = include_str!("../../templates/repair-prompt-v1.txt");
pub const DEFAULT_IMAGE_TOKENS: usize = 1600;
pub const DEFAULT_EXCERPT_LIMIT: usize = 4000;
pub const COT_SENTENCE: &str = "Let's think step by step";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("prompt needs {needed} tokens but the budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("bad prompt template: {0}")]
    Template(String),
    #[error("no localized elements to repair")]
    NothingLocalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Role,
    Task,
    Context,
    SoPosts,
    Cot,
}

impl SectionKind {
    pub const ORDER: [SectionKind; 5] = [
        SectionKind::Role,
        SectionKind::Task,
        SectionKind::Context,
        SectionKind::SoPosts,
        SectionKind::Cot,
    ];

    fn tag(&self) -> &'static str {
        match self {
            SectionKind::Role => "role",
            SectionKind::Task => "task",
            SectionKind::Context => "context",
            SectionKind::SoPosts => "so_posts",
            SectionKind::Cot => "cot",
        }
    }
}

/// Section bodies with `{{placeholder}}` slots, parsed from template text.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    bodies: Vec<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("shipped template is valid")
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut bodies: Vec<(String, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            if let Some(tag) = line.strip_prefix("@@ ") {
                bodies.push((tag.trim().to_string(), Vec::new()));
            } else if line.starts_with('#') && bodies.is_empty() {
                continue;
            } else if let Some((_, lines)) = bodies.last_mut() {
                lines.push(line);
            } else if !line.trim().is_empty() {
                return Err(PromptError::Template("text before the first section".into()));
            }
        }
        let tags: Vec<&str> = bodies.iter().map(|(t, _)| t.as_str()).collect();
        let expected: Vec<&str> = SectionKind::ORDER.iter().map(SectionKind::tag).collect();
        if tags != expected {
            return Err(PromptError::Template(format!("sections {tags:?}, expected {expected:?}")));
        }
        let bodies: Vec<String> = bodies.into_iter().map(|(_, l)| l.join("\n").trim().to_string()).collect();
        if !bodies[4].ends_with(COT_SENTENCE) {
            return Err(PromptError::Template(format!("cot section must end with {COT_SENTENCE:?}")));
        }
        Ok(Self { bodies })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub sections: Vec<PromptSection>,
    /// Retry messages appended after the five sections, oldest first.
    pub followups: Vec<String>,
    pub images: Vec<Screenshot>,
    pub token_estimate: usize,
}

impl Prompt {
    pub fn section(&self, kind: SectionKind) -> &str {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| s.text.as_str())
            .unwrap_or_default()
    }

    /// The whole prompt as sent: non-empty sections, then follow-ups.
    pub fn text(&self) -> String {
        self.sections
            .iter()
            .map(|s| s.text.as_str())
            .filter(|t| !t.is_empty())
            .chain(self.followups.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Rough provider-independent token count: a token per four characters and
/// a flat charge per image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenEstimator {
    pub image_tokens: usize,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        Self {
            image_tokens: DEFAULT_IMAGE_TOKENS,
        }
    }
}

impl TokenEstimator {
    pub fn estimate(&self, text: &str, images: usize) -> usize {
        text.chars().count().div_ceil(4) + images * self.image_tokens
    }
}

#[derive(Debug, Clone)]
pub struct RlfContext {
    pub rlf: RlfRecord,
    pub rlf_definition: String,
    /// (xpath or selector shown to the model, CSS property), best first.
    pub localized: Vec<(String, String)>,
    pub coordinates: Vec<(String, BoundingBox)>,
    pub screenshot_inside: Option<Screenshot>,
    pub screenshot_outside: Option<Screenshot>,
    pub page_excerpt: String,
}

#[derive(Debug, Clone)]
pub struct PromptConfig {
    pub template: PromptTemplate,
    pub estimator: TokenEstimator,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            template: PromptTemplate::default(),
            estimator: TokenEstimator::default(),
        }
    }
}

pub fn rlf_definition(t: RlfType) -> &'static str {
    match t {
        RlfType::ElementCollision => {
            "Two sibling elements that sit apart at wide viewports overlap each other at narrower viewports, so one covers the other."
        }
        RlfType::ElementProtrusion => {
            "A child element no longer fits inside its parent at narrower viewports and sticks out of the parent's box."
        }
        RlfType::ViewportProtrusion => {
            "An element extends past the left or right edge of the viewport at narrower viewports, so part of it is off screen."
        }
        RlfType::SmallRange => {
            "A layout state that only exists for a handful of viewport widths between two other layouts."
        }
        RlfType::WrappingElements => {
            "Elements that share one row at wide viewports no longer fit at narrower viewports, and one of them drops onto a new line."
        }
    }
}

fn render_posts(docs: &[KbDocument]) -> String {
    if docs.is_empty() {
        return String::new();
    }
    let mut out = String::from("Similar problems discussed on Stack Overflow, most relevant first:");
    for (i, d) in docs.iter().enumerate() {
        out.push_str(&format!(
            "\n\nPost {}\nTITLE: {}\nLINK: {}\nQUESTION: {}",
            i + 1,
            d.metadata.title,
            d.metadata.link,
            d.cleaned_question
        ));
        if !d.answers.is_empty() {
            out.push_str("\nANSWERS:");
            for a in &d.answers {
                out.push_str(&format!("\n- {a}"));
            }
        }
        if !d.comments.is_empty() {
            out.push_str("\nCOMMENTS:");
            for c in &d.comments {
                out.push_str(&format!("\n- {c}"));
            }
        }
    }
    out
}

fn fmt_px(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r.fract() == 0.0 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

fn render(template: &PromptTemplate, ctx: &RlfContext, excerpt: &str, docs: &[KbDocument]) -> Vec<PromptSection> {
    let pairs = ctx
        .localized
        .iter()
        .enumerate()
        .map(|(i, (el, prop))| format!("{}. {el} : {prop}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let coords = ctx
        .coordinates
        .iter()
        .map(|(el, b)| {
            format!(
                "{el}: x={}, y={}, width={}, height={}",
                fmt_px(b.x),
                fmt_px(b.y),
                fmt_px(b.width),
                fmt_px(b.height)
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let rlf_type = format!(
        "{} (viewport widths {}px to {}px)",
        ctx.rlf.rlf_type.display_name(),
        ctx.rlf.failure_range.min,
        ctx.rlf.failure_range.max
    );
    let posts = render_posts(docs);
    SectionKind::ORDER
        .iter()
        .zip(&template.bodies)
        .map(|(kind, body)| {
            let text = body
                .replace("{{rlf_type}}", &rlf_type)
                .replace("{{definition}}", &ctx.rlf_definition)
                .replace("{{localized_pairs}}", &pairs)
                .replace("{{coordinates}}", &coords)
                .replace("{{excerpt}}", excerpt)
                .replace("{{so_posts}}", &posts);
            PromptSection {
                kind: *kind,
                text: text.trim().to_string(),
            }
        })
        .collect()
}

fn truncate_chars(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => format!("{}\n[truncated]", &s[..i]),
        None => s.to_string(),
    }
}

/// Builds the initial prompt. Over budget, drops the lowest-ranked posts
/// first, then shortens the page excerpt; fails if the rest still does not
/// fit.
pub fn build_prompt(
    ctx: &RlfContext,
    retrieved: &[KbDocument],
    budget: usize,
    config: &PromptConfig,
) -> Result<Prompt, PromptError> {
    if ctx.localized.is_empty() {
        return Err(PromptError::NothingLocalized);
    }
    let images: Vec<Screenshot> = ctx
        .screenshot_inside
        .iter()
        .chain(ctx.screenshot_outside.iter())
        .cloned()
        .collect();
    let make = |excerpt: &str, docs: &[KbDocument]| {
        let sections = render(&config.template, ctx, excerpt, docs);
        let mut p = Prompt {
            sections,
            followups: Vec::new(),
            images: images.clone(),
            token_estimate: 0,
        };
        p.token_estimate = config.estimator.estimate(&p.text(), p.images.len());
        p
    };

    let docs = &retrieved[..retrieved.len().min(5)];
    for keep in (0..=docs.len()).rev() {
        let p = make(&ctx.page_excerpt, &docs[..keep]);
        if p.token_estimate <= budget {
            return Ok(p);
        }
    }
    // No posts left; shorten the excerpt. Each char cut saves at most 1/4
    // token, so search for the longest excerpt that fits.
    let full = ctx.page_excerpt.chars().count();
    let (mut lo, mut hi) = (0usize, full);
    let fits = |n: usize| make(&truncate_chars(&ctx.page_excerpt, n), &[]).token_estimate <= budget;
    if !fits(0) {
        let needed = make(&truncate_chars(&ctx.page_excerpt, 0), &[]).token_estimate;
        return Err(PromptError::BudgetExceeded { needed, budget });
    }
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(make(&truncate_chars(&ctx.page_excerpt, lo), &[]))
}

pub fn retry_message(failed: &CssPatch) -> String {
    format!(
        "The fixed version is still not correct-{}. Please fix it again. {COT_SENTENCE}.",
        failed.to_css().trim_end()
    )
}

/// Appends the retry message for `failed` to the end of `previous`.
pub fn build_retry(
    previous: &Prompt,
    failed: &CssPatch,
    budget: usize,
    config: &PromptConfig,
) -> Result<Prompt, PromptError> {
    let mut p = previous.clone();
    p.followups.push(retry_message(failed));
    p.token_estimate = config.estimator.estimate(&p.text(), p.images.len());
    if p.token_estimate > budget {
        return Err(PromptError::BudgetExceeded {
            needed: p.token_estimate,
            budget,
        });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimates() {
        let e = TokenEstimator::default();
        assert_eq!(e.estimate("12345678", 0), 2);
        assert_eq!(e.estimate("123456789", 0), 3);
        assert_eq!(e.estimate("", 0), 0);
        assert_eq!(e.estimate("", 1), 1600);
    }

    #[test]
    fn shipped_template_parses() {
        let t = PromptTemplate::default();
        assert_eq!(t.bodies.len(), 5);
        assert!(t.bodies[0].contains("automated program repair tool"));
    }

    #[test]
    fn template_order_enforced() {
        let bad = "@@ task\nx\n@@ role\ny\n@@ context\n@@ so_posts\n@@ cot\nLet's think step by step";
        assert!(matches!(PromptTemplate::parse(bad), Err(PromptError::Template(_))));
        let no_cot = "@@ role\n@@ task\n@@ context\n@@ so_posts\n@@ cot\nthink";
        assert!(PromptTemplate::parse(no_cot).is_err());
    }

    #[test]
    fn pixel_formatting() {
        assert_eq!(fmt_px(10.0), "10");
        assert_eq!(fmt_px(10.256), "10.26");
    }
}
