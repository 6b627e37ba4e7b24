use scraper::Selector;

use super::LlmError;
use crate::patch::{parse_css, CssPatch};

/// Fenced code blocks as (info tag, body). An unterminated last block runs
/// to the end of the text.
pub fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let t = line.trim_start();
        match open.take() {
            None => {
                if let Some(tag) = t.strip_prefix("```") {
                    open = Some((tag.trim().to_ascii_lowercase(), Vec::new()));
                }
            }
            Some((tag, mut body)) => {
                if t.trim_end() == "```" {
                    blocks.push((tag, body.join("\n")));
                } else {
                    body.push(line);
                    open = Some((tag, body));
                }
            }
        }
    }
    if let Some((tag, body)) = open {
        blocks.push((tag, body.join("\n")));
    }
    blocks
}

const TAGS: &[&str] = &[
    "a", "article", "aside", "body", "button", "div", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header",
    "html", "i", "img", "input", "label", "li", "main", "nav", "ol", "p", "section", "span", "table", "td", "th", "tr",
    "ul", "figure", "textarea", "select", "iframe", "video", "svg",
];

fn selector_like(word: &str) -> bool {
    if word.starts_with(['.', '#', '[', '*', ':', '>', '+', '~']) || word == "," {
        return true;
    }
    let head = word.split(['.', '#', ':', '[', ',']).next().unwrap_or_default();
    TAGS.contains(&head)
}

// Trailing words of a prose line that look like a selector.
fn trailing_selector(prelude: &str) -> Option<String> {
    let line = prelude.lines().last().unwrap_or_default();
    let line = line.rsplit(": ").next().unwrap_or(line);
    let words: Vec<&str> = line.split_whitespace().collect();
    let start = words.iter().rposition(|w| !selector_like(w)).map_or(0, |i| i + 1);
    let sel = words[start..].join(" ");
    (!sel.is_empty() && Selector::parse(&sel).is_ok()).then_some(sel)
}

// `selector { declarations }` groups embedded in running text.
fn scan_prose(text: &str) -> Option<CssPatch> {
    let mut css = String::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let Some(len) = rest[open + 1..].find(['{', '}']) else { break };
        let close = open + 1 + len;
        if rest.as_bytes()[close] == b'}' {
            let prelude = rest[..open].rsplit('}').next().unwrap_or_default();
            if let Some(sel) = trailing_selector(prelude) {
                css.push_str(&format!("{sel} {{{}}}\n", &rest[open + 1..close]));
            }
            rest = &rest[close + 1..];
        } else {
            rest = &rest[close..];
        }
    }
    parse_css(&css)
}

/// The patch proposed in a model response: the last ```css block, else the
/// last fenced block of any kind that parses, else rule groups found in the
/// prose.
pub fn extract_patch(response: &str) -> Result<CssPatch, LlmError> {
    let blocks = fenced_blocks(response);
    let css = blocks.iter().rev().filter(|(tag, _)| tag == "css").find_map(|(_, b)| parse_css(b));
    css.or_else(|| blocks.iter().rev().find_map(|(_, b)| parse_css(b)))
        .or_else(|| scan_prose(response))
        .ok_or(LlmError::NoPatchFound)
}
