use std::collections::HashSet;

use ego_tree::NodeId;
use scraper::{ElementRef, Html, Selector};

use crate::patch::resolve_xpath;

fn open_tag(el: &ElementRef<'_>) -> String {
    let mut s = format!("<{}", el.value().name());
    for (k, v) in el.value().attrs() {
        s.push_str(&format!(" {k}=\"{}\"", html_escape::encode_double_quoted_attribute(v)));
    }
    s.push('>');
    s
}

fn clip(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => format!("{} ...", &s[..i]),
        None => s.to_string(),
    }
}

// Top-level statements of a style sheet, split by brace depth.
fn statements(css: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0usize);
    for (i, c) in css.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    out.push(css[start..=i].trim());
                    start = i + 1;
                }
            }
            _ => {}
        }
    }
    out
}

fn selectors_of(stmt: &str) -> Vec<String> {
    let Some(open) = stmt.find('{') else { return Vec::new() };
    let prelude = stmt[..open].trim();
    if prelude.starts_with('@') {
        // @media and friends: the selectors of the nested rules
        let inner = &stmt[open + 1..stmt.len().saturating_sub(1)];
        return statements(inner).into_iter().flat_map(selectors_of).collect();
    }
    prelude.split(',').map(|s| s.trim().to_string()).collect()
}

/// Source context for the model: the ancestor chain and markup of each
/// participant, followed by the style rules that apply to any of them.
/// Capped at `limit` characters.
pub fn page_excerpt(document_html: &str, stylesheet_text: &str, xpaths: &[String], limit: usize) -> String {
    let doc = Html::parse_document(document_html);
    let mut relevant: HashSet<NodeId> = HashSet::new();
    let mut markup = Vec::new();
    for x in xpaths {
        let Some(el) = resolve_xpath(&doc, x) else { continue };
        let chain: Vec<ElementRef> = el.ancestors().filter_map(ElementRef::wrap).collect();
        let mut lines = Vec::new();
        for (depth, a) in chain.iter().rev().enumerate() {
            if a.value().name() == "html" {
                continue;
            }
            relevant.insert(a.id());
            lines.push(format!("{}{}", "  ".repeat(depth.saturating_sub(1)), open_tag(a)));
        }
        relevant.insert(el.id());
        let indent = "  ".repeat(chain.len().saturating_sub(1));
        lines.push(format!("{indent}{}", clip(&el.html(), 600)));
        markup.push(format!("<!-- {x} -->\n{}", lines.join("\n")));
    }

    let mut rules = Vec::new();
    for stmt in statements(stylesheet_text) {
        let hit = selectors_of(stmt).iter().any(|s| {
            Selector::parse(s)
                .map(|sel| doc.select(&sel).any(|e| relevant.contains(&e.id())))
                .unwrap_or(false)
        });
        if hit {
            rules.push(stmt.to_string());
        }
    }

    let mut out = format!("HTML:\n{}", markup.join("\n"));
    if !rules.is_empty() {
        out.push_str(&format!("\n\nCSS:\n{}", rules.join("\n")));
    }
    clip(&out, limit)
}
