//! A forgiving CSS rule parser for model output: rule blocks, optional
//! `@media` wrappers (flattened), comments, `!important` flags.

use super::{CssDeclaration, CssPatch, CssRule};

fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find("/*") {
        out.push_str(&rest[..i]);
        match rest[i + 2..].find("*/") {
            Some(j) => rest = &rest[i + 2 + j + 2..],
            None => {
                rest = "";
                break;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Splits on `sep` outside quotes and parentheses.
fn split_top(text: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut quote, mut start) = (0i32, None::<char>, 0);
    for (i, c) in text.char_indices() {
        match (quote, c) {
            (Some(q), _) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '"' | '\'') => quote = Some(c),
            (None, '(') => depth += 1,
            (None, ')') => depth -= 1,
            (None, _) if c == sep && depth == 0 => {
                parts.push(&text[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts
}

pub fn parse_declarations(block: &str) -> Vec<CssDeclaration> {
    split_top(block, ';')
        .into_iter()
        .filter_map(|d| {
            let (prop, value) = d.split_once(':')?;
            let property = prop.trim().to_ascii_lowercase();
            let mut value = value.trim().to_string();
            let mut important = false;
            if let Some(i) = value.to_ascii_lowercase().rfind("!important") {
                if value[i + "!important".len()..].trim().is_empty() {
                    value = value[..i].trim_end().to_string();
                    important = true;
                }
            }
            let valid_prop = !property.is_empty()
                && property.chars().all(|c| c.is_ascii_lowercase() || c == '-')
                && property.chars().any(|c| c.is_ascii_lowercase());
            if !valid_prop || value.is_empty() || value.contains(['{', '}']) {
                return None;
            }
            Some(CssDeclaration {
                property,
                value,
                important,
            })
        })
        .collect()
}

fn find_matching_brace(text: &str, open: usize) -> Option<usize> {
    let mut depth = 0;
    for (i, c) in text[open..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(open + i);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_into(text: &str, rules: &mut Vec<CssRule>) {
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let prelude = rest[..open].trim();
        // A stray `}` or `;` before the prelude ends the previous statement.
        let prelude = prelude
            .rsplit(['}', ';'])
            .next()
            .unwrap_or(prelude)
            .trim();
        let Some(close) = find_matching_brace(rest, open) else {
            // unterminated block: parse what is there
            push_rule(prelude, &rest[open + 1..], rules);
            return;
        };
        let body = &rest[open + 1..close];
        if prelude.starts_with('@') {
            if prelude.to_ascii_lowercase().starts_with("@media") || prelude.to_ascii_lowercase().starts_with("@supports") {
                parse_into(body, rules);
            }
        } else {
            push_rule(prelude, body, rules);
        }
        rest = &rest[close + 1..];
    }
}

fn push_rule(prelude: &str, body: &str, rules: &mut Vec<CssRule>) {
    let selector = normalize_selector(prelude);
    if selector.is_empty() || body.contains('{') {
        return;
    }
    let declarations = parse_declarations(body);
    if !declarations.is_empty() {
        rules.push(CssRule { selector, declarations });
    }
}

/// Collapses whitespace runs inside a selector to single spaces.
pub fn normalize_selector(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses every rule found; `None` when nothing usable is there.
pub fn parse_css(text: &str) -> Option<CssPatch> {
    let mut rules = Vec::new();
    parse_into(&strip_comments(text), &mut rules);
    (!rules.is_empty()).then_some(CssPatch { rules })
}
