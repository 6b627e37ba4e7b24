//! CSS patches: parsing model output, media-query scoping, canonical
//! serialization, and XPath to selector mapping.

mod parse;
mod select;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::WidthRange;

pub use parse::{normalize_selector, parse_css, parse_declarations};
pub use select::{resolve_xpath, retarget, selector_for, selector_matches};

#[derive(Debug, Error, PartialEq)]
pub enum PatchError {
    #[error("no CSS rules found")]
    NoRules,
    #[error("xpath {0} does not resolve in the document")]
    UnresolvableXpath(String),
    #[error("selector `{0}` does not identify exactly one element")]
    AmbiguousSelector(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CssDeclaration {
    pub property: String,
    pub value: String,
    pub important: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CssRule {
    pub selector: String,
    pub declarations: Vec<CssDeclaration>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CssPatch {
    pub rules: Vec<CssRule>,
}

impl CssPatch {
    pub fn parse(text: &str) -> Result<Self, PatchError> {
        parse_css(text).ok_or(PatchError::NoRules)
    }

    /// Plain rule text, used when a failed patch is quoted back to the model.
    pub fn to_css(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            out.push_str(&r.selector);
            out.push_str(" {\n");
            for d in &r.declarations {
                let bang = if d.important { " !important" } else { "" };
                out.push_str(&format!("  {}: {}{bang};\n", d.property, d.value));
            }
            out.push_str("}\n");
        }
        out
    }

    /// Comparison key for voting: whitespace-insensitive, properties
    /// lowercased, declarations sorted by property, rules sorted by selector.
    pub fn normalized_key(&self) -> String {
        let mut rules: Vec<String> = self
            .rules
            .iter()
            .map(|r| {
                let mut decls: Vec<String> = r
                    .declarations
                    .iter()
                    .map(|d| format!("{}:{}", squeeze(&d.property.to_ascii_lowercase()), squeeze(&d.value)))
                    .collect();
                decls.sort();
                format!("{}{{{}}}", squeeze(&r.selector), decls.join(";"))
            })
            .collect();
        rules.sort();
        rules.concat()
    }
}

// Whitespace removed around punctuation, other runs collapsed to one space.
fn squeeze(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = String::with_capacity(collapsed.len());
    let chars: Vec<char> = collapsed.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        if *c == ' ' {
            let prev = out.chars().last();
            let next = chars.get(i + 1);
            let punct = |c: char| ",>+~:;()[]=".contains(c);
            if prev.is_some_and(punct) || next.is_some_and(|n| punct(*n)) {
                continue;
            }
        }
        out.push(*c);
    }
    out
}

/// A patch wrapped in an inclusive width media query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaScopedPatch {
    pub min_width: u32,
    pub max_width: u32,
    pub patch: CssPatch,
}

/// Marks every declaration `!important` and attaches the failure range.
pub fn scope_patch(patch: &CssPatch, range: WidthRange) -> MediaScopedPatch {
    let mut patch = patch.clone();
    for r in &mut patch.rules {
        for d in &mut r.declarations {
            d.important = true;
        }
    }
    MediaScopedPatch {
        min_width: range.min,
        max_width: range.max,
        patch,
    }
}

impl MediaScopedPatch {
    pub fn range(&self) -> WidthRange {
        WidthRange::new(self.min_width, self.max_width)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!(
            "@media (min-width: {}px) and (max-width: {}px) {{\n",
            self.min_width, self.max_width
        );
        for r in &self.patch.rules {
            out.push_str(&format!("  {} {{\n", r.selector));
            for d in &r.declarations {
                out.push_str(&format!("    {}: {} !important;\n", d.property, d.value));
            }
            out.push_str("  }\n");
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(text: &str) -> CssPatch {
        CssPatch::parse(text).unwrap()
    }

    #[test]
    fn exact_serialization() {
        let s = scope_patch(&patch(".a { width: 50%; }"), WidthRange::new(320, 767));
        assert_eq!(
            s.serialize(),
            "@media (min-width: 320px) and (max-width: 767px) {\n  .a {\n    width: 50% !important;\n  }\n}\n"
        );
        assert_eq!(s.serialize(), s.serialize());
    }

    #[test]
    fn scoping_is_idempotent_and_keeps_order() {
        let p = patch(".a { width: 50% !important; float: none; }");
        let s = scope_patch(&p, WidthRange::new(400, 400));
        assert_eq!((s.min_width, s.max_width), (400, 400));
        let props: Vec<&str> = s.patch.rules[0].declarations.iter().map(|d| d.property.as_str()).collect();
        assert_eq!(props, ["width", "float"]);
        assert!(s.patch.rules[0].declarations.iter().all(|d| d.important));
        assert_eq!(scope_patch(&s.patch, s.range()), s);
    }

    #[test]
    fn round_trip_fixed_point() {
        let s = scope_patch(&patch("#x > p:nth-child(2) { margin: 0 auto; max-width: calc(100% - 2em) }"), WidthRange::new(320, 599));
        let text = s.serialize();
        let back = scope_patch(&CssPatch::parse(&text).unwrap(), s.range());
        assert_eq!(back, s);
        assert_eq!(back.serialize(), text);
    }

    #[test]
    fn key_ignores_layout_differences() {
        let a = patch(".a{width:50%;float:none}\n.b { margin : 0 }");
        let b = patch(".b {margin: 0;}\n.a {\n  float: none;\n  WIDTH: 50%;\n}");
        assert_eq!(a.normalized_key(), b.normalized_key());
        assert_ne!(a.normalized_key(), patch(".a{width:51%;float:none}.b{margin:0}").normalized_key());
        assert_eq!(squeeze("body  >  div:nth-child( 2 )"), "body>div:nth-child(2)");
    }
}
