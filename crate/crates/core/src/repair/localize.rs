use std::path::Path;

use scraper::Html;
use serde::{Deserialize, Serialize};

use super::RepairError;
use crate::harness::Page;
use crate::layout::{failure_magnitude, ResponsiveLayoutGraph, RlfRecord};
use crate::patch::selector_for;

pub const MAX_LOCALIZED: usize = 10;
const PROBE_MARKER: &str = "redefix-probe";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedProperty {
    pub xpath: String,
    pub property: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub ranked: Vec<LocalizedProperty>,
}

impl LocalizationResult {
    /// Distinct xpaths, best first.
    pub fn elements(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.ranked {
            if !out.contains(&r.xpath) {
                out.push(r.xpath.clone());
            }
        }
        out
    }

    /// Distinct property names, best first.
    pub fn properties(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.ranked {
            if !out.contains(&r.property) {
                out.push(r.property.clone());
            }
        }
        out
    }
}

/// Trial value that switches a property's layout effect off. `None` for
/// properties with no neutral setting worth probing.
pub fn neutral_value(property: &str) -> Option<&'static str> {
    Some(match property {
        "width" | "height" | "top" | "left" | "right" | "bottom" => "auto",
        "max-width" => "100%",
        "min-width" => "0",
        "position" => "static",
        "float" => "none",
        "display" => "block",
        "margin" | "padding" | "border" => "0",
        "flex-wrap" => "wrap",
        "overflow" | "overflow-x" => "hidden",
        "box-sizing" => "border-box",
        "white-space" => "normal",
        _ => return None,
    })
}

/// Participants, then up to two ancestor levels of each, without the root.
pub fn candidate_elements(rlf: &RlfRecord, rlg: &ResponsiveLayoutGraph) -> Vec<String> {
    let snap = rlg.snapshot(rlf.failure_range.min).unwrap_or_else(|| rlg.widest());
    let mut out: Vec<String> = rlf.participants.clone();
    for p in &rlf.participants {
        for a in snap.ancestors(p).into_iter().take(2) {
            if a != "/html" && !out.iter().any(|o| o == a) {
                out.push(a.to_string());
            }
        }
    }
    out
}

/// Reads `[{xpath, property, score}]` and checks it against the failure.
pub fn load_localization(
    path: &Path,
    rlf: &RlfRecord,
    rlg: &ResponsiveLayoutGraph,
) -> Result<LocalizationResult, RepairError> {
    let bad = |m: String| RepairError::Localization(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let ranked: Vec<LocalizedProperty> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if ranked.is_empty() {
        return Err(RepairError::EmptyCandidates);
    }
    let snap = rlg.snapshot(rlf.failure_range.min).unwrap_or_else(|| rlg.widest());
    for r in &ranked {
        let related = rlf.participants.iter().any(|p| p == &r.xpath || snap.ancestors(p).contains(&r.xpath.as_str()));
        if !related {
            return Err(bad(format!("{} is not a participant or ancestor of one", r.xpath)));
        }
        if r.property.is_empty() || !r.property.chars().all(|c| c.is_ascii_lowercase() || c == '-') {
            return Err(bad(format!("bad property `{}`", r.property)));
        }
        if !r.score.is_finite() {
            return Err(bad(format!("non-finite score for {} {}", r.xpath, r.property)));
        }
    }
    if ranked.windows(2).any(|w| w[0].score < w[1].score) {
        return Err(bad("scores must be in descending order".into()));
    }
    Ok(LocalizationResult { ranked })
}

/// Scores each (element, property) candidate by how much setting the
/// property to its neutral value shrinks the failure at the narrowest
/// failing width. Keeps the ten best improvements.
pub fn probe_localization(
    page: &mut dyn Page,
    rlf: &RlfRecord,
    rlg: &ResponsiveLayoutGraph,
    lexicon: &[String],
) -> Result<LocalizationResult, RepairError> {
    let width = rlf.failure_range.min;
    let before = failure_magnitude(rlf, &page.snapshot_at(width)?, rlg);
    if before <= 0.0 {
        return Err(RepairError::EmptyCandidates);
    }
    let doc = Html::parse_document(&page.document_html()?);
    let mut ranked = Vec::new();
    for xpath in candidate_elements(rlf, rlg) {
        let Ok(selector) = selector_for(&xpath, &doc) else {
            log::debug!("no selector for {xpath}, not probing it");
            continue;
        };
        for property in lexicon {
            let Some(value) = neutral_value(property) else { continue };
            page.inject_style(&format!("{selector} {{ {property}: {value} !important; }}"), PROBE_MARKER)?;
            let snap = page.snapshot_at(width);
            page.remove_style(PROBE_MARKER)?;
            let score = before - failure_magnitude(rlf, &snap?, rlg);
            log::debug!("probe {xpath} {property}: {value} -> {score}");
            if score > 0.0 {
                ranked.push(LocalizedProperty {
                    xpath: xpath.clone(),
                    property: property.clone(),
                    score,
                });
            }
        }
    }
    if ranked.is_empty() {
        return Err(RepairError::EmptyCandidates);
    }
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    ranked.truncate(MAX_LOCALIZED);
    Ok(LocalizationResult { ranked })
}
