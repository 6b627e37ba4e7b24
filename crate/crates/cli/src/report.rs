use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use redefix_core::layout::RlfRecord;
use redefix_core::repair::{RepairOutcome, RepairStatus};

pub const REPORT_FILE: &str = "report.json";
pub const INDEX_FILE: &str = "index.html";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    /// Paths relative to the output directory.
    pub before_png: Option<String>,
    pub after_png: Option<String>,
    pub patch_css: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEntry {
    pub outcome: RepairOutcome,
    pub artifacts: Artifacts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub attempted: usize,
    pub repaired: usize,
}

/// Run details that legitimately differ between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub schema_version: u32,
    pub page_url: String,
    pub zero_shot: bool,
    pub baseline: Vec<RlfRecord>,
    pub outcomes: Vec<OutcomeEntry>,
    pub totals: Totals,
    /// Model requests made over the whole run.
    pub llm_calls: usize,
    pub metadata: RunMetadata,
}

impl RepairReport {
    pub fn totals_of(outcomes: &[OutcomeEntry]) -> Totals {
        Totals {
            attempted: outcomes.len(),
            repaired: outcomes
                .iter()
                .filter(|o| o.outcome.status == RepairStatus::Repaired)
                .count(),
        }
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("no report at {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn esc(s: &str) -> String {
    html_escape::encode_text(s).into_owned()
}

fn figure(label: &str, src: Option<&str>) -> String {
    match src {
        Some(s) => format!(
            "<figure><img src=\"{}\" alt=\"{label}\"><figcaption>{label}</figcaption></figure>",
            html_escape::encode_double_quoted_attribute(s)
        ),
        None => format!("<figure><p>no screenshot</p><figcaption>{label}</figcaption></figure>"),
    }
}

/// Static review page: one before/after pair per repair attempt. The two
/// screenshots are labeled neutrally so reviewers are not told which one is
/// patched.
pub fn render_html(report: &RepairReport) -> String {
    let mut body = String::new();
    for (i, entry) in report.outcomes.iter().enumerate() {
        let o = &entry.outcome;
        body.push_str(&format!(
            "<section class=\"pair\">\n<h2>{}. {} at {}</h2>\n<p>Status: {:?}. Iterations: {}.</p>\n<div class=\"shots\">{}{}</div>\n",
            i + 1,
            esc(o.rlf.rlf_type.display_name()),
            esc(&o.rlf.failure_range.to_string()),
            o.status,
            o.iterations.len(),
            figure("version 1", entry.artifacts.before_png.as_deref()),
            figure("version 2", entry.artifacts.after_png.as_deref()),
        ));
        if let Some(p) = &o.final_patch {
            body.push_str(&format!("<pre>{}</pre>\n", esc(&p.serialize())));
        }
        body.push_str("</section>\n");
    }
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Repair report: {url}</title>\n<style>\n\
         body {{ font-family: sans-serif; margin: 2em; }}\n.shots {{ display: flex; gap: 1em; }}\n\
         figure {{ margin: 0; }}\nimg {{ max-width: 45vw; border: 1px solid #ccc; }}\n</style>\n</head>\n<body>\n\
         <h1>{url}</h1>\n<p>Repaired {r} of {a} failures.</p>\n{body}</body>\n</html>\n",
        url = esc(&report.page_url),
        r = report.totals.repaired,
        a = report.totals.attempted,
    )
}
