//! The repair loop: localize, retrieve, prompt, vote, inject, validate, and
//! retry with the failed patch until one is accepted or a limit is hit.

mod localize;

use std::collections::BTreeMap;
use std::path::PathBuf;

use scraper::Html;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{HarnessError, Page, MAX_WIDTH, MIN_WIDTH};
use crate::kb::{default_lexicon, KbStore};
use crate::layout::{detect_rlfs, diff_rlfs, RlfRecord, RlfType};
use crate::llm::{LlmClient, LlmError, PatchCandidate};
use crate::patch::{retarget, scope_patch, selector_for, MediaScopedPatch, PatchError};
use crate::prompt::{
    build_prompt, build_retry, page_excerpt, rlf_definition, PromptConfig, PromptError, RlfContext,
    DEFAULT_EXCERPT_LIMIT,
};
use crate::retriever::{retrieve_context, Embedder, RetrieverConfig, RetrieverError};
use crate::sweep::{sweep, SweepConfig, SweepError};

pub use localize::{
    candidate_elements, load_localization, neutral_value, probe_localization, LocalizationResult, LocalizedProperty,
    MAX_LOCALIZED,
};

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("no element/property candidate reduces the failure")]
    EmptyCandidates,
    #[error("bad localization input: {0}")]
    Localization(String),
    #[error("small-range failures are not repaired")]
    SmallRange,
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retriever(#[from] RetrieverError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepairStatus {
    Repaired,
    FailedTokenBudget,
    FailedMaxIterations,
    FailedUnparseable,
    /// Localization found nothing to change.
    FailedLocalization,
    /// An earlier accepted patch on the same page already removed it.
    ResolvedEarlier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub fixed: bool,
    pub introduced: Vec<RlfRecord>,
}

impl Validation {
    pub fn accepted(&self) -> bool {
        self.fixed && self.introduced.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub prompt_tokens: usize,
    pub prompt_text: String,
    pub candidate: PatchCandidate,
    pub votes: usize,
    /// The scoped patch as injected.
    pub patch_css: String,
    pub validation: Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub rlf: RlfRecord,
    pub status: RepairStatus,
    pub localization: Option<LocalizationResult>,
    pub retrieved_ids: Vec<u64>,
    pub iterations: Vec<IterationRecord>,
    pub final_patch: Option<MediaScopedPatch>,
    pub detail: Option<String>,
}

impl RepairOutcome {
    fn new(rlf: RlfRecord) -> Self {
        Self {
            rlf,
            status: RepairStatus::FailedMaxIterations,
            localization: None,
            retrieved_ids: Vec::new(),
            iterations: Vec::new(),
            final_patch: None,
            detail: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RepairConfig {
    pub max_iterations: usize,
    pub n_majority: usize,
    pub sweep: SweepConfig,
    pub retriever: RetrieverConfig,
    pub prompt: PromptConfig,
    pub lexicons: BTreeMap<RlfType, Vec<String>>,
    pub screenshot_padding: f64,
    pub excerpt_limit: usize,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            n_majority: 5,
            sweep: SweepConfig::default(),
            retriever: RetrieverConfig::default(),
            prompt: PromptConfig::default(),
            lexicons: RlfType::REPAIRABLE.iter().map(|t| (*t, default_lexicon(*t))).collect(),
            screenshot_padding: 40.0,
            excerpt_limit: DEFAULT_EXCERPT_LIMIT,
        }
    }
}

/// What a repair run draws on besides the page. `store: None` is zero-shot:
/// no retrieval and no knowledge-base access at all.
pub struct RepairInputs<'a> {
    pub llm: &'a LlmClient,
    pub store: Option<&'a KbStore>,
    pub embedder: &'a dyn Embedder,
    pub localization_file: Option<PathBuf>,
}

/// Re-sweeps with the patch under `marker` installed and compares against
/// `baseline`. The patch is removed again unless it is accepted.
pub fn validate(
    page: &mut dyn Page,
    rlf: &RlfRecord,
    baseline: &[RlfRecord],
    marker: &str,
    config: &SweepConfig,
) -> Result<Validation, RepairError> {
    let rlg = sweep(page, config)?;
    let current = detect_rlfs(&rlg, config.small_range_threshold);
    let diff = diff_rlfs(baseline, &current);
    let v = Validation {
        fixed: diff.eliminated.iter().any(|e| e.matches(rlf)),
        introduced: diff.introduced,
    };
    if !v.accepted() {
        page.remove_style(marker)?;
    }
    Ok(v)
}

fn next_marker(page: &dyn Page) -> String {
    (0..)
        .map(|i| format!("redefix-patch-{i}"))
        .find(|m| !page.injected_style_ids().contains(m))
        .unwrap()
}

fn element_label(xpath: &str, doc: &Html) -> String {
    match selector_for(xpath, doc) {
        Ok(sel) => format!("{sel} ({xpath})"),
        Err(_) => xpath.to_string(),
    }
}

/// Repairs one failure on a page that may already carry earlier accepted
/// patches. The baseline is re-detected first, so `rlf` is matched against
/// the page as it is now.
pub fn repair(
    page: &mut dyn Page,
    rlf: &RlfRecord,
    inputs: &RepairInputs<'_>,
    config: &RepairConfig,
) -> Result<RepairOutcome, RepairError> {
    if rlf.rlf_type == RlfType::SmallRange {
        return Err(RepairError::SmallRange);
    }
    let rlg = sweep(page, &config.sweep)?;
    let baseline = detect_rlfs(&rlg, config.sweep.small_range_threshold);
    let Some(rlf) = baseline.iter().find(|b| b.matches(rlf)).cloned() else {
        let mut out = RepairOutcome::new(rlf.clone());
        out.status = RepairStatus::ResolvedEarlier;
        return Ok(out);
    };
    let mut out = RepairOutcome::new(rlf.clone());

    let localization = match &inputs.localization_file {
        Some(path) => load_localization(path, &rlf, &rlg),
        None => {
            let lexicon = config.lexicons.get(&rlf.rlf_type).cloned().unwrap_or_default();
            probe_localization(page, &rlf, &rlg, &lexicon)
        }
    };
    let localization = match localization {
        Ok(l) => l,
        Err(RepairError::EmptyCandidates) => {
            out.status = RepairStatus::FailedLocalization;
            out.detail = Some(RepairError::EmptyCandidates.to_string());
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    out.localization = Some(localization.clone());
    let elements = localization.elements();

    let docs = match inputs.store {
        Some(store) => retrieve_context(&localization.properties(), rlf.rlf_type, store, inputs.embedder, &config.retriever)?,
        None => Vec::new(),
    };
    out.retrieved_ids = docs.iter().map(|d| d.metadata.id).collect();

    let range = rlf.failure_range;
    let html = page.document_html()?;
    let doc = Html::parse_document(&html);
    let snap = page.snapshot_at(range.min)?;
    let mut excerpt_paths = rlf.participants.clone();
    excerpt_paths.extend(elements.iter().filter(|e| !rlf.participants.contains(e)).cloned());
    let outside = if range.max < MAX_WIDTH { range.max + 1 } else { range.min.saturating_sub(1).max(MIN_WIDTH) };
    let ctx = RlfContext {
        rlf: rlf.clone(),
        rlf_definition: rlf_definition(rlf.rlf_type).to_string(),
        localized: localization
            .ranked
            .iter()
            .map(|r| (element_label(&r.xpath, &doc), r.property.clone()))
            .collect(),
        coordinates: rlf
            .participants
            .iter()
            .filter_map(|p| snap.visible_box(p).map(|b| (element_label(p, &doc), *b)))
            .collect(),
        screenshot_inside: Some(page.screenshot_region(range.min, &rlf.participants, config.screenshot_padding)?),
        screenshot_outside: Some(page.screenshot_region(outside, &rlf.participants, config.screenshot_padding)?),
        page_excerpt: page_excerpt(&html, &page.stylesheet_text()?, &excerpt_paths, config.excerpt_limit),
    };

    let budget = inputs.llm.config().prompt_budget();
    let mut prompt = match build_prompt(&ctx, &docs, budget, &config.prompt) {
        Ok(p) => p,
        Err(PromptError::BudgetExceeded { needed, budget }) => {
            out.status = RepairStatus::FailedTokenBudget;
            out.detail = Some(format!("initial prompt needs {needed} tokens, budget {budget}"));
            return Ok(out);
        }
        Err(e) => return Err(e.into()),
    };

    for index in 1..=config.max_iterations {
        let vote = match inputs.llm.majority_patch(&prompt, config.n_majority) {
            Ok(v) => v,
            Err(LlmError::AllRunsUnparseable(n)) => {
                out.status = RepairStatus::FailedUnparseable;
                out.detail = Some(format!("iteration {index}: none of {n} responses held a CSS patch"));
                return Ok(out);
            }
            Err(e) => return Err(e.into()),
        };
        let html = page.document_html()?;
        let targeted = retarget(&vote.candidate.patch, &elements, &Html::parse_document(&html))?;
        let scoped = scope_patch(&targeted, range);
        let marker = next_marker(page);
        page.inject_style(&scoped.serialize(), &marker)?;
        let validation = validate(page, &rlf, &baseline, &marker, &config.sweep)?;
        let accepted = validation.accepted();
        log::info!(
            "{} {}: iteration {index} fixed={} introduced={}",
            rlf.rlf_type,
            range,
            validation.fixed,
            validation.introduced.len()
        );
        out.iterations.push(IterationRecord {
            index,
            prompt_tokens: prompt.token_estimate,
            prompt_text: prompt.text(),
            candidate: vote.candidate,
            votes: vote.votes,
            patch_css: scoped.serialize(),
            validation,
        });
        if accepted {
            out.status = RepairStatus::Repaired;
            out.final_patch = Some(scoped);
            return Ok(out);
        }
        if index == config.max_iterations {
            break;
        }
        prompt = match build_retry(&prompt, &targeted, budget, &config.prompt) {
            Ok(p) => p,
            Err(PromptError::BudgetExceeded { needed, budget }) => {
                out.status = RepairStatus::FailedTokenBudget;
                out.detail = Some(format!("retry prompt needs {needed} tokens, budget {budget}"));
                return Ok(out);
            }
            Err(e) => return Err(e.into()),
        };
    }
    out.status = RepairStatus::FailedMaxIterations;
    Ok(out)
}
