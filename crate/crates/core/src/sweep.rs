//! Viewport sweeps: sample widths, tighten failure boundaries, build the RLG.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{HarnessError, Page};
use crate::layout::{
    build_rlg, detect_rlfs, width_facts, LayoutError, LayoutSnapshot, ResponsiveLayoutGraph, RlfRecord,
    DEFAULT_SMALL_RANGE_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub min: u32,
    pub max: u32,
    pub step: u32,
    /// Bisect between samples whose layouts differ, down to 1 px.
    pub refine: bool,
    /// Cap on extra snapshots taken while refining.
    pub max_refinements: usize,
    pub small_range_threshold: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            min: 320,
            max: 1400,
            step: 10,
            refine: true,
            max_refinements: 600,
            small_range_threshold: DEFAULT_SMALL_RANGE_THRESHOLD,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.min >= self.max {
            return Err(SweepError::Config(format!("min {} must be below max {}", self.min, self.max)));
        }
        if self.step == 0 {
            return Err(SweepError::Config("step must be at least 1".into()));
        }
        Ok(())
    }

    /// min, min+step, ..., always ending at max.
    pub fn sample_widths(&self) -> Vec<u32> {
        let mut out: Vec<u32> = (self.min..=self.max).step_by(self.step.max(1) as usize).collect();
        if out.last() != Some(&self.max) {
            out.push(self.max);
        }
        out
    }
}

/// Snapshots `page` across the configured widths and builds its RLG.
pub fn sweep(page: &mut dyn Page, config: &SweepConfig) -> Result<ResponsiveLayoutGraph, SweepError> {
    config.validate()?;
    let mut snaps: BTreeMap<u32, LayoutSnapshot> = BTreeMap::new();
    for w in config.sample_widths() {
        snaps.insert(w, page.snapshot_at(w)?);
    }
    if config.refine {
        refine(page, &mut snaps, config.max_refinements)?;
    }
    Ok(build_rlg(snaps.into_values().collect())?)
}

pub fn detect_page(page: &mut dyn Page, config: &SweepConfig) -> Result<Vec<RlfRecord>, SweepError> {
    let rlg = sweep(page, config)?;
    Ok(detect_rlfs(&rlg, config.small_range_threshold))
}

// Every pair of neighbouring widths whose facts differ hides at least one
// boundary; bisect until the neighbours are 1 px apart.
fn refine(
    page: &mut dyn Page,
    snaps: &mut BTreeMap<u32, LayoutSnapshot>,
    budget: usize,
) -> Result<(), HarnessError> {
    let widest = snaps.values().next_back().expect("at least one sample").clone();
    let mut facts: BTreeMap<u32, BTreeSet<String>> =
        snaps.iter().map(|(w, s)| (*w, width_facts(s, &widest))).collect();
    let mut pending: Vec<(u32, u32)> = facts
        .keys()
        .zip(facts.keys().skip(1))
        .filter(|(a, b)| facts[*a] != facts[*b])
        .map(|(a, b)| (*a, *b))
        .collect();
    let mut spent = 0;
    while let Some((lo, hi)) = pending.pop() {
        if hi - lo < 2 {
            continue;
        }
        if spent >= budget {
            log::warn!("boundary refinement budget of {budget} snapshots exhausted");
            break;
        }
        let mid = lo + (hi - lo) / 2;
        let snap = page.snapshot_at(mid)?;
        spent += 1;
        let f = width_facts(&snap, &widest);
        if f != facts[&lo] {
            pending.push((lo, mid));
        }
        if f != facts[&hi] {
            pending.push((mid, hi));
        }
        facts.insert(mid, f);
        snaps.insert(mid, snap);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_end_at_max() {
        let c = SweepConfig {
            min: 320,
            max: 345,
            step: 10,
            ..Default::default()
        };
        assert_eq!(c.sample_widths(), vec![320, 330, 340, 345]);
        assert_eq!(SweepConfig::default().sample_widths().len(), 109);
    }

    #[test]
    fn rejects_bad_config() {
        let c = SweepConfig {
            min: 500,
            max: 400,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SweepConfig {
            step: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
