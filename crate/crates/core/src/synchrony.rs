//! Synchrony classification of sections.
//!
//! For one feature, each section contributes the paired values of the two
//! speakers (leader first). The Spearman correlation over those pairs
//! classifies the section: synchronous when r >= +threshold with p below
//! alpha, anti-synchronous when r <= -threshold with p below alpha, neutral
//! otherwise. Conversation-level ratios count the *union* of pair indices
//! covered by synchronous (resp. anti-synchronous) sections, over all pairs
//! of the chopped turn list, so overlapping sections are not double counted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prosody::{Feature, FeatureVec};
use crate::sectioning::Section;
use crate::stats::{self, CorrResult};
use crate::Corr;

/// Sections with fewer usable pairs than this are unanalyzable.
pub const MIN_USABLE_PAIRS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynchronyError {
    #[error("invalid threshold: rho threshold {rho} must be in (0, 1]")]
    BadRhoThreshold { rho: String },
    #[error("invalid threshold: alpha {alpha} must be in (0, 1)")]
    BadAlpha { alpha: String },
}

/// Classification thresholds: correlation magnitude and significance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncThresholds {
    /// Minimum |r| for a synchronous / anti-synchronous call (inclusive).
    pub rho_threshold: f64,
    /// Significance level; p must be strictly below it.
    pub alpha: f64,
}

impl Default for SyncThresholds {
    fn default() -> Self {
        SyncThresholds {
            rho_threshold: 0.5,
            alpha: 0.05,
        }
    }
}

impl SyncThresholds {
    pub fn validate(&self) -> Result<(), SynchronyError> {
        if !(self.rho_threshold > 0.0 && self.rho_threshold <= 1.0) {
            return Err(SynchronyError::BadRhoThreshold {
                rho: format!("{}", self.rho_threshold),
            });
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SynchronyError::BadAlpha {
                alpha: format!("{}", self.alpha),
            });
        }
        Ok(())
    }
}

/// Synchrony state of one section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncState {
    Synchronous,
    AntiSynchronous,
    Neutral,
}

/// What a section yielded for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SectionOutcome {
    /// Enough usable pairs; carries the correlation and its state.
    Classified { state: SyncState, corr: Corr },
    /// Too few usable pairs (or a degenerate constant series).
    Unanalyzable { usable_pairs: usize },
}

impl SectionOutcome {
    /// State for ratio purposes; unanalyzable sections count as neutral.
    pub fn state_or_neutral(&self) -> SyncState {
        match self {
            SectionOutcome::Classified { state, .. } => *state,
            SectionOutcome::Unanalyzable { .. } => SyncState::Neutral,
        }
    }

    /// One-character code for compact report rendering.
    pub fn code(&self) -> char {
        match self {
            SectionOutcome::Classified { state, .. } => match state {
                SyncState::Synchronous => 'S',
                SyncState::AntiSynchronous => 'A',
                SyncState::Neutral => 'N',
            },
            SectionOutcome::Unanalyzable { .. } => 'U',
        }
    }
}

/// Collects the (leader, follower) value pairs of a section for one
/// feature, skipping pairs where either side is missing.
///
/// `features` must be aligned to the chopped turn list the section indexes.
pub fn section_pairs(
    section: &Section,
    features: &[FeatureVec],
    feature: Feature,
) -> Vec<(f64, f64)> {
    let mut pairs = Vec::with_capacity(section.pair_count());
    for p in section.pair_range() {
        let first = features.get(2 * p).and_then(|fv| fv.get(feature));
        let second = features.get(2 * p + 1).and_then(|fv| fv.get(feature));
        if let (Some(a), Some(b)) = (first, second) {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Spearman correlation across a section's usable pairs. `None` when fewer
/// than [`MIN_USABLE_PAIRS`] pairs are usable or either side is constant.
pub fn section_correlation(
    section: &Section,
    features: &[FeatureVec],
    feature: Feature,
) -> Option<Corr> {
    let pairs = section_pairs(section, features, feature);
    if pairs.len() < MIN_USABLE_PAIRS {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    stats::spearman(&x, &y).ok()
}

/// Applies the threshold rule to one correlation result.
///
/// The magnitude comparison is inclusive (r = +0.5 qualifies); the
/// significance comparison is strict (p = alpha does not).
pub fn classify(corr: &CorrResult<f64>, thresholds: &SyncThresholds) -> SyncState {
    if corr.p < thresholds.alpha {
        if corr.r >= thresholds.rho_threshold {
            return SyncState::Synchronous;
        }
        if corr.r <= -thresholds.rho_threshold {
            return SyncState::AntiSynchronous;
        }
    }
    SyncState::Neutral
}

/// Correlates and classifies every section of a layout for one feature.
pub fn classify_sections(
    sections: &[Section],
    features: &[FeatureVec],
    feature: Feature,
    thresholds: &SyncThresholds,
) -> Vec<SectionOutcome> {
    sections
        .iter()
        .map(|section| match section_correlation(section, features, feature) {
            Some(corr) => SectionOutcome::Classified {
                state: classify(&corr, thresholds),
                corr,
            },
            None => SectionOutcome::Unanalyzable {
                usable_pairs: section_pairs(section, features, feature).len(),
            },
        })
        .collect()
}

/// Conversation-level synchrony ratios for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRatios {
    /// Fraction of pairs covered by at least one synchronous section.
    pub sync_ratio: f64,
    /// Fraction of pairs covered by at least one anti-synchronous section.
    pub anti_ratio: f64,
    /// Pairs covered by a synchronous section.
    pub sync_pairs: usize,
    /// Pairs covered by an anti-synchronous section.
    pub anti_pairs: usize,
    /// Pairs covered by both kinds at once; such pairs count in both
    /// ratios and the conversation is flagged in the report.
    pub ambiguous_pairs: usize,
    /// All pairs of the chopped turn list (the ratio denominator).
    pub total_pairs: usize,
}

/// Merges section states into pair-level coverage and ratios.
///
/// `total_pairs` is the pair count of the chopped turn list; pairs past the
/// last section (a tail shorter than one step) stay uncovered and only
/// enlarge the denominator.
pub fn state_ratios(
    sections: &[Section],
    outcomes: &[SectionOutcome],
    total_pairs: usize,
) -> StateRatios {
    debug_assert_eq!(sections.len(), outcomes.len());
    let mut sync_cover = vec![false; total_pairs];
    let mut anti_cover = vec![false; total_pairs];
    for (section, outcome) in sections.iter().zip(outcomes) {
        let cover = match outcome.state_or_neutral() {
            SyncState::Synchronous => &mut sync_cover,
            SyncState::AntiSynchronous => &mut anti_cover,
            SyncState::Neutral => continue,
        };
        for p in section.pair_range() {
            debug_assert!(p < total_pairs, "section pairs must fit the chopped list");
            if p < total_pairs {
                cover[p] = true;
            }
        }
    }
    let sync_pairs = sync_cover.iter().filter(|&&c| c).count();
    let anti_pairs = anti_cover.iter().filter(|&&c| c).count();
    let ambiguous_pairs = sync_cover
        .iter()
        .zip(&anti_cover)
        .filter(|(&s, &a)| s && a)
        .count();
    let denom = total_pairs.max(1) as f64;
    StateRatios {
        sync_ratio: sync_pairs as f64 / denom,
        anti_ratio: anti_pairs as f64 / denom,
        sync_pairs,
        anti_pairs,
        ambiguous_pairs,
        total_pairs,
    }
}
