//! Corpus-level orchestration: per-conversation synchrony and entrainment
//! over the N grid, correlation of the four derived metrics with session
//! ratings, most-significant grid selection, and rating inter-correlations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Conversation, RatingKind, RatingsTable, Turn};
use crate::entrainment::{
    difference_series, entrainment_stats, trend, DifferenceSeries, TimeAxis, TrendResult,
};
use crate::prosody::{Feature, FeatureVec, TurnProsody};
use crate::sectioning::{build_sections, chop, Direction, Section, SectionError, SectionSpec};
use crate::stats::{self, Stars};
use crate::synchrony::{classify_sections, state_ratios, SectionOutcome, StateRatios, SyncThresholds};

/// Bumped whenever any emitted artifact changes shape.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Default section-size grid.
pub const DEFAULT_GRID: [usize; 4] = [20, 30, 40, 50];
/// Default section step.
pub const DEFAULT_STEP: usize = 10;
/// Default significance level for convergence/divergence trends.
pub const DEFAULT_TREND_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("corpus holds no conversations")]
    EmptyCorpus,
    #[error("direction {direction}: {source}")]
    Chop {
        direction: Direction,
        #[source]
        source: SectionError,
    },
    #[error(transparent)]
    Section(#[from] SectionError),
}

fn bad_config(field: &str, reason: impl Into<String>) -> AnalysisError {
    AnalysisError::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// The four conversation-level metrics correlated with ratings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    SyncRatio,
    AntiRatio,
    DiffMean,
    DiffStd,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::SyncRatio,
        MetricKind::AntiRatio,
        MetricKind::DiffMean,
        MetricKind::DiffStd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::SyncRatio => "sync_ratio",
            MetricKind::AntiRatio => "anti_ratio",
            MetricKind::DiffMean => "diff_mean",
            MetricKind::DiffStd => "diff_std",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Addresses one metric column in the analysis grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MetricKey {
    pub feature: Feature,
    pub metric: MetricKind,
    pub n_turns: usize,
    pub direction: Direction,
}

/// Everything `run_full_analysis` needs to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub grid: Vec<usize>,
    pub step: usize,
    pub thresholds: SyncThresholds,
    pub trend_alpha: f64,
    pub directions: Vec<Direction>,
    pub time_axis: TimeAxis,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            grid: DEFAULT_GRID.to_vec(),
            step: DEFAULT_STEP,
            thresholds: SyncThresholds::default(),
            trend_alpha: DEFAULT_TREND_ALPHA,
            directions: vec![Direction::ClientFirst],
            time_axis: TimeAxis::MidpointSeconds,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.grid.is_empty() {
            return Err(bad_config("grid", "needs at least one section size"));
        }
        for (i, &n) in self.grid.iter().enumerate() {
            // SectionSpec repeats the full N/M checks; surface them here
            // with the grid position attached.
            SectionSpec::new(n, self.step, Direction::ClientFirst).map_err(|e| {
                bad_config(&format!("grid[{i}]"), e.to_string())
            })?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for &n in &self.grid {
            if !seen.insert(n) {
                return Err(bad_config("grid", format!("duplicate section size {n}")));
            }
        }
        if !(self.trend_alpha > 0.0 && self.trend_alpha < 1.0) {
            return Err(bad_config(
                "trend_alpha",
                format!("{} must lie in (0, 1)", self.trend_alpha),
            ));
        }
        if self.directions.is_empty() {
            return Err(bad_config("directions", "needs at least one direction"));
        }
        let mut seen_dir = std::collections::BTreeSet::new();
        for &d in &self.directions {
            if !seen_dir.insert(d) {
                return Err(bad_config("directions", format!("duplicate direction {d:?}")));
            }
        }
        self.thresholds
            .validate()
            .map_err(|e| bad_config("thresholds", e.to_string()))?;
        Ok(())
    }
}

/// A loaded conversation with normalized features, ready to analyze.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedConversation {
    pub id: String,
    pub turns: Vec<Turn>,
    pub normalized: Vec<FeatureVec>,
}

impl PreparedConversation {
    pub fn new(conversation: &Conversation, prosody: &[TurnProsody]) -> Self {
        debug_assert_eq!(conversation.turns.len(), prosody.len());
        PreparedConversation {
            id: conversation.id.clone(),
            turns: conversation.turns.clone(),
            normalized: prosody.iter().map(|p| p.normalized).collect(),
        }
    }
}

/// One feature's outcomes within one (direction, N) layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGridAnalysis {
    /// Per-section state codes (S/A/N/U) in section order; compact view of
    /// `outcomes`.
    pub states: String,
    pub outcomes: Vec<SectionOutcome>,
    pub ratios: StateRatios,
    pub series: DifferenceSeries,
    pub diff_mean: Option<f64>,
    pub diff_std: Option<f64>,
    pub trend: TrendResult,
}

impl FeatureGridAnalysis {
    fn analyzable_sections(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, SectionOutcome::Classified { .. }))
            .count()
    }

    /// Conversation-level value of one metric, `None` when the underlying
    /// data could not support it (no analyzable section / empty series).
    pub fn metric(&self, metric: MetricKind) -> Option<f64> {
        match metric {
            MetricKind::SyncRatio => {
                (self.analyzable_sections() > 0).then_some(self.ratios.sync_ratio)
            }
            MetricKind::AntiRatio => {
                (self.analyzable_sections() > 0).then_some(self.ratios.anti_ratio)
            }
            MetricKind::DiffMean => self.diff_mean,
            MetricKind::DiffStd => self.diff_std,
        }
    }
}

/// All features at one section size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAnalysis {
    pub n_turns: usize,
    pub sections: Vec<Section>,
    pub features: BTreeMap<Feature, FeatureGridAnalysis>,
}

/// One direction's view of a conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionAnalysis {
    pub direction: Direction,
    pub lead_dropped: usize,
    pub tail_dropped: usize,
    pub pair_count: usize,
    /// Section sizes skipped because the chopped conversation is shorter
    /// than one window.
    pub skipped_n: Vec<usize>,
    pub grids: Vec<GridAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationAnalysis {
    pub id: String,
    pub turn_count: usize,
    pub directions: Vec<DirectionAnalysis>,
}

impl ConversationAnalysis {
    fn grid(&self, direction: Direction, n_turns: usize) -> Option<&GridAnalysis> {
        self.directions
            .iter()
            .find(|d| d.direction == direction)
            .and_then(|d| d.grids.iter().find(|g| g.n_turns == n_turns))
    }

    /// Metric value for one key, if this conversation supports it.
    pub fn metric(&self, key: &MetricKey) -> Option<f64> {
        self.grid(key.direction, key.n_turns)
            .and_then(|g| g.features.get(&key.feature))
            .and_then(|f| f.metric(key.metric))
    }

    /// True when any feature at any layout has a pair covered by both
    /// synchronous and anti-synchronous sections.
    pub fn has_ambiguous_pairs(&self) -> bool {
        self.directions.iter().any(|d| {
            d.grids
                .iter()
                .any(|g| g.features.values().any(|f| f.ratios.ambiguous_pairs > 0))
        })
    }
}

/// Chops, sections, classifies and differences one conversation for every
/// requested direction and section size.
pub fn analyze_conversation(
    prep: &PreparedConversation,
    config: &AnalysisConfig,
) -> Result<ConversationAnalysis, AnalysisError> {
    let mut directions = Vec::with_capacity(config.directions.len());
    for &direction in &config.directions {
        let chopped = chop(&prep.turns, direction).map_err(|source| AnalysisError::Chop {
            direction,
            source,
        })?;
        let features = chopped.slice(&prep.normalized);
        let total_pairs = chopped.pair_count();

        let mut skipped_n = Vec::new();
        let mut grids = Vec::new();
        for &n in &config.grid {
            let spec = SectionSpec::new(n, config.step, direction)?;
            let sections = build_sections(&chopped.turns, &spec)?;
            if sections.is_empty() {
                skipped_n.push(n);
                continue;
            }
            let mut by_feature = BTreeMap::new();
            for feature in Feature::ALL {
                let outcomes =
                    classify_sections(&sections, features, feature, &config.thresholds);
                let ratios = state_ratios(&sections, &outcomes, total_pairs);
                let series = difference_series(&sections, features, feature, config.time_axis);
                let (diff_mean, diff_std) = match entrainment_stats(&series) {
                    Some((m, s)) => (Some(m), Some(s)),
                    None => (None, None),
                };
                let states: String = outcomes.iter().map(SectionOutcome::code).collect();
                let trend = trend(&series, config.trend_alpha);
                by_feature.insert(
                    feature,
                    FeatureGridAnalysis {
                        states,
                        outcomes,
                        ratios,
                        series,
                        diff_mean,
                        diff_std,
                        trend,
                    },
                );
            }
            grids.push(GridAnalysis {
                n_turns: n,
                sections,
                features: by_feature,
            });
        }
        directions.push(DirectionAnalysis {
            direction,
            lead_dropped: chopped.lead_dropped,
            tail_dropped: chopped.tail_dropped,
            pair_count: total_pairs,
            skipped_n,
            grids,
        });
    }
    Ok(ConversationAnalysis {
        id: prep.id.clone(),
        turn_count: prep.turns.len(),
        directions,
    })
}

/// Why a correlation cell may carry no r/p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// Fewer than three conversations had both the metric and the rating.
    InsufficientData,
    /// A correlation input was constant, so r is undefined.
    Degenerate,
}

/// One metric × rating correlation across the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub feature: Feature,
    pub metric: MetricKind,
    pub n_turns: usize,
    pub direction: Direction,
    pub rating: RatingKind,
    pub status: CellStatus,
    /// Conversations entering the correlation.
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub star: Stars,
}

/// Pearson between one metric column and one rating across conversations;
/// conversations missing either side are dropped.
pub fn correlate_metric(
    conversations: &[ConversationAnalysis],
    ratings: &RatingsTable,
    key: &MetricKey,
    rating: RatingKind,
) -> CorrelationCell {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for conv in conversations {
        let Some(value) = conv.metric(key) else {
            continue;
        };
        let Some(score) = ratings.get(&conv.id).and_then(|r| r.get(rating)) else {
            continue;
        };
        xs.push(value);
        ys.push(score as f64);
    }
    let (status, n, corr) = if xs.len() < stats::MIN_SAMPLES {
        (CellStatus::InsufficientData, xs.len(), None)
    } else {
        match stats::pearson(&xs, &ys) {
            Ok(c) => (CellStatus::Ok, c.n, Some(c)),
            Err(stats::StatsError::ConstantInput { .. }) => (CellStatus::Degenerate, xs.len(), None),
            Err(_) => (CellStatus::InsufficientData, xs.len(), None),
        }
    };
    CorrelationCell {
        feature: key.feature,
        metric: key.metric,
        n_turns: key.n_turns,
        direction: key.direction,
        rating,
        status,
        n,
        r: corr.map(|c| c.r),
        p: corr.map(|c| c.p),
        star: corr.map_or(Stars::None, |c| stats::stars(c.p)),
    }
}

/// Picks the most significant cell across the N grid: smallest p, ties
/// broken by smaller N. Non-Ok cells never win; returns `None` when no
/// member is usable.
pub fn grid_select<'a>(cells: impl IntoIterator<Item = &'a CorrelationCell>) -> Option<&'a CorrelationCell> {
    cells
        .into_iter()
        .filter(|c| c.status == CellStatus::Ok)
        .min_by(|a, b| {
            let pa = a.p.expect("Ok cell has p");
            let pb = b.p.expect("Ok cell has p");
            pa.partial_cmp(&pb)
                .expect("p values are never NaN")
                .then(a.n_turns.cmp(&b.n_turns))
        })
}

/// One entry of the 3×3 rating inter-correlation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingCell {
    pub row: RatingKind,
    pub col: RatingKind,
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub star: Stars,
}

/// Pairwise-complete Pearson among the three rating scales; the diagonal
/// is exactly 1.
pub fn rating_intercorrelations(ratings: &RatingsTable) -> Vec<RatingCell> {
    let mut cells = Vec::with_capacity(9);
    for row in RatingKind::ALL {
        for col in RatingKind::ALL {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (_, scores) in ratings.iter() {
                if let (Some(a), Some(b)) = (scores.get(row), scores.get(col)) {
                    xs.push(a as f64);
                    ys.push(b as f64);
                }
            }
            let cell = if row == col {
                RatingCell {
                    row,
                    col,
                    n: xs.len(),
                    r: Some(1.0),
                    p: Some(0.0),
                    star: stats::stars(0.0),
                }
            } else {
                match stats::pearson(&xs, &ys) {
                    Ok(c) => RatingCell {
                        row,
                        col,
                        n: c.n,
                        r: Some(c.r),
                        p: Some(c.p),
                        star: stats::stars(c.p),
                    },
                    Err(_) => RatingCell {
                        row,
                        col,
                        n: xs.len(),
                        r: None,
                        p: None,
                        star: Stars::None,
                    },
                }
            };
            cells.push(cell);
        }
    }
    cells
}

/// A conversation that could not be analyzed, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FailureEntry {
    pub id: String,
    pub error: String,
}

/// Full corpus analysis artifact; serializes to the report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub config: AnalysisConfig,
    pub conversations: Vec<ConversationAnalysis>,
    /// Conversations excluded from analysis, with reasons.
    pub failures: Vec<FailureEntry>,
    /// Every metric × rating correlation over the full grid.
    pub cells: Vec<CorrelationCell>,
    /// Most significant cell per (direction, feature, metric, rating).
    pub selected: Vec<CorrelationCell>,
    pub rating_matrix: Vec<RatingCell>,
    /// Conversations whose ratings row is incomplete.
    pub flagged_ratings: Vec<String>,
    /// Conversations with pairs covered by both states at once.
    pub flagged_ambiguous: Vec<String>,
}

/// Runs the whole corpus: per-conversation analysis fans out in parallel,
/// aggregation is a single ordered reduce, and the report is byte-stable
/// for identical inputs.
pub fn run_full_analysis(
    prepared: &[PreparedConversation],
    ratings: &RatingsTable,
    config: &AnalysisConfig,
    load_failures: Vec<FailureEntry>,
) -> Result<AnalysisReport, AnalysisError> {
    config.validate()?;
    if prepared.is_empty() && load_failures.is_empty() {
        return Err(AnalysisError::EmptyCorpus);
    }

    let results: Vec<(String, Result<ConversationAnalysis, AnalysisError>)> = prepared
        .par_iter()
        .map(|p| (p.id.clone(), analyze_conversation(p, config)))
        .collect();

    let mut conversations = Vec::new();
    let mut failures = load_failures;
    for (id, result) in results {
        match result {
            Ok(c) => conversations.push(c),
            Err(e) => failures.push(FailureEntry {
                id,
                error: e.to_string(),
            }),
        }
    }
    conversations.sort_by(|a, b| a.id.cmp(&b.id));
    failures.sort();

    let mut cells = Vec::new();
    for &direction in &config.directions {
        for feature in Feature::ALL {
            for metric in MetricKind::ALL {
                for &n_turns in &config.grid {
                    let key = MetricKey {
                        feature,
                        metric,
                        n_turns,
                        direction,
                    };
                    for rating in RatingKind::ALL {
                        cells.push(correlate_metric(&conversations, ratings, &key, rating));
                    }
                }
            }
        }
    }

    let mut selected = Vec::new();
    for &direction in &config.directions {
        for feature in Feature::ALL {
            for metric in MetricKind::ALL {
                for rating in RatingKind::ALL {
                    let members = cells.iter().filter(|c| {
                        c.direction == direction
                            && c.feature == feature
                            && c.metric == metric
                            && c.rating == rating
                    });
                    if let Some(best) = grid_select(members) {
                        selected.push(best.clone());
                    }
                }
            }
        }
    }

    let flagged_ambiguous = conversations
        .iter()
        .filter(|c| c.has_ambiguous_pairs())
        .map(|c| c.id.clone())
        .collect();

    Ok(AnalysisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        conversations,
        failures,
        cells,
        selected,
        rating_matrix: rating_intercorrelations(ratings),
        flagged_ratings: ratings
            .flagged_incomplete()
            .into_iter()
            .cloned()
            .collect(),
        flagged_ambiguous,
    })
}
