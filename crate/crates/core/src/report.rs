//! Renderers for the analysis report: flattened cells CSV, plot-data CSVs
//! (ratio histograms and trend fractions), and a human-readable summary
//! table for standard output. All renderers are pure string builders, so
//! identical reports yield identical bytes.

use std::fmt::Write as _;

use crate::analysis::{
    AnalysisReport, CellStatus, ConversationAnalysis, CorrelationCell, MetricKey, MetricKind,
};
use crate::corpus::RatingKind;
use crate::prosody::Feature;
use crate::sectioning::Direction;
use crate::stats::Stars;

/// Number of histogram bins over [0, 1] (bin width 0.05).
pub const HISTOGRAM_BINS: usize = 20;

fn star_text(stars: Stars) -> &'static str {
    match stars {
        Stars::None => "",
        Stars::One => "*",
        Stars::Two => "**",
        Stars::Three => "***",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flattened correlation cells, one row per cell over the full grid.
pub fn render_cells_csv(report: &AnalysisReport) -> String {
    let mut out = String::from("feature,metric,N,direction,rating,r,p,n,star\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.feature.name(),
            c.metric.name(),
            c.n_turns,
            c.direction.label(),
            c.rating.name(),
            opt(c.r),
            opt(c.p),
            c.n,
            star_text(c.star),
        );
    }
    out
}

/// Bin index for a ratio in [0, 1]; the last bin is closed above.
pub fn histogram_bin(ratio: f64) -> usize {
    ((ratio * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

fn bin_edge(k: usize) -> f64 {
    // Integer arithmetic first so edges print as clean decimals.
    (k * 5) as f64 / 100.0
}

/// Histogram of each ratio metric across conversations, per feature × N ×
/// direction; zero-count bins are emitted so the grid is complete.
pub fn render_histograms_csv(report: &AnalysisReport) -> String {
    let mut out = String::from("feature,metric,N,direction,bin_lo,bin_hi,count\n");
    for &direction in &report.config.directions {
        for feature in Feature::ALL {
            for metric in [MetricKind::SyncRatio, MetricKind::AntiRatio] {
                for &n_turns in &report.config.grid {
                    let key = MetricKey {
                        feature,
                        metric,
                        n_turns,
                        direction,
                    };
                    let mut counts = [0usize; HISTOGRAM_BINS];
                    for conv in &report.conversations {
                        if let Some(value) = conv.metric(&key) {
                            counts[histogram_bin(value)] += 1;
                        }
                    }
                    for (k, count) in counts.iter().enumerate() {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{},{}",
                            feature.name(),
                            metric.name(),
                            n_turns,
                            direction.label(),
                            bin_edge(k),
                            bin_edge(k + 1),
                            count,
                        );
                    }
                }
            }
        }
    }
    out
}

/// Fractions of conversations labeled Convergent/Divergent/Neither per
/// feature × N × direction.
pub fn render_trends_csv(report: &AnalysisReport) -> String {
    use crate::entrainment::TrendLabel;
    let mut out = String::from("feature,N,direction,convergent,divergent,neither,n\n");
    for &direction in &report.config.directions {
        for feature in Feature::ALL {
            for &n_turns in &report.config.grid {
                let mut counts = [0usize; 3];
                let mut n = 0usize;
                for conv in &report.conversations {
                    let Some(label) = trend_label(conv, direction, n_turns, feature) else {
                        continue;
                    };
                    n += 1;
                    match label {
                        TrendLabel::Convergent => counts[0] += 1,
                        TrendLabel::Divergent => counts[1] += 1,
                        TrendLabel::Neither => counts[2] += 1,
                    }
                }
                let frac = |c: usize| {
                    if n == 0 {
                        0.0
                    } else {
                        c as f64 / n as f64
                    }
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    feature.name(),
                    n_turns,
                    direction.label(),
                    frac(counts[0]),
                    frac(counts[1]),
                    frac(counts[2]),
                    n,
                );
            }
        }
    }
    out
}

fn trend_label(
    conv: &ConversationAnalysis,
    direction: Direction,
    n_turns: usize,
    feature: Feature,
) -> Option<crate::entrainment::TrendLabel> {
    conv.directions
        .iter()
        .find(|d| d.direction == direction)
        .and_then(|d| d.grids.iter().find(|g| g.n_turns == n_turns))
        .and_then(|g| g.features.get(&feature))
        .map(|f| f.trend.label)
}

const CELL_WIDTH: usize = 16;

fn summary_cell(cell: Option<&CorrelationCell>) -> String {
    let text = match cell {
        Some(c) if c.status == CellStatus::Ok => {
            format!("{:+.2}{} @{}", c.r.unwrap(), star_text(c.star), c.n_turns)
        }
        _ => "-".to_string(),
    };
    format!("{text:>CELL_WIDTH$}")
}

fn selected<'a>(
    report: &'a AnalysisReport,
    direction: Direction,
    feature: Feature,
    metric: MetricKind,
    rating: RatingKind,
) -> Option<&'a CorrelationCell> {
    report.selected.iter().find(|c| {
        c.direction == direction && c.feature == feature && c.metric == metric && c.rating == rating
    })
}

fn summary_table(
    out: &mut String,
    report: &AnalysisReport,
    direction: Direction,
    title: &str,
    metrics: [MetricKind; 2],
) {
    let _ = writeln!(out, "{title} (direction {}, most significant N)", direction.label());
    let _ = write!(out, "{:<18}", "feature");
    for metric in metrics {
        for rating in RatingKind::ALL {
            let head = format!("{}:{}", metric.name(), rating.name());
            let _ = write!(out, "{head:>CELL_WIDTH$}");
        }
    }
    out.push('\n');
    for feature in Feature::ALL {
        let _ = write!(out, "{:<18}", feature.name());
        for metric in metrics {
            for rating in RatingKind::ALL {
                let cell = selected(report, direction, feature, metric, rating);
                out.push_str(&summary_cell(cell));
            }
        }
        out.push('\n');
    }
    out.push('\n');
}

/// Human-readable run summary: the two correlation tables per direction
/// (ratio metrics, then difference metrics), the rating matrix, and any
/// failures or flags.
pub fn render_summary(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "analyzed {} conversation(s), {} failure(s)",
        report.conversations.len(),
        report.failures.len()
    );
    out.push('\n');
    for &direction in &report.config.directions {
        summary_table(
            &mut out,
            report,
            direction,
            "Synchrony state ratios vs ratings",
            [MetricKind::SyncRatio, MetricKind::AntiRatio],
        );
        summary_table(
            &mut out,
            report,
            direction,
            "Entrainment degree vs ratings",
            [MetricKind::DiffMean, MetricKind::DiffStd],
        );
    }

    let _ = writeln!(out, "Rating inter-correlations");
    let _ = write!(out, "{:<8}", "");
    for col in RatingKind::ALL {
        let _ = write!(out, "{:>CELL_WIDTH$}", col.name());
    }
    out.push('\n');
    for row in RatingKind::ALL {
        let _ = write!(out, "{:<8}", row.name());
        for col in RatingKind::ALL {
            let cell = report
                .rating_matrix
                .iter()
                .find(|c| c.row == row && c.col == col);
            let text = match cell.and_then(|c| c.r) {
                Some(r) => format!(
                    "{:+.2}{}",
                    r,
                    star_text(cell.map_or(Stars::None, |c| c.star))
                ),
                None => "-".to_string(),
            };
            let _ = write!(out, "{text:>CELL_WIDTH$}");
        }
        out.push('\n');
    }

    if !report.failures.is_empty() {
        out.push('\n');
        let _ = writeln!(out, "failures:");
        for f in &report.failures {
            let _ = writeln!(out, "  {}: {}", f.id, f.error);
        }
    }
    if !report.flagged_ratings.is_empty() {
        out.push('\n');
        let _ = writeln!(
            out,
            "incomplete ratings: {}",
            report.flagged_ratings.join(", ")
        );
    }
    if !report.flagged_ambiguous.is_empty() {
        out.push('\n');
        let _ = writeln!(
            out,
            "conversations with pairs in both states: {}",
            report.flagged_ambiguous.join(", ")
        );
    }
    out
}
