//! Entrainment degree and convergence trends.
//!
//! For one feature, a section's entrainment degree is the mean absolute
//! difference between the paired speakers' values — small differences mean
//! strong entrainment. Collecting the per-section degrees over the
//! conversation gives a difference series whose correlation with time
//! labels the conversation convergent (differences shrink), divergent
//! (differences grow), or neither.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::float::Real;
use crate::prosody::{Feature, FeatureVec};
use crate::sectioning::Section;
use crate::stats;
use crate::synchrony::section_pairs;
use crate::Corr;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntrainmentError {
    #[error("difference series time values must strictly increase (violation at point {index})")]
    NonIncreasingTime { index: usize },
}

/// Mean absolute within-pair difference: the entrainment degree of a block
/// of (leader, follower) value pairs. `None` when no pairs are usable.
///
/// Generic kernel shared by the concrete pipeline and the test oracles.
pub fn pair_abs_diff_mean<T: Real>(pairs: &[(T, T)]) -> Option<T> {
    if pairs.is_empty() {
        return None;
    }
    let sum = pairs
        .iter()
        .map(|&(first, second)| (second - first).abs())
        .sum::<T>();
    Some(sum / T::of_usize(pairs.len()))
}

/// Entrainment degree of one section for one feature; missing pairs are
/// dropped from both numerator and denominator.
pub fn section_difference(
    section: &Section,
    features: &[FeatureVec],
    feature: Feature,
) -> Option<f64> {
    pair_abs_diff_mean(&section_pairs(section, features, feature))
}

/// Time coordinate used for the trend regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TimeAxis {
    /// Mean of the member turns' midpoints, in seconds.
    #[default]
    MidpointSeconds,
    /// Plain 0-based section index; useful when turn times are synthetic.
    SectionIndex,
}

/// One point of a difference series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferencePoint {
    /// Section entrainment degree.
    pub d: f64,
    /// Section time coordinate.
    pub t: f64,
}

/// Per-section entrainment degrees with strictly increasing time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DifferenceSeries {
    points: Vec<DifferencePoint>,
}

impl DifferenceSeries {
    pub fn new(points: Vec<DifferencePoint>) -> Result<Self, EntrainmentError> {
        for (i, pair) in points.windows(2).enumerate() {
            if pair[1].t <= pair[0].t {
                return Err(EntrainmentError::NonIncreasingTime { index: i + 1 });
            }
        }
        Ok(DifferenceSeries { points })
    }

    pub fn points(&self) -> &[DifferencePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.d).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }
}

/// Builds the difference series over a section layout, skipping sections
/// with no usable pairs.
pub fn difference_series(
    sections: &[Section],
    features: &[FeatureVec],
    feature: Feature,
    axis: TimeAxis,
) -> DifferenceSeries {
    let points: Vec<DifferencePoint> = sections
        .iter()
        .filter_map(|section| {
            section_difference(section, features, feature).map(|d| DifferencePoint {
                d,
                t: match axis {
                    TimeAxis::MidpointSeconds => section.midpoint_s,
                    TimeAxis::SectionIndex => section.index as f64,
                },
            })
        })
        .collect();
    // Section midpoints and indices both increase with the offset, so the
    // invariant holds by construction.
    DifferenceSeries::new(points).expect("section layout yields increasing times")
}

/// Conversation-level summary of a difference series: mean and population
/// standard deviation of the section degrees. `None` for an empty series.
pub fn entrainment_stats(series: &DifferenceSeries) -> Option<(f64, f64)> {
    if series.is_empty() {
        return None;
    }
    Some(stats::mean_and_population_std(&series.degrees()))
}

/// Direction of the difference-vs-time relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendLabel {
    /// Differences shrink over time (negative correlation, significant).
    Convergent,
    /// Differences grow over time (positive correlation, significant).
    Divergent,
    Neither,
}

/// Trend of one conversation's difference series for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    pub label: TrendLabel,
    /// Pearson of degree against time; `None` when the series is too short
    /// or degenerate (constant degrees).
    pub corr: Option<Corr>,
}

/// Labels a difference series by correlating degree against time.
///
/// A significant (p < alpha) negative correlation is convergent, a
/// significant positive one divergent; short or degenerate series are
/// neither and carry no correlation.
pub fn trend(series: &DifferenceSeries, alpha: f64) -> TrendResult {
    if series.len() < stats::MIN_SAMPLES {
        return TrendResult {
            label: TrendLabel::Neither,
            corr: None,
        };
    }
    match stats::pearson(&series.degrees(), &series.times()) {
        Ok(corr) => {
            let label = if corr.p < alpha && corr.r < 0.0 {
                TrendLabel::Convergent
            } else if corr.p < alpha && corr.r > 0.0 {
                TrendLabel::Divergent
            } else {
                TrendLabel::Neither
            };
            TrendResult {
                label,
                corr: Some(corr),
            }
        }
        Err(_) => TrendResult {
            label: TrendLabel::Neither,
            corr: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_matches_a_hand_loop() {
        let pairs = [(1.0f64, 4.0), (2.0, 1.5), (-3.0, -3.0), (0.25, -0.75)];
        let mut acc = 0.0;
        for (a, b) in pairs {
            acc += (b - a).abs();
        }
        let want = acc / pairs.len() as f64;
        assert_eq!(pair_abs_diff_mean(&pairs).unwrap(), want);
    }

    #[test]
    fn identical_pairs_have_zero_degree() {
        let pairs = [(5.0, 5.0), (-2.5, -2.5), (0.0, 0.0)];
        assert_eq!(pair_abs_diff_mean(&pairs).unwrap(), 0.0);
        assert_eq!(pair_abs_diff_mean::<f64>(&[]), None);
    }

    #[test]
    fn degree_scales_linearly() {
        let pairs = [(1.0, 4.0), (2.0, 0.5), (3.0, 3.5)];
        let base = pair_abs_diff_mean(&pairs).unwrap();
        for a in [2.0, 0.5, 10.0] {
            let scaled: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (a * x, a * y)).collect();
            let got = pair_abs_diff_mean(&scaled).unwrap();
            assert!(
                (got - a * base).abs() < 1e-12,
                "scaling by {a}: got {got}, want {}",
                a * base
            );
        }
    }

    fn section_at(index: usize, offset: usize, n_turns: usize, midpoint_s: f64) -> Section {
        Section {
            index,
            offset,
            n_turns,
            midpoint_s,
        }
    }

    fn rows(pairs: &[(Option<f64>, Option<f64>)]) -> Vec<FeatureVec> {
        let mut out = Vec::new();
        for &(a, b) in pairs {
            let mut fa = FeatureVec::default();
            fa.speech_rate = a;
            let mut fb = FeatureVec::default();
            fb.speech_rate = b;
            out.push(fa);
            out.push(fb);
        }
        out
    }

    #[test]
    fn section_difference_skips_missing_pairs() {
        let features = rows(&[
            (Some(3.0), Some(4.0)), // diff 1
            (Some(2.0), None),      // dropped
            (Some(5.0), Some(2.0)), // diff 3
        ]);
        let s = section_at(0, 0, 6, 0.0);
        assert_eq!(
            section_difference(&s, &features, Feature::SpeechRate),
            Some(2.0)
        );
        let empty = rows(&[(None, None), (None, Some(1.0))]);
        let s2 = section_at(0, 0, 4, 0.0);
        assert_eq!(section_difference(&s2, &empty, Feature::SpeechRate), None);
    }

    #[test]
    fn series_uses_the_requested_time_axis() {
        let features = rows(&[
            (Some(1.0), Some(2.0)),
            (Some(1.0), Some(1.5)),
            (Some(1.0), Some(1.25)),
            (Some(1.0), Some(1.125)),
        ]);
        let sections = vec![
            section_at(0, 0, 4, 12.5),
            section_at(1, 2, 4, 30.0),
            section_at(2, 4, 4, 47.5),
        ];
        let by_time = difference_series(&sections, &features, Feature::SpeechRate,
            TimeAxis::MidpointSeconds);
        assert_eq!(by_time.times(), vec![12.5, 30.0, 47.5]);
        let by_index =
            difference_series(&sections, &features, Feature::SpeechRate, TimeAxis::SectionIndex);
        assert_eq!(by_index.times(), vec![0.0, 1.0, 2.0]);
        assert_eq!(by_time.degrees(), by_index.degrees());
    }

    #[test]
    fn series_validates_time_order() {
        let bad = vec![
            DifferencePoint { d: 1.0, t: 0.0 },
            DifferencePoint { d: 1.0, t: 0.0 },
        ];
        assert_eq!(
            DifferenceSeries::new(bad).unwrap_err(),
            EntrainmentError::NonIncreasingTime { index: 1 }
        );
    }

    #[test]
    fn stats_summarize_the_degrees() {
        let series = DifferenceSeries::new(vec![
            DifferencePoint { d: 100.0, t: 0.0 },
            DifferencePoint { d: 110.0, t: 1.0 },
            DifferencePoint { d: 120.0, t: 2.0 },
        ])
        .unwrap();
        let (mean, std) = entrainment_stats(&series).unwrap();
        assert_eq!(mean, 110.0);
        assert!((std - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(entrainment_stats(&DifferenceSeries::default()), None);
    }

    fn series_from(d: impl Iterator<Item = f64>) -> DifferenceSeries {
        DifferenceSeries::new(
            d.enumerate()
                .map(|(i, d)| DifferencePoint { d, t: i as f64 })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn monotone_series_label_convergent_or_divergent() {
        let shrinking = series_from((0..12).map(|i| 10.0 - 0.5 * i as f64));
        let got = trend(&shrinking, 0.05);
        assert_eq!(got.label, TrendLabel::Convergent);
        let corr = got.corr.unwrap();
        assert_eq!(corr.r, -1.0);
        assert_eq!(corr.p, 0.0);

        let growing = series_from((0..12).map(|i| 1.0 + 0.25 * i as f64));
        assert_eq!(trend(&growing, 0.05).label, TrendLabel::Divergent);
    }

    #[test]
    fn flat_or_noisy_series_label_neither()  {
        let constant = series_from(std::iter::repeat(4.0).take(10));
        let got = trend(&constant, 0.05);
        assert_eq!(got.label, TrendLabel::Neither);
        assert!(got.corr.is_none(), "constant degrees have no correlation");

        // Alternating saw: slope is zero, correlation far from significant.
        let saw = series_from((0..10).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }));
        let got = trend(&saw, 0.05);
        assert_eq!(got.label, TrendLabel::Neither);
        assert!(got.corr.unwrap().p > 0.5);
    }

    #[test]
    fn short_series_have_no_trend() {
        let two = series_from([5.0, 1.0].into_iter());
        let got = trend(&two, 0.05);
        assert_eq!(got.label, TrendLabel::Neither);
        assert!(got.corr.is_none());
    }

    #[test]
    fn trend_respects_alpha() {
        // A weak downward drift under heavy alternation: significant only
        // at a generous alpha.
        let series = series_from((0..8).map(|i| 5.0 - 0.1 * i as f64 + if i % 2 == 0 { 0.4 } else { 0.0 }));
        let strict = trend(&series, 0.001);
        let generous = trend(&series, 0.5);
        assert_eq!(strict.label, TrendLabel::Neither);
        assert_eq!(generous.label, TrendLabel::Convergent);
    }

    #[test]
    fn kernel_is_generic_over_scalars() {
        let pairs_f32 = [(1.0f32, 2.5), (4.0, 2.0)];
        assert!((pair_abs_diff_mean(&pairs_f32).unwrap() - 1.75).abs() < 1e-6);
    }
}
