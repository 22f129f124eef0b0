//! Overlapped sectioning of the turn sequence.
//!
//! Analysis walks the conversation in sections of `N` consecutive turns
//! advancing by a step of `M` turns (both even, so sections hold whole
//! adjacent-turn pairs). Before sectioning, the turn list is chopped so it
//! starts with the leading speaker of the chosen direction and has even
//! length: at most one leading and one trailing turn are dropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Speaker, Turn};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SectionError {
    #[error("section length {n} must be even (sections hold whole pairs)")]
    OddSectionLength { n: usize },
    #[error("section length {n} too small; need at least 4 turns")]
    SectionTooSmall { n: usize },
    #[error("step {step} must be even and positive")]
    BadStep { step: usize },
    #[error("step {step} must not exceed the section length {n}")]
    StepExceedsSection { step: usize, n: usize },
    #[error("only {remaining} turns remain after chopping; need at least 2")]
    TooShortAfterChop { remaining: usize },
    #[error("turn list does not alternate speakers at position {index}")]
    NotAlternating { index: usize },
    #[error("chopped turn list starts with {got}, expected {expected}")]
    WrongLeader { expected: Speaker, got: Speaker },
}

/// Which speaker opens each within-section pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "c-first")]
    ClientFirst,
    #[serde(rename = "t-first")]
    TherapistFirst,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::ClientFirst, Direction::TherapistFirst];

    /// The speaker each pair starts with.
    pub fn leader(self) -> Speaker {
        match self {
            Direction::ClientFirst => Speaker::Client,
            Direction::TherapistFirst => Speaker::Therapist,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::ClientFirst => "c-first",
            Direction::TherapistFirst => "t-first",
        }
    }

    pub fn from_label(label: &str) -> Option<Direction> {
        match label {
            "c-first" => Some(Direction::ClientFirst),
            "t-first" => Some(Direction::TherapistFirst),
            _ => None,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Validated sectioning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpec {
    n_turns: usize,
    step: usize,
    direction: Direction,
}

impl SectionSpec {
    /// Builds a spec, enforcing: `n_turns` even and at least 4, `step` even,
    /// positive, and no larger than `n_turns`.
    pub fn new(n_turns: usize, step: usize, direction: Direction) -> Result<Self, SectionError> {
        if n_turns % 2 != 0 {
            return Err(SectionError::OddSectionLength { n: n_turns });
        }
        if n_turns < 4 {
            return Err(SectionError::SectionTooSmall { n: n_turns });
        }
        if step == 0 || step % 2 != 0 {
            return Err(SectionError::BadStep { step });
        }
        if step > n_turns {
            return Err(SectionError::StepExceedsSection { step, n: n_turns });
        }
        Ok(SectionSpec {
            n_turns,
            step,
            direction,
        })
    }

    pub fn n_turns(&self) -> usize {
        self.n_turns
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }
}

/// One section of the chopped turn list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    /// 0-based section number.
    pub index: usize,
    /// Offset of the first member turn within the chopped list.
    pub offset: usize,
    /// Member turn count (the spec's `N`).
    pub n_turns: usize,
    /// Mean of the member turns' midpoints, seconds: the section's time
    /// coordinate for trend analysis.
    pub midpoint_s: f64,
}

impl Section {
    /// Indices into the chopped turn list covered by this section.
    pub fn turn_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_turns
    }

    /// Pair indices covered by this section (pair `i` holds turns `2i` and
    /// `2i + 1` of the chopped list).
    pub fn pair_range(&self) -> std::ops::Range<usize> {
        self.offset / 2..(self.offset + self.n_turns) / 2
    }

    pub fn pair_count(&self) -> usize {
        self.n_turns / 2
    }
}

/// Result of chopping: the trimmed turn list plus what was dropped, so
/// callers can cut parallel arrays (features) the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoppedTurns {
    pub turns: Vec<Turn>,
    /// 1 when the original first turn was dropped for speaker mismatch.
    pub lead_dropped: usize,
    /// 1 when the last turn was dropped to make the length even.
    pub tail_dropped: usize,
}

impl ChoppedTurns {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Number of adjacent-turn pairs in the chopped list.
    pub fn pair_count(&self) -> usize {
        self.turns.len() / 2
    }

    /// Slices a per-turn array (aligned to the original list) down to the
    /// chopped view.
    pub fn slice<'a, T>(&self, full: &'a [T]) -> &'a [T] {
        &full[self.lead_dropped..self.lead_dropped + self.turns.len()]
    }
}

fn check_alternating(turns: &[Turn]) -> Result<(), SectionError> {
    for (i, pair) in turns.windows(2).enumerate() {
        if pair[0].speaker == pair[1].speaker {
            return Err(SectionError::NotAlternating { index: i + 1 });
        }
    }
    Ok(())
}

/// Trims a validated, alternating turn list so it begins with the leader of
/// `direction` and has even length. Drops at most one turn at each end and
/// errors if fewer than 2 turns remain.
pub fn chop(turns: &[Turn], direction: Direction) -> Result<ChoppedTurns, SectionError> {
    check_alternating(turns)?;
    let lead_dropped = match turns.first() {
        Some(first) if first.speaker != direction.leader() => 1,
        _ => 0,
    };
    let after_lead = &turns[lead_dropped.min(turns.len())..];
    let tail_dropped = after_lead.len() % 2;
    let keep = after_lead.len() - tail_dropped;
    if keep < 2 {
        return Err(SectionError::TooShortAfterChop { remaining: keep });
    }
    Ok(ChoppedTurns {
        turns: after_lead[..keep].to_vec(),
        lead_dropped,
        tail_dropped,
    })
}

/// Lays overlapped sections over a chopped turn list.
///
/// Sections start at offsets `0, step, 2*step, ...` while a full `n_turns`
/// window fits, giving `floor((L - N) / M) + 1` sections for `L >= N` and
/// none otherwise (the caller decides how to report an empty layout).
pub fn build_sections(turns: &[Turn], spec: &SectionSpec) -> Result<Vec<Section>, SectionError> {
    check_alternating(turns)?;
    if let Some(first) = turns.first() {
        if first.speaker != spec.direction().leader() {
            return Err(SectionError::WrongLeader {
                expected: spec.direction().leader(),
                got: first.speaker,
            });
        }
    }
    let n = spec.n_turns();
    let m = spec.step();
    if turns.len() < n {
        return Ok(Vec::new());
    }
    let count = (turns.len() - n) / m + 1;
    let mut sections = Vec::with_capacity(count);
    for k in 0..count {
        let offset = k * m;
        let members = &turns[offset..offset + n];
        let midpoint_s =
            members.iter().map(Turn::midpoint_s).sum::<f64>() / members.len() as f64;
        sections.push(Section {
            index: k,
            offset,
            n_turns: n,
            midpoint_s,
        });
    }
    Ok(sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alternating(tags: &[Speaker]) -> Vec<Turn> {
        tags.iter()
            .enumerate()
            .map(|(i, &speaker)| Turn {
                index: i,
                speaker,
                start_s: i as f64,
                end_s: i as f64 + 1.0,
                char_count: 10,
            })
            .collect()
    }

    fn run(first: Speaker, len: usize) -> Vec<Turn> {
        let tags: Vec<Speaker> = (0..len)
            .map(|i| if i % 2 == 0 { first } else { first.other() })
            .collect();
        alternating(&tags)
    }

    use Speaker::{Client as C, Therapist as T};

    #[test]
    fn spec_validation() {
        assert!(SectionSpec::new(20, 10, Direction::ClientFirst).is_ok());
        assert!(SectionSpec::new(4, 4, Direction::ClientFirst).is_ok());
        assert_eq!(
            SectionSpec::new(21, 10, Direction::ClientFirst).unwrap_err(),
            SectionError::OddSectionLength { n: 21 }
        );
        assert_eq!(
            SectionSpec::new(2, 2, Direction::ClientFirst).unwrap_err(),
            SectionError::SectionTooSmall { n: 2 }
        );
        assert_eq!(
            SectionSpec::new(20, 5, Direction::ClientFirst).unwrap_err(),
            SectionError::BadStep { step: 5 }
        );
        assert_eq!(
            SectionSpec::new(20, 0, Direction::ClientFirst).unwrap_err(),
            SectionError::BadStep { step: 0 }
        );
        assert_eq!(
            SectionSpec::new(10, 12, Direction::ClientFirst).unwrap_err(),
            SectionError::StepExceedsSection { step: 12, n: 10 }
        );
    }

    #[test]
    fn chop_drops_mismatched_leading_turn() {
        // T C T C T, client-first: drop the leading T, length 4 is already
        // even, keep the rest.
        let turns = alternating(&[T, C, T, C, T]);
        let chopped = chop(&turns, Direction::ClientFirst).unwrap();
        let tags: Vec<Speaker> = chopped.turns.iter().map(|t| t.speaker).collect();
        assert_eq!(tags, vec![C, T, C, T]);
        assert_eq!(chopped.lead_dropped, 1);
        assert_eq!(chopped.tail_dropped, 0);
        assert_eq!(chopped.pair_count(), 2);
        // Original indices survive; chop only trims.
        assert_eq!(chopped.turns[0].index, 1);
    }

    #[test]
    fn chop_drops_odd_trailing_turn() {
        let turns = run(C, 5);
        let chopped = chop(&turns, Direction::ClientFirst).unwrap();
        assert_eq!(chopped.len(), 4);
        assert_eq!(chopped.lead_dropped, 0);
        assert_eq!(chopped.tail_dropped, 1);
    }

    #[test]
    fn chop_can_drop_both_ends() {
        // C T C T, therapist-first: drop lead C -> T C T (odd) -> drop tail.
        let turns = run(C, 4);
        let chopped = chop(&turns, Direction::TherapistFirst).unwrap();
        let tags: Vec<Speaker> = chopped.turns.iter().map(|t| t.speaker).collect();
        assert_eq!(tags, vec![T, C]);
        assert_eq!((chopped.lead_dropped, chopped.tail_dropped), (1, 1));
    }

    #[test]
    fn chop_never_drops_more_than_one_per_end() {
        for len in 2..40 {
            for first in [C, T] {
                for dir in Direction::ALL {
                    let turns = run(first, len);
                    match chop(&turns, dir) {
                        Ok(chopped) => {
                            assert!(chopped.lead_dropped <= 1);
                            assert!(chopped.tail_dropped <= 1);
                            assert_eq!(chopped.len() % 2, 0);
                            assert_eq!(chopped.turns[0].speaker, dir.leader());
                            assert!(turns.len() - chopped.len() <= 2);
                        }
                        Err(SectionError::TooShortAfterChop { .. }) => {
                            assert!(len <= 3, "only tiny lists may fail, len={len}");
                        }
                        Err(e) => panic!("unexpected error {e:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn chop_errors_when_too_short() {
        let turns = run(C, 2);
        assert_eq!(
            chop(&turns, Direction::TherapistFirst).unwrap_err(),
            SectionError::TooShortAfterChop { remaining: 0 }
        );
    }

    #[test]
    fn chop_rejects_non_alternating_input() {
        let turns = alternating(&[C, C, T]);
        assert_eq!(
            chop(&turns, Direction::ClientFirst).unwrap_err(),
            SectionError::NotAlternating { index: 1 }
        );
    }

    #[test]
    fn slice_aligns_parallel_arrays() {
        let turns = alternating(&[T, C, T, C, T]);
        let chopped = chop(&turns, Direction::ClientFirst).unwrap();
        let values = [10, 11, 12, 13, 14];
        assert_eq!(chopped.slice(&values), &[11, 12, 13, 14]);
    }

    #[test]
    fn section_count_matches_the_closed_form() {
        // A 316-turn conversation sectioned at N=40, M=10 yields 28 windows.
        let turns = run(C, 316);
        let spec = SectionSpec::new(40, 10, Direction::ClientFirst).unwrap();
        let sections = build_sections(&turns, &spec).unwrap();
        assert_eq!(sections.len(), 28);
        assert_eq!(sections[0].offset, 0);
        assert_eq!(sections[27].offset, 270);
        assert_eq!(sections[27].turn_range().end, 310);

        // Exhaustive check of the closed form over a small grid.
        for len in (4..120).step_by(2) {
            for (n, m) in [(4usize, 2usize), (10, 4), (20, 10), (30, 10)] {
                let turns = run(C, len);
                let spec = SectionSpec::new(n, m, Direction::ClientFirst).unwrap();
                let got = build_sections(&turns, &spec).unwrap().len();
                let want = if len >= n { (len - n) / m + 1 } else { 0 };
                assert_eq!(got, want, "len={len} n={n} m={m}");
            }
        }
    }

    #[test]
    fn sections_cover_every_turn_when_step_divides() {
        let turns = run(C, 60);
        let spec = SectionSpec::new(20, 10, Direction::ClientFirst).unwrap();
        let sections = build_sections(&turns, &spec).unwrap();
        let mut covered = vec![false; turns.len()];
        for s in &sections {
            for i in s.turn_range() {
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|&c| c), "every turn inside some section");
        // Overlap: each interior turn appears in two adjacent windows.
        assert_eq!(sections.len(), 5);
    }

    #[test]
    fn midpoint_is_mean_of_member_turn_midpoints() {
        let turns = run(C, 8);
        let spec = SectionSpec::new(4, 2, Direction::ClientFirst).unwrap();
        let sections = build_sections(&turns, &spec).unwrap();
        // Turn k spans [k, k+1), so the first section's midpoints are
        // 0.5, 1.5, 2.5, 3.5 -> mean 2.0.
        assert!((sections[0].midpoint_s - 2.0).abs() < 1e-12);
        assert!((sections[1].midpoint_s - 4.0).abs() < 1e-12);
        // Time coordinates increase with the offset.
        for pair in sections.windows(2) {
            assert!(pair[0].midpoint_s < pair[1].midpoint_s);
        }
    }

    #[test]
    fn pair_range_maps_offsets_to_pair_indices() {
        let s = Section {
            index: 1,
            offset: 10,
            n_turns: 20,
            midpoint_s: 0.0,
        };
        assert_eq!(s.pair_range(), 5..15);
        assert_eq!(s.pair_count(), 10);
    }

    #[test]
    fn short_lists_produce_no_sections() {
        let turns = run(C, 10);
        let spec = SectionSpec::new(20, 10, Direction::ClientFirst).unwrap();
        assert!(build_sections(&turns, &spec).unwrap().is_empty());
    }

    #[test]
    fn build_sections_checks_the_leader() {
        let turns = run(T, 20);
        let spec = SectionSpec::new(4, 2, Direction::ClientFirst).unwrap();
        assert_eq!(
            build_sections(&turns, &spec).unwrap_err(),
            SectionError::WrongLeader {
                expected: C,
                got: T
            }
        );
    }

    #[test]
    fn direction_labels_round_trip() {
        for dir in Direction::ALL {
            assert_eq!(Direction::from_label(dir.label()), Some(dir));
        }
        assert_eq!(Direction::from_label("sideways"), None);
        assert_eq!(
            serde_json::to_string(&Direction::TherapistFirst).unwrap(),
            "\"t-first\""
        );
    }
}
