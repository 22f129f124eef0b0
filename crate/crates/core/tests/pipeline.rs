//! Cross-module invariants of the full pipeline: disk round trips, rank and
//! time invariances, and agreement between report artifacts and the report.

use std::collections::BTreeSet;

use entrain_core::analysis::{
    analyze_conversation, run_full_analysis, AnalysisConfig, PreparedConversation,
};
use entrain_core::corpus::{discover_conversations, load_conversation, load_ratings};
use entrain_core::prosody::{normalize_speaker, Feature, FeatureCache};
use entrain_core::report::render_cells_csv;
use entrain_core::sectioning::Direction;
use entrain_core::synchrony::{SectionOutcome, SyncState};
use entrain_core::synth::{
    generate_corpus, generate_dyad, write_corpus, CorpusSpec, CouplingSpec,
};
use tempfile::TempDir;

fn small_corpus_spec() -> CorpusSpec {
    let mut base = CouplingSpec::basic(80, 42);
    base.noise_sd = 0.3;
    let mut spec = CorpusSpec::single(base);
    spec.conversations = 5;
    spec.fraction_sweep = Some([0.2, 1.0]);
    spec.rating_rho = Some(0.75);
    spec
}

#[test]
fn disk_round_trip_reproduces_the_in_memory_analysis() {
    let corpus = generate_corpus(&small_corpus_spec()).unwrap();
    let config = AnalysisConfig::default();

    let in_memory: Vec<_> = corpus
        .dyads
        .iter()
        .map(|d| PreparedConversation::new(&d.conversation, &d.prosody))
        .collect();
    let report_a = run_full_analysis(&in_memory, &corpus.ratings, &config, Vec::new()).unwrap();

    let tmp = TempDir::new().unwrap();
    write_corpus(&corpus, tmp.path()).unwrap();
    let ratings = load_ratings(&tmp.path().join("ratings.csv")).unwrap();
    let from_disk: Vec<_> = discover_conversations(tmp.path())
        .unwrap()
        .iter()
        .map(|paths| {
            let conversation = load_conversation(&paths.turns_csv, None).unwrap();
            let cache = FeatureCache::read_json(paths.features_json.as_ref().unwrap()).unwrap();
            assert!(cache.matches(&conversation));
            PreparedConversation::new(&conversation, &cache.to_prosody())
        })
        .collect();
    let report_b = run_full_analysis(&from_disk, &ratings, &config, Vec::new()).unwrap();

    // Caches round-trip floats exactly, so the reports agree to the bit.
    assert_eq!(
        serde_json::to_string(&report_a).unwrap(),
        serde_json::to_string(&report_b).unwrap()
    );
}

#[test]
fn monotone_feature_transforms_leave_section_outcomes_unchanged() {
    let mut spec = CouplingSpec::basic(160, 9);
    spec.kappa = 0.7;
    spec.noise_sd = 0.5;
    let dyad = generate_dyad("conv", &spec).unwrap();
    let config = AnalysisConfig::default();

    let plain = PreparedConversation::new(&dyad.conversation, &dyad.prosody);

    // Warp two features through strictly increasing maps; ranks survive, so
    // every section's Spearman correlation must too.
    let warped_raw: Vec<_> = dyad
        .prosody
        .iter()
        .map(|p| {
            let mut raw = p.raw;
            raw.speech_rate = raw.speech_rate.map(|x| x.powi(3));
            raw.pitch_median = raw.pitch_median.map(|x| (x / 40.0).exp());
            raw
        })
        .collect();
    let warped = PreparedConversation {
        id: plain.id.clone(),
        turns: plain.turns.clone(),
        normalized: normalize_speaker(&warped_raw, &dyad.conversation.turns).unwrap(),
    };

    let a = analyze_conversation(&plain, &config).unwrap();
    let b = analyze_conversation(&warped, &config).unwrap();
    for (da, db) in a.directions.iter().zip(&b.directions) {
        for (ga, gb) in da.grids.iter().zip(&db.grids) {
            for feature in [Feature::SpeechRate, Feature::PitchMedian] {
                let fa = &ga.features[&feature];
                let fb = &gb.features[&feature];
                assert_eq!(fa.outcomes, fb.outcomes, "N = {}", ga.n_turns);
                assert_eq!(fa.states, fb.states);
                assert_eq!(fa.ratios, fb.ratios);
            }
        }
    }
    // Sanity: the warp really changed the values.
    assert_ne!(plain.normalized, warped.normalized);
}

#[test]
fn shifting_the_clock_leaves_states_and_trends_unchanged() {
    let mut spec = CouplingSpec::basic(300, 17);
    spec.kappa = 0.2;
    spec.regime = entrain_core::synth::Regime::Converging;
    let dyad = generate_dyad("conv", &spec).unwrap();
    let config = AnalysisConfig::default();

    let plain = PreparedConversation::new(&dyad.conversation, &dyad.prosody);
    let mut shifted = plain.clone();
    for turn in &mut shifted.turns {
        turn.start_s += 3600.0;
        turn.end_s += 3600.0;
    }

    let a = analyze_conversation(&plain, &config).unwrap();
    let b = analyze_conversation(&shifted, &config).unwrap();
    for (da, db) in a.directions.iter().zip(&b.directions) {
        for (ga, gb) in da.grids.iter().zip(&db.grids) {
            for feature in Feature::ALL {
                let fa = &ga.features[&feature];
                let fb = &gb.features[&feature];
                assert_eq!(fa.states, fb.states);
                assert_eq!(fa.trend.label, fb.trend.label, "N = {}", ga.n_turns);
                if let (Some(ca), Some(cb)) = (&fa.trend.corr, &fb.trend.corr) {
                    assert!((ca.r - cb.r).abs() < 1e-9);
                    assert!((ca.p - cb.p).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn direction_choice_only_changes_the_pairing_bookkeeping() {
    let dyad = generate_dyad("conv", &CouplingSpec::basic(60, 3)).unwrap();
    let prep = PreparedConversation::new(&dyad.conversation, &dyad.prosody);
    let config = AnalysisConfig {
        directions: vec![Direction::ClientFirst, Direction::TherapistFirst],
        ..AnalysisConfig::default()
    };
    let analysis = analyze_conversation(&prep, &config).unwrap();
    let [c_first, t_first] = &analysis.directions[..] else {
        panic!("expected two directions");
    };

    // Synthetic conversations open with the client, so c-first keeps all 30
    // pairs while t-first drops the leading C turn and the odd tail turn.
    assert_eq!(c_first.lead_dropped, 0);
    assert_eq!(c_first.tail_dropped, 0);
    assert_eq!(c_first.pair_count, 30);
    assert_eq!(t_first.lead_dropped, 1);
    assert_eq!(t_first.tail_dropped, 1);
    assert_eq!(t_first.pair_count, 29);

    // 60 vs 58 turns: one section fewer at N = 20 ((60-20)/10+1 vs (58-20)/10+1).
    let sections = |d: &entrain_core::analysis::DirectionAnalysis, n: usize| {
        d.grids.iter().find(|g| g.n_turns == n).unwrap().sections.len()
    };
    assert_eq!(sections(c_first, 20), 5);
    assert_eq!(sections(t_first, 20), 4);
    assert_eq!(sections(c_first, 50), 2);
    assert_eq!(sections(t_first, 50), 1);
}

#[test]
fn state_ratios_match_an_independent_union_count() {
    // Half-coupled dyad with one feature anti-coupled: a real mix of S, A
    // and N sections to stress the union accounting.
    let mut spec = CouplingSpec::basic(200, 12);
    spec.coupled_fraction = 0.5;
    spec.noise_sd = 0.15;
    spec.kappa_by_feature.insert(Feature::SpeechRate, -1.0);
    let dyad = generate_dyad("conv", &spec).unwrap();
    let prep = PreparedConversation::new(&dyad.conversation, &dyad.prosody);
    let analysis = analyze_conversation(&prep, &AnalysisConfig::default()).unwrap();

    let direction = &analysis.directions[0];
    let mut saw_sync = false;
    let mut saw_anti = false;
    let mut saw_neutral = false;
    for grid in &direction.grids {
        for fg in grid.features.values() {
            let mut sync_set = BTreeSet::new();
            let mut anti_set = BTreeSet::new();
            for (section, outcome) in grid.sections.iter().zip(&fg.outcomes) {
                if let SectionOutcome::Classified { state, .. } = outcome {
                    match state {
                        SyncState::Synchronous => sync_set.extend(section.pair_range()),
                        SyncState::AntiSynchronous => anti_set.extend(section.pair_range()),
                        SyncState::Neutral => saw_neutral = true,
                    }
                }
            }
            saw_sync |= !sync_set.is_empty();
            saw_anti |= !anti_set.is_empty();
            let total = direction.pair_count;
            assert_eq!(fg.ratios.sync_pairs, sync_set.len());
            assert_eq!(fg.ratios.anti_pairs, anti_set.len());
            assert_eq!(
                fg.ratios.ambiguous_pairs,
                sync_set.intersection(&anti_set).count()
            );
            assert_eq!(fg.ratios.total_pairs, total);
            assert_eq!(fg.ratios.sync_ratio, sync_set.len() as f64 / total as f64);
            assert_eq!(fg.ratios.anti_ratio, anti_set.len() as f64 / total as f64);
        }
    }
    assert!(saw_sync && saw_anti && saw_neutral, "wanted a mixed dyad");
}

#[test]
fn cells_csv_parses_back_to_the_report_cells() {
    let corpus = generate_corpus(&small_corpus_spec()).unwrap();
    let prepared: Vec<_> = corpus
        .dyads
        .iter()
        .map(|d| PreparedConversation::new(&d.conversation, &d.prosody))
        .collect();
    let report =
        run_full_analysis(&prepared, &corpus.ratings, &AnalysisConfig::default(), Vec::new())
            .unwrap();

    let csv = render_cells_csv(&report);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("feature,metric,N,direction,rating,r,p,n,star")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), report.cells.len());

    for (row, cell) in rows.iter().zip(&report.cells) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 9);
        assert_eq!(cols[0], cell.feature.name());
        assert_eq!(cols[1], cell.metric.name());
        assert_eq!(cols[2], cell.n_turns.to_string());
        assert_eq!(cols[4], cell.rating.name());
        // Shortest-repr float printing round-trips exactly.
        assert_eq!(cols[5].parse::<f64>().ok(), cell.r);
        assert_eq!(cols[6].parse::<f64>().ok(), cell.p);
        assert_eq!(cols[7].parse::<usize>().unwrap(), cell.n);
    }
}
