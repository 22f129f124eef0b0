//! `entrain`: synthesize, extract and analyze turn-taking conversations.
//!
//! Three subcommands cover the pipeline: `synth` writes a seeded synthetic
//! corpus, `extract` builds per-conversation feature caches, and `analyze`
//! correlates entrainment metrics with session ratings and emits report
//! artifacts. Exit codes: 0 success, 1 usage or fatal error, 2 completed
//! with per-conversation failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use entrain_core::analysis::{
    run_full_analysis, AnalysisConfig, FailureEntry, PreparedConversation,
};
use entrain_core::corpus::{
    self, discover_conversations, load_conversation, load_ratings, ConversationPaths,
};
use entrain_core::entrainment::TimeAxis;
use entrain_core::prosody::{
    extract_conversation, CacheSource, DspConfig, FeatureCache, TURNS_ONLY_HASH,
};
use entrain_core::report::{
    render_cells_csv, render_histograms_csv, render_summary, render_trends_csv,
};
use entrain_core::sectioning::Direction;
use entrain_core::synchrony::SyncThresholds;
use entrain_core::synth::{generate_corpus, load_corpus_spec};

#[derive(Parser)]
#[command(
    name = "entrain",
    version,
    about = "Prosodic entrainment analysis for two-speaker conversations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a spec JSON.
    Synth(SynthArgs),
    /// Extract prosodic features into per-conversation caches.
    Extract(ExtractArgs),
    /// Correlate entrainment metrics with ratings and emit reports.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus spec JSON file.
    spec: PathBuf,
    /// Directory the corpus is written into.
    #[arg(long)]
    out: PathBuf,
    /// Override the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct DspArgs {
    /// Pitch analysis frame length, seconds.
    #[arg(long, default_value_t = 0.040)]
    pitch_frame: f64,
    /// Pitch hop, seconds.
    #[arg(long, default_value_t = 0.010)]
    pitch_hop: f64,
    /// Lowest F0 searched, Hz.
    #[arg(long, default_value_t = 60.0)]
    pitch_min: f64,
    /// Highest F0 searched, Hz.
    #[arg(long, default_value_t = 400.0)]
    pitch_max: f64,
    /// YIN voicing threshold in (0, 1).
    #[arg(long, default_value_t = 0.45)]
    voicing_threshold: f64,
    /// Intensity frame length, seconds.
    #[arg(long, default_value_t = 0.025)]
    intensity_frame: f64,
    /// Intensity hop, seconds.
    #[arg(long, default_value_t = 0.010)]
    intensity_hop: f64,
}

impl DspArgs {
    fn to_config(&self) -> DspConfig {
        let mut cfg = DspConfig::default();
        cfg.pitch.frame_s = self.pitch_frame;
        cfg.pitch.hop_s = self.pitch_hop;
        cfg.pitch.min_hz = self.pitch_min;
        cfg.pitch.max_hz = self.pitch_max;
        cfg.pitch.voicing_threshold = self.voicing_threshold;
        cfg.intensity.frame_s = self.intensity_frame;
        cfg.intensity.hop_s = self.intensity_hop;
        cfg
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// Corpus directory of conversation subfolders.
    corpus_dir: PathBuf,
    #[command(flatten)]
    dsp: DspArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionOpt {
    #[value(name = "c-first")]
    CFirst,
    #[value(name = "t-first")]
    TFirst,
    Both,
}

impl DirectionOpt {
    fn directions(self) -> Vec<Direction> {
        match self {
            DirectionOpt::CFirst => vec![Direction::ClientFirst],
            DirectionOpt::TFirst => vec![Direction::TherapistFirst],
            DirectionOpt::Both => vec![Direction::ClientFirst, Direction::TherapistFirst],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TimeAxisOpt {
    /// Section midpoint in seconds.
    Midpoint,
    /// Section index.
    Index,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatOpt {
    /// report.json plus the CSV artifacts.
    Json,
    /// CSV artifacts only.
    Csv,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Corpus directory of conversation subfolders.
    corpus_dir: PathBuf,
    /// Ratings CSV; defaults to <corpus>/ratings.csv.
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Section sizes N, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [20, 30, 40, 50])]
    grid: Vec<usize>,
    /// Section step M.
    #[arg(long, default_value_t = 10)]
    step: usize,
    /// Spearman threshold for calling a section (anti-)synchronous.
    #[arg(long, default_value_t = 0.5)]
    rho_threshold: f64,
    /// Significance level for section classification.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Significance level for convergence/divergence trends.
    #[arg(long, default_value_t = 0.05)]
    trend_alpha: f64,
    /// Which speaker leads each turn pair.
    #[arg(long, value_enum, default_value_t = DirectionOpt::CFirst)]
    direction: DirectionOpt,
    /// Time axis for trend correlation.
    #[arg(long, value_enum, default_value_t = TimeAxisOpt::Midpoint)]
    time_axis: TimeAxisOpt,
    /// Directory report artifacts are written into.
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatOpt::Json)]
    format: FormatOpt,
    #[command(flatten)]
    dsp: DspArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Analyze(args) => cmd_analyze(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let mut spec = load_corpus_spec(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.base.seed = seed;
    }
    let corpus = generate_corpus(&spec)?;
    entrain_core::synth::write_corpus(&corpus, &args.out)?;
    println!(
        "wrote {} conversation(s) to {}",
        corpus.dyads.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

enum ExtractOutcome {
    Written,
    Skipped,
}

fn extract_one(
    paths: &ConversationPaths,
    cfg: &DspConfig,
    hash: &str,
) -> Result<ExtractOutcome, String> {
    let conversation = load_conversation(&paths.turns_csv, paths.audio_wav.as_deref())
        .map_err(|e| e.to_string())?;
    let existing = paths
        .features_json
        .as_ref()
        .and_then(|p| FeatureCache::read_json(p).ok());
    let cache_path = paths.dir.join(corpus::FEATURES_FILE);

    if conversation.audio.is_some() {
        if let Some(cache) = &existing {
            if cache.source == CacheSource::Dsp
                && cache.config_hash == hash
                && cache.matches(&conversation)
            {
                return Ok(ExtractOutcome::Skipped);
            }
        }
        let prosody = extract_conversation(&conversation, cfg).map_err(|e| e.to_string())?;
        let cache = FeatureCache::build(&conversation, &prosody, CacheSource::Dsp, hash)
            .map_err(|e| e.to_string())?;
        cache.write_json(&cache_path).map_err(|e| e.to_string())?;
        Ok(ExtractOutcome::Written)
    } else if existing.is_some() {
        // A planted or earlier cache with nothing new to extract from.
        Ok(ExtractOutcome::Skipped)
    } else {
        let prosody = extract_conversation(&conversation, cfg).map_err(|e| e.to_string())?;
        let cache = FeatureCache::build(&conversation, &prosody, CacheSource::TurnsOnly, TURNS_ONLY_HASH)
            .map_err(|e| e.to_string())?;
        cache.write_json(&cache_path).map_err(|e| e.to_string())?;
        Ok(ExtractOutcome::Written)
    }
}

fn cmd_extract(args: ExtractArgs) -> Result<ExitCode> {
    let cfg = args.dsp.to_config();
    cfg.validate()?;
    let hash = cfg.config_hash();
    let found = discover_conversations(&args.corpus_dir)?;

    let results: Vec<(String, Result<ExtractOutcome, String>)> = found
        .par_iter()
        .map(|paths| (paths.id.clone(), extract_one(paths, &cfg, &hash)))
        .collect();

    let mut written = 0usize;
    let mut skipped = 0usize;
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(ExtractOutcome::Written) => written += 1,
            Ok(ExtractOutcome::Skipped) => skipped += 1,
            Err(e) => failures.push((id, e)),
        }
    }
    for (id, e) in &failures {
        eprintln!("{id}: {e}");
    }
    println!(
        "{written} cache(s) written, {skipped} up to date, {} failure(s)",
        failures.len()
    );
    Ok(if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

/// Feature provenance for one analyzed conversation: fresh caches are
/// preferred, audio is the fallback, and turns-only features the last
/// resort. A stale cache with no audio behind it is a failure rather than
/// a silently wrong answer.
fn prepare_one(
    paths: &ConversationPaths,
    cfg: &DspConfig,
    hash: &str,
) -> Result<PreparedConversation, String> {
    let conversation =
        load_conversation(&paths.turns_csv, None).map_err(|e| e.to_string())?;

    if let Some(cache_path) = &paths.features_json {
        if let Ok(cache) = FeatureCache::read_json(cache_path) {
            if cache.matches(&conversation) {
                let usable = match cache.source {
                    CacheSource::Synthetic => true,
                    CacheSource::Dsp => cache.config_hash == hash,
                    // Trust turns-only features only while there is still
                    // no audio to do better with.
                    CacheSource::TurnsOnly => paths.audio_wav.is_none(),
                };
                if usable {
                    return Ok(PreparedConversation::new(&conversation, &cache.to_prosody()));
                }
            }
        }
    }

    if paths.audio_wav.is_some() {
        let conversation = load_conversation(&paths.turns_csv, paths.audio_wav.as_deref())
            .map_err(|e| e.to_string())?;
        let prosody = extract_conversation(&conversation, cfg).map_err(|e| e.to_string())?;
        return Ok(PreparedConversation::new(&conversation, &prosody));
    }

    if paths.features_json.is_some() {
        return Err(
            "feature cache is stale or does not match turns.csv, and no audio is present to re-extract"
                .to_string(),
        );
    }

    let prosody = extract_conversation(&conversation, cfg).map_err(|e| e.to_string())?;
    Ok(PreparedConversation::new(&conversation, &prosody))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let ratings_path = args
        .ratings
        .clone()
        .unwrap_or_else(|| args.corpus_dir.join(corpus::RATINGS_FILE));
    if !ratings_path.is_file() {
        bail!("ratings file {} not found", ratings_path.display());
    }
    let ratings = load_ratings(&ratings_path)?;

    let config = AnalysisConfig {
        grid: args.grid.clone(),
        step: args.step,
        thresholds: SyncThresholds {
            rho_threshold: args.rho_threshold,
            alpha: args.alpha,
        },
        trend_alpha: args.trend_alpha,
        directions: args.direction.directions(),
        time_axis: match args.time_axis {
            TimeAxisOpt::Midpoint => TimeAxis::MidpointSeconds,
            TimeAxisOpt::Index => TimeAxis::SectionIndex,
        },
    };
    config.validate()?;
    let dsp = args.dsp.to_config();
    dsp.validate()?;
    let hash = dsp.config_hash();

    let found = discover_conversations(&args.corpus_dir)?;
    let loaded: Vec<(String, Result<PreparedConversation, String>)> = found
        .par_iter()
        .map(|paths| (paths.id.clone(), prepare_one(paths, &dsp, &hash)))
        .collect();

    let mut prepared = Vec::new();
    let mut load_failures = Vec::new();
    for (id, result) in loaded {
        match result {
            Ok(p) => prepared.push(p),
            Err(error) => load_failures.push(FailureEntry { id, error }),
        }
    }

    let report = run_full_analysis(&prepared, &ratings, &config, load_failures)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_text(&args.out.join("cells.csv"), &render_cells_csv(&report))?;
    write_text(
        &args.out.join("histograms.csv"),
        &render_histograms_csv(&report),
    )?;
    write_text(&args.out.join("trends.csv"), &render_trends_csv(&report))?;
    if args.format == FormatOpt::Json {
        let json = serde_json::to_string_pretty(&report).context("serializing report")?;
        write_text(&args.out.join("report.json"), &(json + "\n"))?;
    }

    print!("{}", render_summary(&report));
    for f in &report.failures {
        eprintln!("{}: {}", f.id, f.error);
    }
    Ok(if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
