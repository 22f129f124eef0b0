//! Synthetic dyad generator: ground truth for the whole pipeline.
//!
//! Client feature series are seeded mean-reverting random walks (so their
//! scale is stationary and "signal scale" is well defined); therapist values
//! couple to the client's deviation from base, `t = T_base + κ·(c − C_base)
//! + noise`, with `noise_sd` expressed as a multiple of the feature's signal
//! sd. Regimes modulate the effective κ over the conversation: `Converging`
//! ramps it to 1 so the normalized within-pair gap shrinks linearly,
//! `Diverging` starts at 1 and ramps to κ, `Alternating` flips the sign
//! every `flip_pairs` pairs. Optional audio renders each turn as a
//! constant-F0 tone whose frequency and amplitude encode the planted pitch
//! median and intensity mean, exercising the DSP front end.
//!
//! Everything is fully determined by the seed: same spec, same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    self, Audio, Conversation, CorpusError, RatingKind, Ratings, RatingsTable, Speaker, Turn,
};
use crate::prosody::{
    normalize_speaker, CacheSource, Feature, FeatureCache, FeatureVec, ProsodyError, TurnProsody,
};

/// Schema version of the corpus manifest.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Mean-reversion factor of the client walk: high enough to look like a
/// drifting conversation, low enough that its sd stays at the profile value.
pub const PERSISTENCE: f64 = 0.85;

/// Marker stored as the `config_hash` of planted feature caches.
pub const SYNTHETIC_HASH: &str = "synthetic";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: field {field}: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: spec field {field}: {reason}")]
    SpecJson {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prosody(#[from] ProsodyError),
}

fn invalid(field: &str, reason: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Scale of one synthetic feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureProfile {
    /// Client's base level, feature units.
    pub client_base: f64,
    /// Therapist's base level.
    pub therapist_base: f64,
    /// Stationary sd of the client's deviation series — the feature's
    /// signal scale, which `noise_sd` multiplies.
    pub signal_sd: f64,
    /// Physical range the client series is reflected into.
    pub lo: f64,
    pub hi: f64,
}

/// Nominal scales per feature. Pitch sits in the trackable F0 band,
/// intensity in a plausible dBFS band, speech rate around four
/// characters per second.
pub fn feature_profile(feature: Feature) -> FeatureProfile {
    match feature {
        Feature::PitchMedian => FeatureProfile {
            client_base: 205.0,
            therapist_base: 165.0,
            signal_sd: 18.0,
            lo: 100.0,
            hi: 330.0,
        },
        Feature::PitchMean => FeatureProfile {
            client_base: 207.0,
            therapist_base: 167.0,
            signal_sd: 16.0,
            lo: 100.0,
            hi: 330.0,
        },
        Feature::PitchStd => FeatureProfile {
            client_base: 26.0,
            therapist_base: 21.0,
            signal_sd: 6.0,
            lo: 4.0,
            hi: 70.0,
        },
        Feature::IntensityMedian => FeatureProfile {
            client_base: -26.0,
            therapist_base: -28.0,
            signal_sd: 2.2,
            lo: -44.0,
            hi: -12.0,
        },
        Feature::IntensityMean => FeatureProfile {
            client_base: -25.0,
            therapist_base: -27.0,
            signal_sd: 2.2,
            lo: -44.0,
            hi: -12.0,
        },
        Feature::IntensityStd => FeatureProfile {
            client_base: 4.2,
            therapist_base: 3.8,
            signal_sd: 1.1,
            lo: 0.8,
            hi: 10.0,
        },
        Feature::SpeechRate => FeatureProfile {
            client_base: 3.9,
            therapist_base: 4.1,
            signal_sd: 0.55,
            lo: 1.6,
            hi: 7.2,
        },
    }
}

/// How the effective coupling evolves over the conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Constant κ.
    #[default]
    Static,
    /// κ ramps linearly to 1: the normalized within-pair gap shrinks.
    Converging,
    /// Starts at 1 and ramps to κ: the gap grows.
    Diverging,
    /// κ flips sign every `flip_pairs` pairs.
    Alternating,
}

fn default_kappa() -> f64 {
    1.0
}

fn default_fraction() -> f64 {
    1.0
}

fn default_flip_pairs() -> usize {
    10
}

fn default_duration_scale() -> f64 {
    1.0
}

fn default_sample_rate() -> u32 {
    16_000
}

/// Generation parameters for one dyad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    /// Total turn count; even and at least 4.
    pub turns: usize,
    /// Everything downstream is determined by this seed.
    pub seed: u64,
    /// Coupling coefficient in [-1, 1], applied to every feature unless
    /// overridden.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Per-feature κ overrides.
    #[serde(default)]
    pub kappa_by_feature: BTreeMap<Feature, f64>,
    /// Therapist noise sd as a multiple of the feature's signal sd.
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub regime: Regime,
    /// Half-period of the Alternating regime, in turn pairs.
    #[serde(default = "default_flip_pairs")]
    pub flip_pairs: usize,
    /// Leading fraction of pairs that are coupled at all; the rest fall
    /// back to κ = 0. Lets tests plant graded synchrony coverage.
    #[serde(default = "default_fraction")]
    pub coupled_fraction: f64,
    /// Scales turn durations and gaps; keeps rendered-audio tests short.
    #[serde(default = "default_duration_scale")]
    pub duration_scale: f64,
    #[serde(default)]
    pub render_audio: bool,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
}

impl CouplingSpec {
    /// A plain perfectly coupled dyad; handy default for tests and demos.
    pub fn basic(turns: usize, seed: u64) -> Self {
        CouplingSpec {
            turns,
            seed,
            kappa: default_kappa(),
            kappa_by_feature: BTreeMap::new(),
            noise_sd: 0.0,
            regime: Regime::Static,
            flip_pairs: default_flip_pairs(),
            coupled_fraction: default_fraction(),
            duration_scale: default_duration_scale(),
            render_audio: false,
            sample_rate: default_sample_rate(),
        }
    }

    pub fn kappa_for(&self, feature: Feature) -> f64 {
        self.kappa_by_feature
            .get(&feature)
            .copied()
            .unwrap_or(self.kappa)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.turns < 4 {
            return Err(invalid("turns", format!("{} is too few; need at least 4", self.turns)));
        }
        if self.turns % 2 != 0 {
            return Err(invalid("turns", format!("{} must be even", self.turns)));
        }
        if !(self.kappa.is_finite() && self.kappa.abs() <= 1.0) {
            return Err(invalid("kappa", format!("{} must lie in [-1, 1]", self.kappa)));
        }
        for (feature, kappa) in &self.kappa_by_feature {
            if !(kappa.is_finite() && kappa.abs() <= 1.0) {
                return Err(invalid(
                    &format!("kappa_by_feature.{feature}"),
                    format!("{kappa} must lie in [-1, 1]"),
                ));
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(invalid("noise_sd", format!("{} must be >= 0", self.noise_sd)));
        }
        if self.flip_pairs == 0 {
            return Err(invalid("flip_pairs", "must be at least 1"));
        }
        if !(self.coupled_fraction > 0.0 && self.coupled_fraction <= 1.0) {
            return Err(invalid(
                "coupled_fraction",
                format!("{} must lie in (0, 1]", self.coupled_fraction),
            ));
        }
        if !(self.duration_scale.is_finite() && self.duration_scale > 0.0) {
            return Err(invalid(
                "duration_scale",
                format!("{} must be positive", self.duration_scale),
            ));
        }
        if self.sample_rate < corpus::MIN_SAMPLE_RATE {
            return Err(invalid(
                "sample_rate",
                format!(
                    "{} Hz is below the corpus minimum of {} Hz",
                    self.sample_rate,
                    corpus::MIN_SAMPLE_RATE
                ),
            ));
        }
        Ok(())
    }
}

/// A generated conversation with its planted features.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDyad {
    pub conversation: Conversation,
    pub prosody: Vec<TurnProsody>,
}

fn reflect_into(mut value: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..64 {
        if value < lo {
            value = 2.0 * lo - value;
        } else if value > hi {
            value = 2.0 * hi - value;
        } else {
            return value;
        }
    }
    value.clamp(lo, hi)
}

fn kappa_at(spec: &CouplingSpec, kappa0: f64, pair: usize, pairs: usize) -> f64 {
    let u = if pairs > 1 {
        pair as f64 / (pairs - 1) as f64
    } else {
        0.0
    };
    match spec.regime {
        Regime::Static => kappa0,
        Regime::Converging => kappa0 + (1.0 - kappa0) * u,
        Regime::Diverging => 1.0 + (kappa0 - 1.0) * u,
        Regime::Alternating => {
            if (pair / spec.flip_pairs) % 2 == 0 {
                kappa0
            } else {
                -kappa0
            }
        }
    }
}

/// Generates one dyad: alternating client/therapist turns with planted
/// feature coupling, and optionally rendered audio.
pub fn generate_dyad(id: &str, spec: &CouplingSpec) -> Result<SyntheticDyad, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let n_turns = spec.turns;
    let pairs = n_turns / 2;

    // Turn timing: clients hold the floor much longer than therapists.
    let mut turns = Vec::with_capacity(n_turns);
    let mut clock = 0.0f64;
    for i in 0..n_turns {
        let speaker = if i % 2 == 0 {
            Speaker::Client
        } else {
            Speaker::Therapist
        };
        let (mean, sd, lo, hi) = match speaker {
            Speaker::Client => (16.4, 4.0, 4.0, 40.0),
            Speaker::Therapist => (6.38, 1.8, 1.5, 20.0),
        };
        let z: f64 = rng.sample(StandardNormal);
        let duration = (mean + sd * z).clamp(lo, hi) * spec.duration_scale;
        let gap = rng.random_range(0.2..0.9) * spec.duration_scale;
        turns.push(Turn {
            index: i,
            speaker,
            start_s: clock,
            end_s: clock + duration,
            char_count: 1, // filled in once speech rate is drawn
        });
        clock += duration + gap;
    }

    // Features, one walk per feature in canonical order.
    let coupled_pairs = (spec.coupled_fraction * pairs as f64).round() as usize;
    let mut raw = vec![FeatureVec::default(); n_turns];
    for feature in Feature::ALL {
        let profile = feature_profile(feature);
        let kappa0 = spec.kappa_for(feature);
        let innovation_sd = profile.signal_sd * (1.0 - PERSISTENCE * PERSISTENCE).sqrt();

        let mut deviations = Vec::with_capacity(pairs);
        let mut dev = 0.0f64;
        for pair in 0..pairs {
            let z: f64 = rng.sample(StandardNormal);
            dev = if pair == 0 {
                z * profile.signal_sd
            } else {
                PERSISTENCE * dev + z * innovation_sd
            };
            dev = reflect_into(profile.client_base + dev, profile.lo, profile.hi)
                - profile.client_base;
            deviations.push(dev);
        }
        for (pair, &dev) in deviations.iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            let kappa = if pair < coupled_pairs {
                kappa_at(spec, kappa0, pair, pairs)
            } else {
                0.0
            };
            let client = profile.client_base + dev;
            let therapist =
                profile.therapist_base + kappa * dev + spec.noise_sd * profile.signal_sd * eps;
            raw[2 * pair].set(feature, Some(client));
            raw[2 * pair + 1].set(feature, Some(therapist));
        }
    }

    // Character counts follow the planted speech rate.
    for (turn, fv) in turns.iter_mut().zip(&raw) {
        let rate = fv.speech_rate.expect("speech rate is always planted");
        turn.char_count = (rate * turn.duration_s()).round().max(1.0) as u32;
    }

    let normalized = normalize_speaker(&raw, &turns)?;
    let prosody: Vec<TurnProsody> = raw
        .into_iter()
        .zip(normalized)
        .map(|(raw, normalized)| TurnProsody { raw, normalized })
        .collect();

    let audio = if spec.render_audio {
        Some(render_audio(&turns, &prosody, spec.sample_rate))
    } else {
        None
    };

    Ok(SyntheticDyad {
        conversation: Conversation {
            id: id.to_string(),
            turns,
            audio,
        },
        prosody,
    })
}

/// Renders each turn as a constant-F0 tone with 5 ms raised-cosine edges;
/// F0 encodes the planted pitch median, amplitude the planted intensity
/// mean (a sine of amplitude A has mean square A²/2).
fn render_audio(turns: &[Turn], prosody: &[TurnProsody], sample_rate: u32) -> Audio {
    let sr = sample_rate as f64;
    let last_end = turns.last().map(|t| t.end_s).unwrap_or(0.0);
    let total = (last_end * sr).ceil() as usize;
    let mut samples = vec![0.0f64; total];
    for (turn, p) in turns.iter().zip(prosody) {
        let f0 = p
            .raw
            .pitch_median
            .unwrap_or(180.0)
            .clamp(80.0, 380.0);
        let level_db = p.raw.intensity_mean.unwrap_or(-26.0);
        let amplitude = (std::f64::consts::SQRT_2 * 10f64.powf(level_db / 20.0)).min(0.95);
        let start = (turn.start_s * sr).round() as usize;
        let end = ((turn.end_s * sr).round() as usize).min(total);
        let len = end.saturating_sub(start);
        let fade = (((0.005 * sr).round() as usize).max(1)).min(len / 2);
        for i in 0..len {
            let t = i as f64 / sr;
            let mut v = amplitude * (2.0 * std::f64::consts::PI * f0 * t).sin();
            if i < fade {
                v *= 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / fade as f64).cos());
            }
            let from_end = len - 1 - i;
            if from_end < fade {
                v *= 0.5 * (1.0 - (std::f64::consts::PI * from_end as f64 / fade as f64).cos());
            }
            samples[start + i] = v;
        }
    }
    Audio {
        samples,
        sample_rate,
    }
}

fn default_conversations() -> usize {
    1
}

/// Parameters for a whole synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    #[serde(default = "default_conversations")]
    pub conversations: usize,
    /// Template dyad spec; its seed is the corpus master seed.
    pub base: CouplingSpec,
    /// Linear sweep of κ across conversations ([from, to]).
    #[serde(default)]
    pub kappa_sweep: Option<[f64; 2]>,
    /// Linear sweep of the coupled fraction across conversations.
    #[serde(default)]
    pub fraction_sweep: Option<[f64; 2]>,
    /// Plants a correlation between each conversation's swept level and all
    /// three synthetic ratings.
    #[serde(default)]
    pub rating_rho: Option<f64>,
}

impl CorpusSpec {
    pub fn single(base: CouplingSpec) -> Self {
        CorpusSpec {
            conversations: 1,
            base,
            kappa_sweep: None,
            fraction_sweep: None,
            rating_rho: None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.conversations == 0 {
            return Err(invalid("conversations", "must be at least 1"));
        }
        self.base.validate()?;
        if let Some([from, to]) = self.kappa_sweep {
            if !(from.is_finite() && to.is_finite() && from.abs() <= 1.0 && to.abs() <= 1.0) {
                return Err(invalid(
                    "kappa_sweep",
                    format!("[{from}, {to}] must lie in [-1, 1]"),
                ));
            }
        }
        if let Some([from, to]) = self.fraction_sweep {
            if !(from > 0.0 && from <= 1.0 && to > 0.0 && to <= 1.0) {
                return Err(invalid(
                    "fraction_sweep",
                    format!("[{from}, {to}] must lie in (0, 1]"),
                ));
            }
        }
        if self.kappa_sweep.is_some() && self.fraction_sweep.is_some() {
            return Err(invalid(
                "fraction_sweep",
                "choose either kappa_sweep or fraction_sweep, not both",
            ));
        }
        if let Some(rho) = self.rating_rho {
            if !(rho.is_finite() && rho.abs() <= 1.0) {
                return Err(invalid("rating_rho", format!("{rho} must lie in [-1, 1]")));
            }
        }
        Ok(())
    }
}

/// A generated corpus, ready to analyze in memory or write to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: CorpusSpec,
    pub dyads: Vec<SyntheticDyad>,
    pub ratings: RatingsTable,
    /// Swept coupling level per conversation (what ratings correlate with).
    pub levels: Vec<f64>,
}

fn lerp(from: f64, to: f64, u: f64) -> f64 {
    from + (to - from) * u
}

/// Generates `conversations` dyads with ids `syn-000`, `syn-001`, … plus a
/// ratings table. Per-conversation seeds and rating noise all derive from
/// the master seed in `spec.base.seed`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let mut master = ChaCha12Rng::seed_from_u64(spec.base.seed);
    let n = spec.conversations;

    let mut dyads = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    for j in 0..n {
        let u = if n > 1 { j as f64 / (n - 1) as f64 } else { 0.0 };
        let mut dyad_spec = spec.base.clone();
        dyad_spec.seed = master.random();
        if let Some([from, to]) = spec.kappa_sweep {
            dyad_spec.kappa = lerp(from, to, u);
            levels.push(dyad_spec.kappa);
        } else if let Some([from, to]) = spec.fraction_sweep {
            dyad_spec.coupled_fraction = lerp(from, to, u);
            levels.push(dyad_spec.coupled_fraction);
        } else {
            levels.push(0.0);
        }
        let id = format!("syn-{j:03}");
        dyads.push(generate_dyad(&id, &dyad_spec)?);
    }

    // Ratings: z-score the planted levels, mix with noise at the requested
    // correlation, then discretize onto each scale.
    let rho = spec.rating_rho.unwrap_or(0.0);
    let mean = levels.iter().sum::<f64>() / n as f64;
    let var = levels.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    let mut ratings = RatingsTable::new();
    for (j, dyad) in dyads.iter().enumerate() {
        let z = if sd > 0.0 { (levels[j] - mean) / sd } else { 0.0 };
        let mut row = Ratings::default();
        for kind in RatingKind::ALL {
            let eps: f64 = master.sample(StandardNormal);
            let mixed = rho * z + (1.0 - rho * rho).sqrt() * eps;
            let (min, max) = kind.range();
            let mid = (min + max) as f64 / 2.0;
            let span = (max - min) as f64;
            let value = (mid + mixed * span / 6.0)
                .round()
                .clamp(min as f64, max as f64) as i32;
            match kind {
                RatingKind::Tes => row.tes = Some(value),
                RatingKind::Blri => row.blri = Some(value),
                RatingKind::Ses => row.ses = Some(value),
            }
        }
        ratings.insert(dyad.conversation.id.clone(), row);
    }

    Ok(SyntheticCorpus {
        spec: spec.clone(),
        dyads,
        ratings,
        levels,
    })
}

/// Corpus manifest written next to the generated conversations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub spec: CorpusSpec,
}

/// Writes a corpus in the exact layout the loaders ingest: one directory
/// per conversation holding `turns.csv`, a planted `features.json`, and
/// optionally `audio.wav`; plus `ratings.csv` and a `manifest.json`.
pub fn write_corpus(corpus: &SyntheticCorpus, out_dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(out_dir).map_err(|e| SynthError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    for dyad in &corpus.dyads {
        let dir = out_dir.join(&dyad.conversation.id);
        fs::create_dir_all(&dir).map_err(|e| SynthError::Io {
            path: dir.clone(),
            source: e,
        })?;
        corpus::write_conversation_csv(&dyad.conversation, &dir.join(corpus::TURNS_FILE))?;
        let cache = FeatureCache::build(
            &dyad.conversation,
            &dyad.prosody,
            CacheSource::Synthetic,
            SYNTHETIC_HASH,
        )?;
        cache.write_json(&dir.join(corpus::FEATURES_FILE))?;
        if let Some(audio) = &dyad.conversation.audio {
            corpus::write_audio(audio, &dir.join(corpus::AUDIO_FILE))?;
        }
    }
    corpus::write_ratings_csv(&corpus.ratings, &out_dir.join(corpus::RATINGS_FILE))?;
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        spec: corpus.spec.clone(),
    };
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| SynthError::Io {
        path: manifest_path,
        source: e,
    })?;
    Ok(())
}

/// Reads and validates a corpus spec from JSON, reporting the offending
/// field path on error.
pub fn load_corpus_spec(path: &Path) -> Result<CorpusSpec, SynthError> {
    let text = fs::read_to_string(path).map_err(|e| SynthError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let spec: CorpusSpec =
        serde_path_to_error::deserialize(&mut de).map_err(|e| SynthError::SpecJson {
            path: path.to_path_buf(),
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
    spec.validate()?;
    Ok(spec)
}
