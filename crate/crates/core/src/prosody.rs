//! Prosodic feature extraction: pitch, intensity, and speech rate per turn.
//!
//! Pitch uses the YIN difference function with the cumulative-mean
//! normalization and parabolic refinement of the dip location; intensity is
//! framewise log mean-square (dBFS). Frame tracks are cut into per-turn
//! statistics (median / mean / population std), speech rate comes from the
//! transcript character count, and every feature is normalized by
//! subtracting the speaker's conversation-level mean. Unvoiced or otherwise
//! unmeasurable features stay `None` — they are never zero-filled.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Conversation, Speaker, Turn};
use crate::float::Real;
use crate::stats;

/// Schema version of the on-disk feature cache.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// Marker stored as the `config_hash` of caches built without audio.
pub const TURNS_ONLY_HASH: &str = "turns-only";

#[derive(Debug, Error)]
pub enum ProsodyError {
    #[error("audio too short: {samples} samples, need at least {needed} for one frame")]
    AudioTooShort { samples: usize, needed: usize },
    #[error("invalid DSP config: {reason}")]
    BadConfig { reason: String },
    #[error("feature rows ({features}) do not match turn count ({turns})")]
    LengthMismatch { features: usize, turns: usize },
    #[error("{path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed feature cache: {source}")]
    CacheJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: feature cache schema {got}, this build reads {want}")]
    CacheSchema { path: PathBuf, got: u32, want: u32 },
}

/// Pitch tracker settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    /// Analysis frame length in seconds.
    pub frame_s: f64,
    /// Hop between frame starts in seconds.
    pub hop_s: f64,
    /// Lowest F0 searched, Hz.
    pub min_hz: f64,
    /// Highest F0 searched, Hz.
    pub max_hz: f64,
    /// CMNDF dip threshold; frames with no dip below it are unvoiced.
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            frame_s: 0.040,
            hop_s: 0.010,
            min_hz: 60.0,
            max_hz: 400.0,
            voicing_threshold: 0.45,
        }
    }
}

/// Intensity settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityConfig {
    pub frame_s: f64,
    pub hop_s: f64,
    /// Floor added to the mean square before the log, so silence is finite.
    pub epsilon: f64,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        IntensityConfig {
            frame_s: 0.025,
            hop_s: 0.010,
            epsilon: 1e-10,
        }
    }
}

/// Complete DSP configuration; its hash keys the feature cache.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DspConfig {
    pub pitch: PitchConfig,
    pub intensity: IntensityConfig,
}

impl DspConfig {
    pub fn validate(&self) -> Result<(), ProsodyError> {
        let bad = |reason: String| Err(ProsodyError::BadConfig { reason });
        if !(self.pitch.frame_s > 0.0 && self.pitch.hop_s > 0.0) {
            return bad("pitch frame and hop must be positive".into());
        }
        if !(self.intensity.frame_s > 0.0 && self.intensity.hop_s > 0.0) {
            return bad("intensity frame and hop must be positive".into());
        }
        if !(self.pitch.min_hz > 0.0 && self.pitch.min_hz < self.pitch.max_hz) {
            return bad(format!(
                "pitch range {}..{} Hz is not a valid interval",
                self.pitch.min_hz, self.pitch.max_hz
            ));
        }
        if !(self.pitch.voicing_threshold > 0.0 && self.pitch.voicing_threshold < 1.0) {
            return bad(format!(
                "voicing threshold {} must be in (0, 1)",
                self.pitch.voicing_threshold
            ));
        }
        if self.intensity.epsilon <= 0.0 {
            return bad("intensity epsilon must be positive".into());
        }
        Ok(())
    }

    /// Hex digest over the serialized config; stored in feature caches so a
    /// settings change invalidates them.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A framewise track of one acoustic measure.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrack<T> {
    /// Hop between frame starts, seconds.
    pub hop_s: f64,
    /// Frame length, seconds.
    pub frame_s: f64,
    /// One value per frame; meaningful only where `voiced` is true.
    pub values: Vec<T>,
    /// Frame validity; intensity frames are always valid.
    pub voiced: Vec<bool>,
}

impl<T> FrameTrack<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Center time of frame `k`: frames start at exact hop multiples.
    pub fn frame_center_s(&self, k: usize) -> f64 {
        k as f64 * self.hop_s + 0.5 * self.frame_s
    }
}

fn frame_geometry(
    samples: usize,
    sample_rate: u32,
    frame_s: f64,
    hop_s: f64,
) -> Result<(usize, usize, usize), ProsodyError> {
    let frame_len = (frame_s * sample_rate as f64).round() as usize;
    let hop = (hop_s * sample_rate as f64).round().max(1.0) as usize;
    if samples < frame_len || frame_len == 0 {
        return Err(ProsodyError::AudioTooShort {
            samples,
            needed: frame_len.max(1),
        });
    }
    let n_frames = (samples - frame_len) / hop + 1;
    Ok((frame_len, hop, n_frames))
}

/// YIN pitch estimate for one frame. Returns `None` for unvoiced frames.
fn yin_frame<T: Real>(frame: &[T], sample_rate: u32, cfg: &PitchConfig) -> Option<T> {
    let w = frame.len() / 2;
    let tau_min = ((sample_rate as f64 / cfg.max_hz).floor() as usize).max(2);
    let tau_max = ((sample_rate as f64 / cfg.min_hz).ceil() as usize).min(w);
    if tau_min >= tau_max {
        return None;
    }

    // Difference function d(tau) over the first half of the frame.
    let mut diff = vec![T::zero(); tau_max + 1];
    for (tau, d) in diff.iter_mut().enumerate().skip(1) {
        let mut acc = T::zero();
        for i in 0..w {
            let delta = frame[i] - frame[i + tau];
            acc = acc + delta * delta;
        }
        *d = acc;
    }

    // Cumulative mean normalized difference: d'(tau) = d(tau) * tau / sum.
    let mut cmndf = vec![T::one(); tau_max + 1];
    let mut running = T::zero();
    for tau in 1..=tau_max {
        running = running + diff[tau];
        if running > T::zero() {
            cmndf[tau] = diff[tau] * T::of_usize(tau) / running;
        }
        // Digital silence leaves the default of 1: no dip, unvoiced.
    }

    // First dip under the threshold, walked down to its local minimum.
    let threshold = T::of(cfg.voicing_threshold);
    let mut tau = (tau_min..=tau_max).find(|&t| cmndf[t] < threshold)?;
    while tau + 1 <= tau_max && cmndf[tau + 1] < cmndf[tau] {
        tau += 1;
    }

    // Parabolic refinement around the dip.
    let refined = if tau > tau_min && tau < tau_max {
        let dm = cmndf[tau - 1];
        let d0 = cmndf[tau];
        let dp = cmndf[tau + 1];
        let denom = dm - d0 - d0 + dp;
        if denom > T::zero() {
            let offset = T::of(0.5) * (dm - dp) / denom;
            T::of_usize(tau) + offset.max(-T::one()).min(T::one())
        } else {
            T::of_usize(tau)
        }
    } else {
        T::of_usize(tau)
    };

    Some(T::of(sample_rate as f64) / refined)
}

/// Frame-level pitch track over a whole recording.
///
/// Frames start at exact hop multiples, so a signal delayed by a whole
/// number of hops yields the identical estimates shifted by that many
/// frames.
pub fn frame_pitch<T: Real>(
    samples: &[T],
    sample_rate: u32,
    cfg: &PitchConfig,
) -> Result<FrameTrack<T>, ProsodyError> {
    let (frame_len, hop, n_frames) =
        frame_geometry(samples.len(), sample_rate, cfg.frame_s, cfg.hop_s)?;
    let mut values = Vec::with_capacity(n_frames);
    let mut voiced = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let frame = &samples[k * hop..k * hop + frame_len];
        match yin_frame(frame, sample_rate, cfg) {
            Some(f0) => {
                values.push(f0);
                voiced.push(true);
            }
            None => {
                values.push(T::nan());
                voiced.push(false);
            }
        }
    }
    Ok(FrameTrack {
        hop_s: cfg.hop_s,
        frame_s: cfg.frame_s,
        values,
        voiced,
    })
}

/// Frame-level intensity (dBFS): 10 log10 of the mean square plus a floor.
pub fn frame_intensity<T: Real>(
    samples: &[T],
    sample_rate: u32,
    cfg: &IntensityConfig,
) -> Result<FrameTrack<T>, ProsodyError> {
    let (frame_len, hop, n_frames) =
        frame_geometry(samples.len(), sample_rate, cfg.frame_s, cfg.hop_s)?;
    let eps = T::of(cfg.epsilon);
    let norm = T::of_usize(frame_len);
    let ten = T::of(10.0);
    let mut values = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let frame = &samples[k * hop..k * hop + frame_len];
        let mut acc = T::zero();
        for &s in frame {
            acc = acc + s * s;
        }
        values.push(ten * (acc / norm + eps).log10());
    }
    Ok(FrameTrack {
        hop_s: cfg.hop_s,
        frame_s: cfg.frame_s,
        values,
        voiced: vec![true; n_frames],
    })
}

/// Median / mean / population std of the valid frames inside a turn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnStats<T> {
    pub median: T,
    pub mean: T,
    pub std: T,
}

/// Statistics over frames whose center lies in `[start_s, end_s)` of the
/// turn. `None` when no valid frame falls inside (e.g. fully unvoiced).
pub fn turn_statistics<T: Real>(track: &FrameTrack<T>, turn: &Turn) -> Option<TurnStats<T>> {
    let mut inside = Vec::new();
    for k in 0..track.len() {
        if !track.voiced[k] {
            continue;
        }
        let center = track.frame_center_s(k);
        if center >= turn.start_s && center < turn.end_s {
            inside.push(track.values[k]);
        }
    }
    if inside.is_empty() {
        return None;
    }
    let (mean, std) = stats::mean_and_population_std(&inside);
    Some(TurnStats {
        median: stats::median(&inside),
        mean,
        std,
    })
}

/// Speech rate proxy: transcript characters per second of turn duration.
pub fn speech_rate(turn: &Turn) -> f64 {
    turn.char_count as f64 / turn.duration_s()
}

/// The seven turn-level features, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    PitchMedian,
    PitchMean,
    PitchStd,
    IntensityMedian,
    IntensityMean,
    IntensityStd,
    SpeechRate,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::PitchMedian,
        Feature::PitchMean,
        Feature::PitchStd,
        Feature::IntensityMedian,
        Feature::IntensityMean,
        Feature::IntensityStd,
        Feature::SpeechRate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::PitchMedian => "pitch_median",
            Feature::PitchMean => "pitch_mean",
            Feature::PitchStd => "pitch_std",
            Feature::IntensityMedian => "intensity_median",
            Feature::IntensityMean => "intensity_mean",
            Feature::IntensityStd => "intensity_std",
            Feature::SpeechRate => "speech_rate",
        }
    }
}

impl std::fmt::Display for Feature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One turn's features; `None` marks a missing measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVec {
    pub pitch_median: Option<f64>,
    pub pitch_mean: Option<f64>,
    pub pitch_std: Option<f64>,
    pub intensity_median: Option<f64>,
    pub intensity_mean: Option<f64>,
    pub intensity_std: Option<f64>,
    pub speech_rate: Option<f64>,
}

impl FeatureVec {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::PitchMedian => self.pitch_median,
            Feature::PitchMean => self.pitch_mean,
            Feature::PitchStd => self.pitch_std,
            Feature::IntensityMedian => self.intensity_median,
            Feature::IntensityMean => self.intensity_mean,
            Feature::IntensityStd => self.intensity_std,
            Feature::SpeechRate => self.speech_rate,
        }
    }

    pub fn set(&mut self, feature: Feature, value: Option<f64>) {
        let slot = match feature {
            Feature::PitchMedian => &mut self.pitch_median,
            Feature::PitchMean => &mut self.pitch_mean,
            Feature::PitchStd => &mut self.pitch_std,
            Feature::IntensityMedian => &mut self.intensity_median,
            Feature::IntensityMean => &mut self.intensity_mean,
            Feature::IntensityStd => &mut self.intensity_std,
            Feature::SpeechRate => &mut self.speech_rate,
        };
        *slot = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Feature, Option<f64>)> + '_ {
        Feature::ALL.iter().map(move |&f| (f, self.get(f)))
    }
}

/// Raw and speaker-normalized features for one turn.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TurnProsody {
    pub raw: FeatureVec,
    pub normalized: FeatureVec,
}

/// Speaker-mean normalization: subtracts each speaker's conversation-level
/// mean per feature, so client and therapist values become comparable.
/// Missing values stay missing and are excluded from the means.
pub fn normalize_speaker(
    raw: &[FeatureVec],
    turns: &[Turn],
) -> Result<Vec<FeatureVec>, ProsodyError> {
    if raw.len() != turns.len() {
        return Err(ProsodyError::LengthMismatch {
            features: raw.len(),
            turns: turns.len(),
        });
    }
    let mut out = vec![FeatureVec::default(); raw.len()];
    for speaker in [Speaker::Client, Speaker::Therapist] {
        for feature in Feature::ALL {
            let values: Vec<f64> = raw
                .iter()
                .zip(turns)
                .filter(|(_, t)| t.speaker == speaker)
                .filter_map(|(fv, _)| fv.get(feature))
                .collect();
            if values.is_empty() {
                continue;
            }
            let mean = stats::mean(&values);
            for (i, turn) in turns.iter().enumerate() {
                if turn.speaker == speaker {
                    out[i].set(feature, raw[i].get(feature).map(|v| v - mean));
                }
            }
        }
    }
    Ok(out)
}

/// Runs the full per-conversation extraction: framewise tracks (when audio
/// is present), per-turn statistics, speech rate, then normalization.
pub fn extract_conversation(
    conversation: &Conversation,
    cfg: &DspConfig,
) -> Result<Vec<TurnProsody>, ProsodyError> {
    cfg.validate()?;
    let mut raw = vec![FeatureVec::default(); conversation.turns.len()];
    for (fv, turn) in raw.iter_mut().zip(&conversation.turns) {
        fv.speech_rate = Some(speech_rate(turn));
    }
    if let Some(audio) = &conversation.audio {
        let pitch = frame_pitch(&audio.samples, audio.sample_rate, &cfg.pitch)?;
        let intensity = frame_intensity(&audio.samples, audio.sample_rate, &cfg.intensity)?;
        for (fv, turn) in raw.iter_mut().zip(&conversation.turns) {
            if let Some(s) = turn_statistics(&pitch, turn) {
                fv.pitch_median = Some(s.median);
                fv.pitch_mean = Some(s.mean);
                fv.pitch_std = Some(s.std);
            }
            if let Some(s) = turn_statistics(&intensity, turn) {
                fv.intensity_median = Some(s.median);
                fv.intensity_mean = Some(s.mean);
                fv.intensity_std = Some(s.std);
            }
        }
    }
    let normalized = normalize_speaker(&raw, &conversation.turns)?;
    Ok(raw
        .into_iter()
        .zip(normalized)
        .map(|(raw, normalized)| TurnProsody { raw, normalized })
        .collect())
}

/// Where a feature cache came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheSource {
    /// Extracted from audio with the config whose hash is recorded.
    Dsp,
    /// Planted by the synthetic generator; authoritative regardless of DSP
    /// settings.
    Synthetic,
    /// No audio available; only transcript-derived features present.
    TurnsOnly,
}

/// One cached turn: identity plus both feature variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedTurn {
    pub index: usize,
    pub speaker: Speaker,
    pub start_s: f64,
    pub end_s: f64,
    pub char_count: u32,
    pub raw: FeatureVec,
    pub normalized: FeatureVec,
}

/// On-disk feature cache for one conversation (`features.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCache {
    pub schema_version: u32,
    pub conversation_id: String,
    pub source: CacheSource,
    /// Hash of the [`DspConfig`] used, or `"synthetic"` / `"turns-only"`.
    pub config_hash: String,
    pub turns: Vec<CachedTurn>,
}

impl FeatureCache {
    pub fn build(
        conversation: &Conversation,
        prosody: &[TurnProsody],
        source: CacheSource,
        config_hash: impl Into<String>,
    ) -> Result<Self, ProsodyError> {
        if prosody.len() != conversation.turns.len() {
            return Err(ProsodyError::LengthMismatch {
                features: prosody.len(),
                turns: conversation.turns.len(),
            });
        }
        Ok(FeatureCache {
            schema_version: FEATURE_SCHEMA_VERSION,
            conversation_id: conversation.id.clone(),
            source,
            config_hash: config_hash.into(),
            turns: conversation
                .turns
                .iter()
                .zip(prosody)
                .map(|(t, p)| CachedTurn {
                    index: t.index,
                    speaker: t.speaker,
                    start_s: t.start_s,
                    end_s: t.end_s,
                    char_count: t.char_count,
                    raw: p.raw,
                    normalized: p.normalized,
                })
                .collect(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), ProsodyError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ProsodyError::CacheJson {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, json + "\n").map_err(|e| ProsodyError::CacheIo {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn read_json(path: &Path) -> Result<Self, ProsodyError> {
        let text = fs::read_to_string(path).map_err(|e| ProsodyError::CacheIo {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cache: FeatureCache =
            serde_json::from_str(&text).map_err(|e| ProsodyError::CacheJson {
                path: path.to_path_buf(),
                source: e,
            })?;
        if cache.schema_version != FEATURE_SCHEMA_VERSION {
            return Err(ProsodyError::CacheSchema {
                path: path.to_path_buf(),
                got: cache.schema_version,
                want: FEATURE_SCHEMA_VERSION,
            });
        }
        Ok(cache)
    }

    /// Whether the cache describes exactly this conversation's turns.
    pub fn matches(&self, conversation: &Conversation) -> bool {
        self.turns.len() == conversation.turns.len()
            && self
                .turns
                .iter()
                .zip(&conversation.turns)
                .all(|(c, t)| {
                    c.speaker == t.speaker
                        && c.char_count == t.char_count
                        && (c.start_s - t.start_s).abs() < 1e-6
                        && (c.end_s - t.end_s).abs() < 1e-6
                })
    }

    /// Whether the cache can be used under the given DSP config hash.
    /// Synthetic caches carry planted ground truth and are always fresh.
    pub fn is_fresh(&self, current_hash: &str) -> bool {
        match self.source {
            CacheSource::Synthetic => true,
            CacheSource::Dsp | CacheSource::TurnsOnly => self.config_hash == current_hash,
        }
    }

    pub fn to_prosody(&self) -> Vec<TurnProsody> {
        self.turns
            .iter()
            .map(|t| TurnProsody {
                raw: t.raw,
                normalized: t.normalized,
            })
            .collect()
    }
}
