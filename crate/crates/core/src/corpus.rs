//! Corpus ingestion: turn tables, session ratings, and optional audio.
//!
//! A conversation on disk is a directory holding `turns.csv` (one row per
//! speaking turn), optionally `audio.wav` (16-bit mono PCM) and a feature
//! cache. Session ratings live in a single `ratings.csv` next to the
//! conversation directories. Loading validates every structural invariant
//! up front so later stages can assume clean data: ordered, non-overlapping
//! turns with positive duration, adjacent turns merged per speaker, and both
//! speakers present.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Expected header of a turn table.
pub const TURNS_HEADER: [&str; 5] = ["index", "speaker", "start_s", "end_s", "char_count"];

/// Expected header of a ratings table.
pub const RATINGS_HEADER: [&str; 4] = ["conversation_id", "tes", "blri", "ses"];

/// Conventional file names inside a corpus directory.
pub const TURNS_FILE: &str = "turns.csv";
pub const AUDIO_FILE: &str = "audio.wav";
pub const FEATURES_FILE: &str = "features.json";
pub const RATINGS_FILE: &str = "ratings.csv";

/// Minimum sample rate accepted for conversation audio.
pub const MIN_SAMPLE_RATE: u32 = 8_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: bad header: expected {expected:?}, got {got:?}")]
    BadHeader {
        path: PathBuf,
        expected: String,
        got: String,
    },
    #[error("{path} line {line}: field {field:?}: {message}")]
    BadField {
        path: PathBuf,
        line: u64,
        field: &'static str,
        message: String,
    },
    #[error("{path} line {line}: unknown speaker tag {got:?} (expected \"C\" or \"T\")")]
    BadSpeaker {
        path: PathBuf,
        line: u64,
        got: String,
    },
    #[error("{path} line {line}: turn has non-positive duration ({start_s}..{end_s})")]
    NonPositiveDuration {
        path: PathBuf,
        line: u64,
        start_s: f64,
        end_s: f64,
    },
    #[error("{path} line {line}: turn overlaps the previous one ({prev_end_s} > {start_s})")]
    OverlappingTurns {
        path: PathBuf,
        line: u64,
        prev_end_s: f64,
        start_s: f64,
    },
    #[error("{path} line {line}: turn index {got} does not increase (previous {prev})")]
    IndexOrder {
        path: PathBuf,
        line: u64,
        prev: u64,
        got: u64,
    },
    #[error("conversation {id:?} has {got} turns after merging; need at least 2")]
    TooFewTurns { id: String, got: usize },
    #[error("conversation {id:?} contains only speaker {speaker}")]
    SingleSpeaker { id: String, speaker: Speaker },
    #[error("{path}: unreadable WAV: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported audio format: {reason}")]
    BadAudioFormat { path: PathBuf, reason: String },
    #[error(
        "conversation {id:?}: turns extend to {last_end_s} s but audio lasts {audio_s} s"
    )]
    AudioTooShort {
        id: String,
        last_end_s: f64,
        audio_s: f64,
    },
    #[error(
        "{path} line {line}: {scale} rating {value} outside valid range {min}..={max}"
    )]
    RatingOutOfRange {
        path: PathBuf,
        line: u64,
        scale: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("{path} line {line}: duplicate conversation id {id:?}")]
    DuplicateRating {
        path: PathBuf,
        line: u64,
        id: String,
    },
    #[error("{path}: not a corpus directory (no conversation subdirectories with {TURNS_FILE})")]
    EmptyCorpusDir { path: PathBuf },
}

/// The two conversation roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "C")]
    Client,
    #[serde(rename = "T")]
    Therapist,
}

impl Speaker {
    /// Single-letter tag used in CSV files.
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::Client => "C",
            Speaker::Therapist => "T",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Speaker> {
        match tag {
            "C" => Some(Speaker::Client),
            "T" => Some(Speaker::Therapist),
            _ => None,
        }
    }

    /// The other role.
    pub fn other(self) -> Speaker {
        match self {
            Speaker::Client => Speaker::Therapist,
            Speaker::Therapist => Speaker::Client,
        }
    }
}

impl std::fmt::Display for Speaker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One speaking turn, after validation and merging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 0-based position in the conversation (reassigned after merging).
    pub index: usize,
    pub speaker: Speaker,
    /// Onset in seconds from the conversation start.
    pub start_s: f64,
    /// Offset in seconds; always greater than `start_s`.
    pub end_s: f64,
    /// Transcript length in characters, used for the speech-rate proxy.
    pub char_count: u32,
}

impl Turn {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn midpoint_s(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }
}

/// Decoded conversation audio, normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A loaded conversation: validated turn sequence plus optional audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
    pub audio: Option<Audio>,
}

impl Conversation {
    /// Iterator over turns of one speaker, in time order.
    pub fn turns_of(&self, speaker: Speaker) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(move |t| t.speaker == speaker)
    }
}

fn io_err(path: &Path, source: io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, expected: &[&str]) -> Result<(), CorpusError> {
    let got_fields: Vec<&str> = got.iter().map(str::trim).collect();
    if got_fields != expected {
        return Err(CorpusError::BadHeader {
            path: path.to_path_buf(),
            expected: expected.join(","),
            got: got_fields.join(","),
        });
    }
    Ok(())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    record: &csv::StringRecord,
    col: usize,
    field: &'static str,
) -> Result<T, CorpusError>
where
    T::Err: std::fmt::Display,
{
    let raw = record.get(col).unwrap_or("").trim();
    raw.parse().map_err(|e: T::Err| CorpusError::BadField {
        path: path.to_path_buf(),
        line: record_line(record),
        field,
        message: format!("cannot parse {raw:?}: {e}"),
    })
}

/// Collapses runs of consecutive same-speaker turns into single turns:
/// earliest start, latest end, summed character count. Indices are
/// reassigned afterwards.
fn merge_consecutive(turns: Vec<Turn>) -> Vec<Turn> {
    let mut merged: Vec<Turn> = Vec::with_capacity(turns.len());
    for turn in turns {
        match merged.last_mut() {
            Some(prev) if prev.speaker == turn.speaker => {
                prev.end_s = turn.end_s;
                prev.char_count = prev.char_count.saturating_add(turn.char_count);
            }
            _ => merged.push(turn),
        }
    }
    for (i, turn) in merged.iter_mut().enumerate() {
        turn.index = i;
    }
    merged
}

/// Reads and validates a turn table, merging consecutive same-speaker rows.
///
/// The conversation id is taken from the parent directory name (falling back
/// to the file stem). When `audio_path` is given the WAV is decoded and
/// checked against the turn times.
pub fn load_conversation(
    turn_table_path: &Path,
    audio_path: Option<&Path>,
) -> Result<Conversation, CorpusError> {
    let id = conversation_id_for(turn_table_path);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(turn_table_path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => io_err(
                turn_table_path,
                io::Error::new(io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => CorpusError::Csv {
                path: turn_table_path.to_path_buf(),
                source: e,
            },
        })?;
    check_header(
        turn_table_path,
        reader
            .headers()
            .map_err(|e| CorpusError::Csv {
                path: turn_table_path.to_path_buf(),
                source: e,
            })?,
        &TURNS_HEADER,
    )?;

    let mut turns: Vec<Turn> = Vec::new();
    let mut prev_index: Option<u64> = None;
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::Csv {
            path: turn_table_path.to_path_buf(),
            source: e,
        })?;
        let line = record_line(&record);
        let index: u64 = parse_field(turn_table_path, &record, 0, "index")?;
        let speaker_raw = record.get(1).unwrap_or("").trim();
        let speaker =
            Speaker::from_tag(speaker_raw).ok_or_else(|| CorpusError::BadSpeaker {
                path: turn_table_path.to_path_buf(),
                line,
                got: speaker_raw.to_string(),
            })?;
        let start_s: f64 = parse_field(turn_table_path, &record, 2, "start_s")?;
        let end_s: f64 = parse_field(turn_table_path, &record, 3, "end_s")?;
        let char_count: u32 = parse_field(turn_table_path, &record, 4, "char_count")?;

        if let Some(prev) = prev_index {
            if index <= prev {
                return Err(CorpusError::IndexOrder {
                    path: turn_table_path.to_path_buf(),
                    line,
                    prev,
                    got: index,
                });
            }
        }
        prev_index = Some(index);
        if !start_s.is_finite() || !end_s.is_finite() || start_s < 0.0 {
            return Err(CorpusError::BadField {
                path: turn_table_path.to_path_buf(),
                line,
                field: "start_s",
                message: format!("times must be finite and non-negative ({start_s}..{end_s})"),
            });
        }
        if end_s <= start_s {
            return Err(CorpusError::NonPositiveDuration {
                path: turn_table_path.to_path_buf(),
                line,
                start_s,
                end_s,
            });
        }
        if let Some(prev) = turns.last() {
            if start_s < prev.end_s {
                return Err(CorpusError::OverlappingTurns {
                    path: turn_table_path.to_path_buf(),
                    line,
                    prev_end_s: prev.end_s,
                    start_s,
                });
            }
        }
        turns.push(Turn {
            index: turns.len(),
            speaker,
            start_s,
            end_s,
            char_count,
        });
    }

    let turns = merge_consecutive(turns);
    if turns.len() < 2 {
        return Err(CorpusError::TooFewTurns {
            id,
            got: turns.len(),
        });
    }
    if turns.iter().all(|t| t.speaker == turns[0].speaker) {
        return Err(CorpusError::SingleSpeaker {
            id,
            speaker: turns[0].speaker,
        });
    }

    let audio = match audio_path {
        Some(path) => {
            let audio = load_audio(path)?;
            let last_end = turns.last().map(|t| t.end_s).unwrap_or(0.0);
            // Tiny slack: durations that match to the sample shouldn't trip
            // on float noise in the turn table.
            if last_end > audio.duration_s() + 1e-9 {
                return Err(CorpusError::AudioTooShort {
                    id,
                    last_end_s: last_end,
                    audio_s: audio.duration_s(),
                });
            }
            Some(audio)
        }
        None => None,
    };

    Ok(Conversation { id, turns, audio })
}

/// Conversation id implied by a turn-table path: the parent directory name.
pub fn conversation_id_for(turn_table_path: &Path) -> String {
    turn_table_path
        .parent()
        .and_then(|p| p.file_name())
        .or_else(|| turn_table_path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "conversation".to_string())
}

/// Decodes a WAV file, requiring 16-bit mono integer PCM at or above
/// [`MIN_SAMPLE_RATE`].
pub fn load_audio(path: &Path) -> Result<Audio, CorpusError> {
    let mut reader = hound::WavReader::open(path).map_err(|e| CorpusError::Wav {
        path: path.to_path_buf(),
        source: e,
    })?;
    let spec = reader.spec();
    let reject = |reason: String| CorpusError::BadAudioFormat {
        path: path.to_path_buf(),
        reason,
    };
    if spec.channels != 1 {
        return Err(reject(format!("{} channels; need mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(reject(format!(
            "{:?} {}-bit; need 16-bit integer PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate < MIN_SAMPLE_RATE {
        return Err(reject(format!(
            "sample rate {} Hz below minimum {} Hz",
            spec.sample_rate, MIN_SAMPLE_RATE
        )));
    }
    let samples: Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples = samples.map_err(|e| CorpusError::Wav {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Audio {
        samples: samples.iter().map(|&s| s as f64 / 32768.0).collect(),
        sample_rate: spec.sample_rate,
    })
}

/// Writes a turn table in the same format [`load_conversation`] reads.
pub fn write_conversation_csv(conversation: &Conversation, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    out.push_str(&TURNS_HEADER.join(","));
    out.push('\n');
    for t in &conversation.turns {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.index,
            t.speaker.tag(),
            t.start_s,
            t.end_s,
            t.char_count
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes normalized [-1, 1] samples as 16-bit mono PCM.
pub fn write_audio(audio: &Audio, path: &Path) -> Result<(), CorpusError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| CorpusError::Wav {
        path: path.to_path_buf(),
        source: e,
    })?;
    for &s in &audio.samples {
        let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| CorpusError::Wav {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    writer.finalize().map_err(|e| CorpusError::Wav {
        path: path.to_path_buf(),
        source: e,
    })
}

/// The three session-level rating scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingKind {
    Tes,
    Blri,
    Ses,
}

impl RatingKind {
    pub const ALL: [RatingKind; 3] = [RatingKind::Tes, RatingKind::Blri, RatingKind::Ses];

    pub fn name(self) -> &'static str {
        match self {
            RatingKind::Tes => "TES",
            RatingKind::Blri => "BLRI",
            RatingKind::Ses => "SES",
        }
    }

    /// Valid inclusive range of the scale.
    pub fn range(self) -> (i64, i64) {
        match self {
            RatingKind::Tes => (9, 63),
            RatingKind::Blri => (-48, 48),
            RatingKind::Ses => (5, 25),
        }
    }
}

impl std::fmt::Display for RatingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ratings for one conversation; `None` marks a missing cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ratings {
    pub tes: Option<i32>,
    pub blri: Option<i32>,
    pub ses: Option<i32>,
}

impl Ratings {
    pub fn get(&self, kind: RatingKind) -> Option<i32> {
        match kind {
            RatingKind::Tes => self.tes,
            RatingKind::Blri => self.blri,
            RatingKind::Ses => self.ses,
        }
    }

    /// True when any scale is missing; such rows are kept but flagged.
    pub fn missing_any(&self) -> bool {
        self.tes.is_none() || self.blri.is_none() || self.ses.is_none()
    }
}

/// Ratings for a whole corpus, keyed by conversation id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingsTable {
    rows: BTreeMap<String, Ratings>,
}

impl RatingsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, ratings: Ratings) {
        self.rows.insert(id.into(), ratings);
    }

    pub fn get(&self, id: &str) -> Option<&Ratings> {
        self.rows.get(id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in conversation-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Ratings)> {
        self.rows.iter()
    }

    /// Ids of rows with at least one missing cell, in order.
    pub fn flagged_incomplete(&self) -> Vec<&String> {
        self.rows
            .iter()
            .filter(|(_, r)| r.missing_any())
            .map(|(id, _)| id)
            .collect()
    }
}

fn parse_rating_cell(
    path: &Path,
    record: &csv::StringRecord,
    col: usize,
    kind: RatingKind,
) -> Result<Option<i32>, CorpusError> {
    let raw = record.get(col).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let value: i64 = raw.parse().map_err(|e| CorpusError::BadField {
        path: path.to_path_buf(),
        line: record_line(record),
        field: match kind {
            RatingKind::Tes => "tes",
            RatingKind::Blri => "blri",
            RatingKind::Ses => "ses",
        },
        message: format!("cannot parse {raw:?}: {e}"),
    })?;
    let (min, max) = kind.range();
    if value < min || value > max {
        return Err(CorpusError::RatingOutOfRange {
            path: path.to_path_buf(),
            line: record_line(record),
            scale: kind.name(),
            value,
            min,
            max,
        });
    }
    Ok(Some(value as i32))
}

/// Reads a ratings table, enforcing per-scale ranges. Rows with missing
/// cells are retained; [`RatingsTable::flagged_incomplete`] lists them.
pub fn load_ratings(path: &Path) -> Result<RatingsTable, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => io_err(
                path,
                io::Error::new(io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => CorpusError::Csv {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
    check_header(
        path,
        reader.headers().map_err(|e| CorpusError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?,
        &RATINGS_HEADER,
    )?;

    let mut table = RatingsTable::new();
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let id = record.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(CorpusError::BadField {
                path: path.to_path_buf(),
                line: record_line(&record),
                field: "conversation_id",
                message: "must not be empty".to_string(),
            });
        }
        if table.get(&id).is_some() {
            return Err(CorpusError::DuplicateRating {
                path: path.to_path_buf(),
                line: record_line(&record),
                id,
            });
        }
        let ratings = Ratings {
            tes: parse_rating_cell(path, &record, 1, RatingKind::Tes)?,
            blri: parse_rating_cell(path, &record, 2, RatingKind::Blri)?,
            ses: parse_rating_cell(path, &record, 3, RatingKind::Ses)?,
        };
        table.insert(id, ratings);
    }
    Ok(table)
}

/// Writes a ratings table in the same format [`load_ratings`] reads.
pub fn write_ratings_csv(table: &RatingsTable, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    out.push_str(&RATINGS_HEADER.join(","));
    out.push('\n');
    let cell = |v: Option<i32>| v.map(|x| x.to_string()).unwrap_or_default();
    for (id, r) in table.iter() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            id,
            cell(r.tes),
            cell(r.blri),
            cell(r.ses)
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Paths of one conversation directory inside a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationPaths {
    pub id: String,
    pub dir: PathBuf,
    pub turns_csv: PathBuf,
    pub audio_wav: Option<PathBuf>,
    pub features_json: Option<PathBuf>,
}

/// Lists conversation directories (those containing `turns.csv`) under a
/// corpus root, sorted by id.
pub fn discover_conversations(corpus_dir: &Path) -> Result<Vec<ConversationPaths>, CorpusError> {
    let entries = fs::read_dir(corpus_dir).map_err(|e| io_err(corpus_dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(corpus_dir, e))?;
        let dir = entry.path();
        if !dir.is_dir() {
            continue;
        }
        let turns_csv = dir.join(TURNS_FILE);
        if !turns_csv.is_file() {
            continue;
        }
        let audio_wav = Some(dir.join(AUDIO_FILE)).filter(|p| p.is_file());
        let features_json = Some(dir.join(FEATURES_FILE)).filter(|p| p.is_file());
        found.push(ConversationPaths {
            id: entry.file_name().to_string_lossy().into_owned(),
            dir,
            turns_csv,
            audio_wav,
            features_json,
        });
    }
    if found.is_empty() {
        return Err(CorpusError::EmptyCorpusDir {
            path: corpus_dir.to_path_buf(),
        });
    }
    found.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;
    use tempfile::TempDir;

    fn write_turns(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        write!(f, "{body}").unwrap();
        path
    }

    const HEADER: &str = "index,speaker,start_s,end_s,char_count\n";

    #[test]
    fn loads_and_types_a_simple_table() {
        let tmp = TempDir::new().unwrap();
        let path = write_turns(
            tmp.path(),
            "turns.csv",
            &format!("{HEADER}0,C,0.0,2.5,40\n1,T,2.8,4.0,18\n2,C,4.5,9.0,77\n3,T,9.2,10.0,12\n"),
        );
        let conv = load_conversation(&path, None).unwrap();
        assert_eq!(conv.turns.len(), 4);
        assert_eq!(conv.turns[0].speaker, Speaker::Client);
        assert_eq!(conv.turns[1].speaker, Speaker::Therapist);
        assert_eq!(conv.turns[2].char_count, 77);
        assert!((conv.turns[2].duration_s() - 4.5).abs() < 1e-12);
        assert!((conv.turns[1].midpoint_s() - 3.4).abs() < 1e-12);
        assert!(conv.audio.is_none());
        assert_eq!(conv.turns_of(Speaker::Client).count(), 2);
    }

    #[test]
    fn conversation_id_comes_from_directory() {
        let tmp = TempDir::new().unwrap();
        let conv_dir = tmp.path().join("sess-042");
        fs::create_dir(&conv_dir).unwrap();
        let path = write_turns(&conv_dir, "turns.csv", &format!("{HEADER}0,C,0,1,5\n1,T,1,2,5\n"));
        assert_eq!(load_conversation(&path, None).unwrap().id, "sess-042");
    }

    #[test]
    fn merges_consecutive_same_speaker_turns() {
        let tmp = TempDir::new().unwrap();
        // Two client rows in a row: merged span 1.0..3.0 with counts summed.
        let path = write_turns(
            tmp.path(),
            "turns.csv",
            &format!("{HEADER}0,T,0.0,0.8,10\n1,C,1.0,2.0,5\n2,C,2.5,3.0,7\n3,T,3.2,4.0,9\n"),
        );
        let conv = load_conversation(&path, None).unwrap();
        assert_eq!(conv.turns.len(), 3);
        let merged = conv.turns[1];
        assert_eq!(merged.speaker, Speaker::Client);
        assert_eq!(merged.start_s, 1.0);
        assert_eq!(merged.end_s, 3.0);
        assert_eq!(merged.char_count, 12);
        // Indices are reassigned to be consecutive.
        let idx: Vec<usize> = conv.turns.iter().map(|t| t.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn merge_is_idempotent_on_alternating_input() {
        let tmp = TempDir::new().unwrap();
        let body = format!("{HEADER}0,C,0,1,5\n1,T,1,2,6\n2,C,2,3,7\n3,T,3,4,8\n");
        let path = write_turns(tmp.path(), "turns.csv", &body);
        let conv = load_conversation(&path, None).unwrap();
        assert_eq!(conv.turns.len(), 4);
        // Alternation holds after merging, by construction.
        for pair in conv.turns.windows(2) {
            assert_ne!(pair[0].speaker, pair[1].speaker);
        }
    }

    #[test]
    fn rejects_bad_header() {
        let tmp = TempDir::new().unwrap();
        let path = write_turns(
            tmp.path(),
            "turns.csv",
            "idx,speaker,start,end,chars\n0,C,0,1,5\n",
        );
        match load_conversation(&path, None) {
            Err(CorpusError::BadHeader { expected, got, .. }) => {
                assert_eq!(expected, "index,speaker,start_s,end_s,char_count");
                assert_eq!(got, "idx,speaker,start,end,chars");
            }
            other => panic!("expected BadHeader, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_speaker_with_line_number() {
        let tmp = TempDir::new().unwrap();
        let path = write_turns(
            tmp.path(),
            "turns.csv",
            &format!("{HEADER}0,C,0,1,5\n1,X,1,2,5\n"),
        );
        match load_conversation(&path, None) {
            Err(CorpusError::BadSpeaker { line, got, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(got, "X");
            }
            other => panic!("expected BadSpeaker, got {other:?}"),
        }
    }

    #[test]
    fn rejects_time_violations() {
        let tmp = TempDir::new().unwrap();
        let zero = write_turns(
            tmp.path(),
            "zero.csv",
            &format!("{HEADER}0,C,0,1,5\n1,T,2.0,2.0,5\n"),
        );
        assert!(matches!(
            load_conversation(&zero, None),
            Err(CorpusError::NonPositiveDuration { line: 3, .. })
        ));

        let overlap = write_turns(
            tmp.path(),
            "overlap.csv",
            &format!("{HEADER}0,C,0,2.0,5\n1,T,1.5,3.0,5\n"),
        );
        assert!(matches!(
            load_conversation(&overlap, None),
            Err(CorpusError::OverlappingTurns { line: 3, .. })
        ));

        let negative = write_turns(
            tmp.path(),
            "negative.csv",
            &format!("{HEADER}0,C,-1.0,1.0,5\n1,T,1.5,3.0,5\n"),
        );
        assert!(matches!(
            load_conversation(&negative, None),
            Err(CorpusError::BadField { field: "start_s", .. })
        ));

        let order = write_turns(
            tmp.path(),
            "order.csv",
            &format!("{HEADER}1,C,0,1,5\n1,T,1.5,3.0,5\n"),
        );
        assert!(matches!(
            load_conversation(&order, None),
            Err(CorpusError::IndexOrder { prev: 1, got: 1, .. })
        ));
    }

    #[test]
    fn rejects_degenerate_conversations() {
        let tmp = TempDir::new().unwrap();
        let single = write_turns(
            tmp.path(),
            "single.csv",
            &format!("{HEADER}0,C,0,1,5\n1,C,1,2,5\n"),
        );
        // Both rows merge into one turn, leaving too few.
        assert!(matches!(
            load_conversation(&single, None),
            Err(CorpusError::TooFewTurns { got: 1, .. })
        ));

        let lonely = write_turns(
            tmp.path(),
            "lonely.csv",
            &format!("{HEADER}0,T,0,1,5\n1,T,2,3,5\n2,T,4,5,5\n"),
        );
        // Same speaker throughout also merges to one turn.
        assert!(matches!(
            load_conversation(&lonely, None),
            Err(CorpusError::TooFewTurns { .. })
        ));
    }

    #[test]
    fn turn_table_round_trips() {
        let tmp = TempDir::new().unwrap();
        let path = write_turns(
            tmp.path(),
            "turns.csv",
            &format!("{HEADER}0,C,0.25,2.125,40\n1,T,2.5,4.75,18\n"),
        );
        let conv = load_conversation(&path, None).unwrap();
        let out = tmp.path().join("copy.csv");
        write_conversation_csv(&conv, &out).unwrap();
        let again = load_conversation(&out, None).unwrap();
        assert_eq!(conv.turns, again.turns);
    }

    fn write_wav(path: &Path, sample_rate: u32, channels: u16, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            writer.write_sample(s).unwrap();
        }
        writer.finalize().unwrap();
    }

    #[test]
    fn loads_audio_and_checks_format() {
        let tmp = TempDir::new().unwrap();
        let ok = tmp.path().join("ok.wav");
        write_wav(&ok, 16_000, 1, &[0, 16384, -16384, 32767]);
        let audio = load_audio(&ok).unwrap();
        assert_eq!(audio.sample_rate, 16_000);
        assert_eq!(audio.samples.len(), 4);
        assert!((audio.samples[1] - 0.5).abs() < 1e-4);
        assert!((audio.samples[2] + 0.5).abs() < 1e-4);

        let stereo = tmp.path().join("stereo.wav");
        write_wav(&stereo, 16_000, 2, &[0, 0, 1, 1]);
        assert!(matches!(
            load_audio(&stereo),
            Err(CorpusError::BadAudioFormat { .. })
        ));

        let slow = tmp.path().join("slow.wav");
        write_wav(&slow, 4_000, 1, &[0, 1, 2, 3]);
        assert!(matches!(
            load_audio(&slow),
            Err(CorpusError::BadAudioFormat { .. })
        ));
    }

    #[test]
    fn audio_round_trips_through_write() {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("rt.wav");
        let audio = Audio {
            samples: vec![0.0, 0.25, -0.25, 0.9],
            sample_rate: 16_000,
        };
        write_audio(&audio, &path).unwrap();
        let back = load_audio(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_audio_shorter_than_turns() {
        let tmp = TempDir::new().unwrap();
        let conv_dir = tmp.path().join("short");
        fs::create_dir(&conv_dir).unwrap();
        let turns = write_turns(
            &conv_dir,
            "turns.csv",
            &format!("{HEADER}0,C,0,1,5\n1,T,1,10.0,5\n"),
        );
        let wav = conv_dir.join("audio.wav");
        // One second of silence at 8 kHz; turns claim ten seconds.
        write_wav(&wav, 8_000, 1, &vec![0i16; 8_000]);
        assert!(matches!(
            load_conversation(&turns, Some(&wav)),
            Err(CorpusError::AudioTooShort { .. })
        ));
    }

    const RHEADER: &str = "conversation_id,tes,blri,ses\n";

    #[test]
    fn loads_ratings_with_missing_cells() {
        let tmp = TempDir::new().unwrap();
        let path = write_turns(
            tmp.path(),
            "ratings.csv",
            &format!("{RHEADER}a,30,10,20\nb,,48,5\nc,9,-48,25\n"),
        );
        let table = load_ratings(&path).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.get("a").unwrap().tes, Some(30));
        assert_eq!(table.get("b").unwrap().tes, None);
        assert_eq!(table.get("b").unwrap().blri, Some(48));
        assert_eq!(table.get("c").unwrap().ses, Some(25));
        assert_eq!(table.flagged_incomplete(), vec!["b"]);
        assert!(table.get("b").unwrap().missing_any());
        assert!(!table.get("a").unwrap().missing_any());
    }

    #[test]
    fn rating_range_errors_name_the_scale() {
        let tmp = TempDir::new().unwrap();
        for (body, scale) in [
            (format!("{RHEADER}a,64,0,20\n"), "TES"),
            (format!("{RHEADER}a,30,-49,20\n"), "BLRI"),
            (format!("{RHEADER}a,30,0,26\n"), "SES"),
            (format!("{RHEADER}a,8,0,20\n"), "TES"),
        ] {
            let path = write_turns(tmp.path(), "r.csv", &body);
            match load_ratings(&path) {
                Err(CorpusError::RatingOutOfRange { scale: got, line, .. }) => {
                    assert_eq!(got, scale);
                    assert_eq!(line, 2);
                }
                other => panic!("expected RatingOutOfRange({scale}), got {other:?}"),
            }
        }
    }

    #[test]
    fn rejects_duplicate_rating_rows() {
        let tmp = TempDir::new().unwrap();
        let path = write_turns(
            tmp.path(),
            "ratings.csv",
            &format!("{RHEADER}a,30,10,20\na,31,11,21\n"),
        );
        assert!(matches!(
            load_ratings(&path),
            Err(CorpusError::DuplicateRating { .. })
        ));
    }

    #[test]
    fn ratings_round_trip() {
        let mut table = RatingsTable::new();
        table.insert(
            "x",
            Ratings {
                tes: Some(40),
                blri: None,
                ses: Some(17),
            },
        );
        table.insert(
            "y",
            Ratings {
                tes: Some(9),
                blri: Some(-12),
                ses: Some(5),
            },
        );
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("ratings.csv");
        write_ratings_csv(&table, &path).unwrap();
        let back = load_ratings(&path).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn discovers_conversation_directories_sorted() {
        let tmp = TempDir::new().unwrap();
        for id in ["bbb", "aaa"] {
            let dir = tmp.path().join(id);
            fs::create_dir(&dir).unwrap();
            write_turns(&dir, "turns.csv", &format!("{HEADER}0,C,0,1,5\n1,T,1,2,5\n"));
        }
        // Distractors: a bare file and a directory without a turn table.
        fs::write(tmp.path().join("ratings.csv"), "x").unwrap();
        fs::create_dir(tmp.path().join("empty")).unwrap();
        fs::write(tmp.path().join("aaa").join("features.json"), "{}").unwrap();

        let found = discover_conversations(tmp.path()).unwrap();
        let ids: Vec<&str> = found.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, vec!["aaa", "bbb"]);
        assert!(found[0].features_json.is_some());
        assert!(found[0].audio_wav.is_none());
        assert!(found[1].features_json.is_none());

        assert!(matches!(
            discover_conversations(&tmp.path().join("empty")),
            Err(CorpusError::EmptyCorpusDir { .. })
        ));
    }

    #[test]
    fn speaker_tags_round_trip() {
        assert_eq!(Speaker::from_tag("C"), Some(Speaker::Client));
        assert_eq!(Speaker::from_tag("T"), Some(Speaker::Therapist));
        assert_eq!(Speaker::from_tag("c"), None);
        assert_eq!(Speaker::Client.other(), Speaker::Therapist);
        let json = serde_json::to_string(&Speaker::Therapist).unwrap();
        assert_eq!(json, "\"T\"");
    }

    #[test]
    fn rating_kind_ranges() {
        assert_eq!(RatingKind::Tes.range(), (9, 63));
        assert_eq!(RatingKind::Blri.range(), (-48, 48));
        assert_eq!(RatingKind::Ses.range(), (5, 25));
        assert_eq!(serde_json::to_string(&RatingKind::Blri).unwrap(), "\"blri\"");
    }
}
