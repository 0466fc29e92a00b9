//! Session ingest: merge audio-derived utterances with chat messages, assign
//! speakers from diarization timestamps, and expose ordered, validated
//! sessions.
//!
//! On-disk format is line-delimited JSON: a header record carrying session
//! metadata followed by one utterance record per line (see [`load_session`]).

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error ({field}): {message}")]
    Validation { field: String, message: String },
    #[error("session mismatch: expected {expected}, found {found}")]
    SessionMismatch { expected: String, found: String },
    #[error("session {0} has zero or negative duration")]
    ZeroDuration(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerRole {
    Instructor,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Audio,
    Chat,
}

/// One diarized, timestamped turn (spoken or typed) within a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub session_id: String,
    pub speaker_role: SpeakerRole,
    pub speaker_id: String,
    /// Seconds from session start.
    pub start_time: f64,
    pub end_time: f64,
    pub text: String,
    pub source: Source,
}

/// A full small-group instruction session with ordered utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub instructor_id: String,
    pub utterances: Vec<Utterance>,
    /// Declared duration in hours, if known independently of the transcript.
    pub declared_duration_hours: Option<f64>,
    /// Section-composition fields consumed downstream by the analysis module.
    pub metadata: BTreeMap<String, String>,
}

/// An undiarized transcript piece, prior to speaker assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSegment {
    pub start_time: f64,
    pub end_time: f64,
    pub text: String,
}

/// A diarization interval: who was speaking between `start` and `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerInterval {
    pub speaker_id: String,
    pub role: SpeakerRole,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum SessionLine {
    Header {
        session_id: String,
        instructor_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration_hours: Option<f64>,
        #[serde(default)]
        metadata: BTreeMap<String, String>,
    },
    Utterance(Utterance),
}

/// Collapse internal whitespace to single spaces, strip control characters,
/// and trim. Case and punctuation are preserved.
pub fn normalize_text(text: &str) -> String {
    // keep whitespace controls (tab, newline) so they still collapse to one
    // space below; drop the rest outright
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_control() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Utterance {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.start_time < 0.0 {
            return Err(CorpusError::Validation {
                field: format!("{}.start_time", self.utterance_id),
                message: format!("negative start time {}", self.start_time),
            });
        }
        if self.end_time < self.start_time {
            return Err(CorpusError::Validation {
                field: format!("{}.end_time", self.utterance_id),
                message: format!(
                    "end_time {} precedes start_time {}",
                    self.end_time, self.start_time
                ),
            });
        }
        if normalize_text(&self.text).is_empty() {
            return Err(CorpusError::Validation {
                field: format!("{}.text", self.utterance_id),
                message: "empty after whitespace normalization".into(),
            });
        }
        Ok(())
    }
}

impl Session {
    /// Sort utterances into canonical order and check every invariant.
    pub fn finalize(mut self) -> Result<Self, CorpusError> {
        sort_utterances(&mut self.utterances);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.utterances.is_empty() {
            return Err(CorpusError::Validation {
                field: "utterances".into(),
                message: "no utterances".into(),
            });
        }
        let mut seen = HashSet::new();
        for u in &self.utterances {
            u.validate()?;
            if u.session_id != self.session_id {
                return Err(CorpusError::SessionMismatch {
                    expected: self.session_id.clone(),
                    found: u.session_id.clone(),
                });
            }
            if !seen.insert(u.utterance_id.as_str()) {
                return Err(CorpusError::Validation {
                    field: "utterance_id".into(),
                    message: format!("duplicate id {}", u.utterance_id),
                });
            }
            if u.speaker_role == SpeakerRole::Instructor && u.speaker_id != self.instructor_id {
                return Err(CorpusError::Validation {
                    field: format!("{}.speaker_id", u.utterance_id),
                    message: format!(
                        "instructor utterance by {}, session instructor is {}",
                        u.speaker_id, self.instructor_id
                    ),
                });
            }
        }
        if let Some(d) = self.declared_duration_hours {
            let max_end = self
                .utterances
                .iter()
                .map(|u| u.end_time)
                .fold(0.0_f64, f64::max);
            if d <= 0.0 {
                return Err(CorpusError::ZeroDuration(self.session_id.clone()));
            }
            if d * 3600.0 + 1e-9 < max_end {
                return Err(CorpusError::Validation {
                    field: "duration_hours".into(),
                    message: format!(
                        "declared duration {d}h shorter than last utterance end {max_end}s"
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn instructor_utterances(&self) -> impl Iterator<Item = (usize, &Utterance)> {
        self.utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.speaker_role == SpeakerRole::Instructor)
    }
}

fn source_rank(s: Source) -> u8 {
    match s {
        Source::Audio => 0,
        Source::Chat => 1,
    }
}

/// Stable sort by start time; on an exact timestamp tie, audio precedes chat.
fn sort_utterances(utterances: &mut [Utterance]) {
    utterances.sort_by(|a, b| {
        a.start_time
            .total_cmp(&b.start_time)
            .then_with(|| source_rank(a.source).cmp(&source_rank(b.source)))
    });
}

/// Load one session from a line-delimited JSON file.
///
/// The first record must be the header; every following line is an utterance.
pub fn load_session(path: &Path) -> Result<Session, CorpusError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut header: Option<(String, String, Option<f64>, BTreeMap<String, String>)> = None;
    let mut utterances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SessionLine =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        match record {
            SessionLine::Header {
                session_id,
                instructor_id,
                duration_hours,
                metadata,
            } => {
                if header.is_some() {
                    return Err(CorpusError::Parse {
                        line: idx + 1,
                        message: "duplicate header record".into(),
                    });
                }
                header = Some((session_id, instructor_id, duration_hours, metadata));
            }
            SessionLine::Utterance(mut u) => {
                if header.is_none() {
                    return Err(CorpusError::Parse {
                        line: idx + 1,
                        message: "utterance record before header".into(),
                    });
                }
                u.text = normalize_text(&u.text);
                utterances.push(u);
            }
        }
    }
    let (session_id, instructor_id, declared_duration_hours, metadata) =
        header.ok_or_else(|| CorpusError::Validation {
            field: "header".into(),
            message: "no header record".into(),
        })?;
    if utterances.is_empty() {
        return Err(CorpusError::Validation {
            field: "utterances".into(),
            message: "no utterances".into(),
        });
    }
    Session {
        session_id,
        instructor_id,
        utterances,
        declared_duration_hours,
        metadata,
    }
    .finalize()
}

/// Write a session in the same line-delimited format `load_session` reads.
pub fn save_session(session: &Session, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = SessionLine::Header {
        session_id: session.session_id.clone(),
        instructor_id: session.instructor_id.clone(),
        duration_hours: session.declared_duration_hours,
        metadata: session.metadata.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(io_err)?;
    w.write_all(b"\n")?;
    for u in &session.utterances {
        serde_json::to_writer(&mut w, &SessionLine::Utterance(u.clone())).map_err(io_err)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: serde_json::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn overlap(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> f64 {
    (a_end.min(b_end) - a_start.max(b_start)).max(0.0)
}

/// Assign each raw segment the speaker whose diarization interval overlaps it
/// the most.
///
/// Ties go to the interval with the earlier start. Segments that overlap no
/// interval at all fall back to speaker "unknown" with the student role, so a
/// dropped diarization span can never be mistaken for instructor talk.
pub fn assign_speakers(
    session_id: &str,
    segments: &[RawSegment],
    intervals: &[SpeakerInterval],
) -> Vec<Utterance> {
    segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let mut best: Option<(&SpeakerInterval, f64)> = None;
            for iv in intervals {
                let ov = overlap(seg.start_time, seg.end_time, iv.start, iv.end);
                if ov <= 0.0 {
                    continue;
                }
                best = match best {
                    None => Some((iv, ov)),
                    Some((cur, cur_ov)) => {
                        if ov > cur_ov || (ov == cur_ov && iv.start < cur.start) {
                            Some((iv, ov))
                        } else {
                            Some((cur, cur_ov))
                        }
                    }
                };
            }
            let (speaker_id, role) = match best {
                Some((iv, _)) => (iv.speaker_id.clone(), iv.role),
                None => ("unknown".to_string(), SpeakerRole::Student),
            };
            Utterance {
                utterance_id: format!("{session_id}-a{i:04}"),
                session_id: session_id.to_string(),
                speaker_role: role,
                speaker_id,
                start_time: seg.start_time,
                end_time: seg.end_time,
                text: normalize_text(&seg.text),
                source: Source::Audio,
            }
        })
        .collect()
}

/// Merge audio utterances with chat messages into one time-ordered list.
///
/// The merge is stable: equal-time utterances keep their relative order
/// within a source, and audio precedes chat on an exact timestamp tie.
pub fn merge_chat(
    audio: Vec<Utterance>,
    chat: Vec<Utterance>,
) -> Result<Vec<Utterance>, CorpusError> {
    let session_id = audio
        .first()
        .or_else(|| chat.first())
        .map(|u| u.session_id.clone());
    if let Some(sid) = &session_id {
        for u in audio.iter().chain(chat.iter()) {
            if &u.session_id != sid {
                return Err(CorpusError::SessionMismatch {
                    expected: sid.clone(),
                    found: u.session_id.clone(),
                });
            }
        }
    }
    let mut merged = audio;
    merged.extend(chat);
    sort_utterances(&mut merged);
    Ok(merged)
}

/// Session duration in hours: declared value when present, otherwise the
/// utterance time span.
pub fn session_duration_hours(session: &Session) -> Result<f64, CorpusError> {
    if let Some(d) = session.declared_duration_hours {
        if d <= 0.0 {
            return Err(CorpusError::ZeroDuration(session.session_id.clone()));
        }
        return Ok(d);
    }
    let min_start = session
        .utterances
        .iter()
        .map(|u| u.start_time)
        .fold(f64::INFINITY, f64::min);
    let max_end = session
        .utterances
        .iter()
        .map(|u| u.end_time)
        .fold(f64::NEG_INFINITY, f64::max);
    let hours = (max_end - min_start) / 3600.0;
    if !(hours > 0.0) {
        return Err(CorpusError::ZeroDuration(session.session_id.clone()));
    }
    Ok(hours)
}
