//! Corpus-wide prediction with per-session checkpointing, plus per-session
//! hourly talk-move rates (the regression predictor).
//!
//! Checkpoint layout: `manifest.json` records each session's status and an
//! input content hash; one line-delimited records file per completed session
//! sits alongside it. Re-invocation skips completed sessions and the final
//! output is byte-identical to an uninterrupted run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::TalkMove;
use crate::classifier::{ClassifierError, ModelHandle};
use crate::corpus::{session_duration_hours, CorpusError, Session};
use crate::example_builder::{
    assemble_example, build_context, segment_utterance_examples, BuildError,
};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("corrupt checkpoint for session {session}: {message}")]
    CorruptCheckpoint { session: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

/// One binary decision for one (segment, move) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub session_id: String,
    pub utterance_id: String,
    pub segment_index: usize,
    #[serde(rename = "move")]
    pub talk_move: TalkMove,
    pub probability: f64,
    pub decision: bool,
}

/// Per-session counts and hourly rates per talk move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFeatures {
    pub session_id: String,
    pub duration_hours: f64,
    pub counts: BTreeMap<TalkMove, usize>,
    pub rate_per_hour: BTreeMap<TalkMove, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum SessionStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    status: SessionStatus,
    input_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    records_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    sessions: BTreeMap<String, ManifestEntry>,
}

const MANIFEST_FILE: &str = "manifest.json";

/// Content hash over a session's identity and utterances; used to detect a
/// checkpoint written against different inputs.
pub fn session_content_hash(session: &Session) -> String {
    let mut hasher = Sha256::new();
    hasher.update(session.session_id.as_bytes());
    hasher.update([0]);
    hasher.update(session.instructor_id.as_bytes());
    hasher.update([0]);
    if let Some(d) = session.declared_duration_hours {
        hasher.update(d.to_le_bytes());
    }
    for u in &session.utterances {
        let line = serde_json::to_vec(u).expect("utterance serializes");
        hasher.update(&line);
        hasher.update([b'\n']);
    }
    format!("{:x}", hasher.finalize())
}

fn load_manifest(dir: &Path) -> Result<Manifest, InferenceError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Manifest {
            version: 1,
            sessions: BTreeMap::new(),
        });
    }
    let raw = fs::read_to_string(&path)?;
    serde_json::from_str(&raw).map_err(|e| InferenceError::CorruptCheckpoint {
        session: "<manifest>".into(),
        message: e.to_string(),
    })
}

/// Atomic replace-on-write so a crash mid-update never leaves a torn manifest.
fn store_manifest(dir: &Path, manifest: &Manifest) -> Result<(), InferenceError> {
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let json =
        serde_json::to_string_pretty(manifest).map_err(|e| InferenceError::Serde(e.to_string()))?;
    fs::write(&tmp, json)?;
    fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
    Ok(())
}

fn records_filename(session_id: &str) -> String {
    format!("{session_id}.predictions.jsonl")
}

/// Predict every (instructor-utterance segment, move) pair for one session.
/// Each move replays its own stored preprocessing config: segmentation limit,
/// context window, and truncation all come from the handle, never from the
/// caller.
pub fn predict_session(
    suite: &BTreeMap<TalkMove, ModelHandle>,
    session: &Session,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<PredictionRecord>, InferenceError> {
    let mut records = Vec::new();
    for (utt_idx, utterance) in session.instructor_utterances() {
        for (talk_move, handle) in suite {
            let prior = build_context(session, utt_idx, &handle.preprocess)?;
            let segments =
                segment_utterance_examples(session, utt_idx, utterance, &handle.preprocess, tokenizer);
            for bare in segments {
                let example =
                    assemble_example(bare, prior.as_deref(), &handle.preprocess, tokenizer)?;
                let (probability, decision) = handle.predict(&example)?;
                records.push(PredictionRecord {
                    session_id: session.session_id.clone(),
                    utterance_id: utterance.utterance_id.clone(),
                    segment_index: example.segment_index,
                    talk_move: *talk_move,
                    probability,
                    decision,
                });
            }
        }
    }
    Ok(records)
}

/// Run the whole suite over a corpus with per-session checkpointing.
///
/// Completed sessions are skipped on re-invocation (their stored records are
/// reused), so an interrupted-then-resumed run produces output byte-identical
/// to an uninterrupted one. A backend failure marks that session failed and
/// the run continues; a hash mismatch against a completed checkpoint is a
/// hard error.
pub fn predict_corpus(
    suite: &BTreeMap<TalkMove, ModelHandle>,
    corpus: &[Session],
    checkpoint_dir: &Path,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<PredictionRecord>, InferenceError> {
    fs::create_dir_all(checkpoint_dir)?;
    let mut manifest = load_manifest(checkpoint_dir)?;

    for session in corpus {
        let hash = session_content_hash(session);
        if let Some(entry) = manifest.sessions.get(&session.session_id) {
            if entry.input_hash != hash {
                return Err(InferenceError::CorruptCheckpoint {
                    session: session.session_id.clone(),
                    message: format!(
                        "input hash changed since checkpoint ({} != {hash})",
                        entry.input_hash
                    ),
                });
            }
            if entry.status == SessionStatus::Complete {
                continue;
            }
        }
        match predict_session(suite, session, tokenizer) {
            Ok(records) => {
                let filename = records_filename(&session.session_id);
                write_predictions(&records, &checkpoint_dir.join(&filename))?;
                manifest.sessions.insert(
                    session.session_id.clone(),
                    ManifestEntry {
                        status: SessionStatus::Complete,
                        input_hash: hash,
                        records_file: Some(filename),
                        error: None,
                    },
                );
            }
            Err(e) => {
                manifest.sessions.insert(
                    session.session_id.clone(),
                    ManifestEntry {
                        status: SessionStatus::Failed,
                        input_hash: hash,
                        records_file: None,
                        error: Some(e.to_string()),
                    },
                );
            }
        }
        store_manifest(checkpoint_dir, &manifest)?;
    }

    // Assemble final output in corpus order from the per-session files.
    let mut all = Vec::new();
    for session in corpus {
        if let Some(entry) = manifest.sessions.get(&session.session_id) {
            if let Some(file) = &entry.records_file {
                all.extend(read_predictions(&checkpoint_dir.join(file))?);
            }
        }
    }
    Ok(all)
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<(), InferenceError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| InferenceError::Serde(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, InferenceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| InferenceError::Serde(e.to_string()))?);
    }
    Ok(out)
}

/// Collapse one session's records into counts and hourly rates.
///
/// With `segment_level` off (the default), a source utterance counts once per
/// move when any of its segments is positive; segment-level counting counts
/// every positive segment.
pub fn aggregate_session(
    session: &Session,
    records: &[PredictionRecord],
    moves: &[TalkMove],
    segment_level: bool,
) -> Result<SessionFeatures, InferenceError> {
    let duration = session_duration_hours(session)?;
    let mut counts: BTreeMap<TalkMove, usize> = moves.iter().map(|m| (*m, 0)).collect();
    if segment_level {
        for r in records {
            if r.decision && r.session_id == session.session_id {
                if let Some(c) = counts.get_mut(&r.talk_move) {
                    *c += 1;
                }
            }
        }
    } else {
        let mut seen: BTreeMap<TalkMove, std::collections::BTreeSet<&str>> = BTreeMap::new();
        for r in records {
            if r.decision && r.session_id == session.session_id {
                seen.entry(r.talk_move)
                    .or_default()
                    .insert(r.utterance_id.as_str());
            }
        }
        for (m, utts) in seen {
            if let Some(c) = counts.get_mut(&m) {
                *c = utts.len();
            }
        }
    }
    let rate_per_hour = counts
        .iter()
        .map(|(m, c)| (*m, *c as f64 / duration))
        .collect();
    Ok(SessionFeatures {
        session_id: session.session_id.clone(),
        duration_hours: duration,
        counts,
        rate_per_hour,
    })
}

/// Features CSV schema: session_id, duration_hours, one count column and one
/// rate column per move, in the given move order.
pub fn feature_columns(moves: &[TalkMove]) -> Vec<String> {
    let mut cols = vec!["session_id".to_string(), "duration_hours".to_string()];
    cols.extend(moves.iter().map(|m| format!("count_{m}")));
    cols.extend(moves.iter().map(|m| format!("rate_{m}")));
    cols
}

pub fn export_features(
    features: &[SessionFeatures],
    moves: &[TalkMove],
    path: &Path,
) -> Result<(), InferenceError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(feature_columns(moves))
        .map_err(csv_err)?;
    for f in features {
        let mut row = vec![f.session_id.clone(), format!("{}", f.duration_hours)];
        for m in moves {
            row.push(format!("{}", f.counts.get(m).copied().unwrap_or(0)));
        }
        for m in moves {
            row.push(format!("{}", f.rate_per_hour.get(m).copied().unwrap_or(0.0)));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn import_features(
    moves: &[TalkMove],
    path: &Path,
) -> Result<Vec<SessionFeatures>, InferenceError> {
    let mut reader = csv::Reader::from_reader(File::open(path)?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let get = |i: usize| row.get(i).unwrap_or_default();
        let duration: f64 = get(1)
            .parse()
            .map_err(|e| InferenceError::Serde(format!("bad duration: {e}")))?;
        let mut counts = BTreeMap::new();
        let mut rates = BTreeMap::new();
        for (k, m) in moves.iter().enumerate() {
            counts.insert(
                *m,
                get(2 + k)
                    .parse()
                    .map_err(|e| InferenceError::Serde(format!("bad count: {e}")))?,
            );
            rates.insert(
                *m,
                get(2 + moves.len() + k)
                    .parse()
                    .map_err(|e| InferenceError::Serde(format!("bad rate: {e}")))?,
            );
        }
        out.push(SessionFeatures {
            session_id: get(0).to_string(),
            duration_hours: duration,
            counts,
            rate_per_hour: rates,
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> InferenceError {
    InferenceError::Serde(e.to_string())
}
