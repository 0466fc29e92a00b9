//! End-to-end orchestration: pipeline configuration, corpus directory
//! conventions, gold-label attachment, per-move example preparation, and run
//! manifests.
//!
//! Corpus directory convention: one `<session_id>.session.jsonl` per session,
//! optionally accompanied by `<session_id>.chat.jsonl` holding the chat log
//! in the same record shape.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::{union_gold, AnnotationError, AnnotationRecord, TalkMove};
use crate::classifier::{best_config_for, ClassifierError, ModelHandle, TrainingConfig};
use crate::corpus::{load_session, merge_chat, save_session, CorpusError, Session};
use crate::example_builder::{
    assemble_example, build_context, AnnotationExample, BuildError, PreprocessConfig,
};
use crate::inference::InferenceError;
use crate::tokenizer::{Tokenizer, WhitespaceTokenizer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-move overrides of the registry defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MoveOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
}

/// Whole-pipeline configuration, loaded from a TOML file. Precedence is
/// file < environment < command-line flags; the seed is mandatory so no run
/// is implicitly nondeterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub exclude_poor_transcription: bool,
    #[serde(default)]
    pub segment_level_counting: bool,
    #[serde(default)]
    pub enable_model_utterance: bool,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub overrides: BTreeMap<String, MoveOverride>,
}

fn default_tokenizer() -> String {
    "whitespace".to_string()
}
fn default_sample_size() -> usize {
    200
}
fn default_split_ratio() -> f64 {
    0.8
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let raw = fs::read_to_string(path)?;
        let mut config: PipelineConfig =
            toml::from_str(&raw).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.apply_env();
        Ok(config)
    }

    /// Environment layer: overrides from `TALKMOVES_SEED` and
    /// `TALKMOVES_JOBS` when set.
    pub fn apply_env(&mut self) {
        if let Ok(seed) = std::env::var("TALKMOVES_SEED") {
            if let Ok(seed) = seed.parse() {
                self.seed = seed;
            }
        }
        if let Ok(jobs) = std::env::var("TALKMOVES_JOBS") {
            if let Ok(jobs) = jobs.parse() {
                self.jobs = Some(jobs);
            }
        }
    }

    pub fn make_tokenizer(&self) -> Result<Box<dyn Tokenizer>, PipelineError> {
        match self.tokenizer.as_str() {
            "whitespace" => Ok(Box::new(WhitespaceTokenizer)),
            other => Err(PipelineError::Config(format!(
                "unknown tokenizer '{other}' (available: whitespace)"
            ))),
        }
    }

    /// The labels modeled by this run: the five core moves, plus
    /// model_utterance when enabled.
    pub fn enabled_moves(&self) -> Vec<TalkMove> {
        let mut moves = TalkMove::CORE.to_vec();
        if self.enable_model_utterance {
            moves.push(TalkMove::ModelUtterance);
        }
        moves
    }

    /// Registry defaults with this config's overrides and seed applied.
    pub fn config_for_move(
        &self,
        talk_move: TalkMove,
    ) -> Result<(PreprocessConfig, TrainingConfig), PipelineError> {
        let (mut preprocess, mut training) = best_config_for(talk_move)?;
        training.seed = self.seed;
        if let Some(over) = self.overrides.get(talk_move.name()) {
            if let Some(p) = over.preprocess {
                preprocess = p;
            }
            if let Some(t) = over.training {
                training = t;
            }
        }
        Ok((preprocess, training))
    }
}

/// Load every session in a corpus directory, ordered by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<Session>, PipelineError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".session.jsonl"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok(load_session(p)?)).collect()
}

/// Ingest: validate and normalize raw session files, merging each session's
/// chat log when one is present, and write clean sessions into `out_dir`.
pub fn ingest(raw_dir: &Path, out_dir: &Path) -> Result<usize, PipelineError> {
    fs::create_dir_all(out_dir)?;
    let mut count = 0;
    let mut paths: Vec<PathBuf> = fs::read_dir(raw_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".session.jsonl"))
        })
        .collect();
    paths.sort();
    for path in paths {
        let session = load_session(&path)?;
        let name = path.file_name().unwrap().to_str().unwrap();
        let chat_path = path.with_file_name(name.replace(".session.jsonl", ".chat.jsonl"));
        let session = if chat_path.exists() {
            let chat = load_session(&chat_path)?;
            let merged = merge_chat(session.utterances.clone(), chat.utterances)?;
            Session {
                utterances: merged,
                ..session
            }
            .finalize()?
        } else {
            session
        };
        save_session(&session, &out_dir.join(format!("{}.session.jsonl", session.session_id)))?;
        count += 1;
    }
    Ok(count)
}

pub fn sessions_by_id(corpus: &[Session]) -> BTreeMap<&str, &Session> {
    corpus.iter().map(|s| (s.session_id.as_str(), s)).collect()
}

/// Attach union gold labels from annotation records to examples. Examples
/// without a complete annotator pair keep `gold = None`. With
/// `exclude_poor_transcription`, examples whose gold marks poor transcription
/// are dropped; the second return value counts them.
pub fn attach_gold(
    examples: &[AnnotationExample],
    records: &[AnnotationRecord],
    exclude_poor_transcription: bool,
) -> (Vec<AnnotationExample>, usize) {
    let mut by_example: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_example.entry(&r.example_id).or_default().push(r);
    }
    let mut out = Vec::with_capacity(examples.len());
    let mut excluded = 0;
    for e in examples {
        let mut e = e.clone();
        if let Some(recs) = by_example.get(e.example_id.as_str()) {
            for r in recs.iter() {
                e.labels_by_annotator.insert(r.annotator_id.clone(), r.labels);
            }
            if recs.len() == 2 {
                e.gold = Some(union_gold(&recs[0].labels, &recs[1].labels));
            }
        }
        if exclude_poor_transcription && e.gold.is_some_and(|g| g.poor_transcription) {
            excluded += 1;
            continue;
        }
        out.push(e);
    }
    (out, excluded)
}

/// Rebuild each example under one move's preprocessing config: look the
/// target utterance up in its session, build the prior context, and truncate
/// it to the remaining token budget. All segments of a split utterance share
/// the same prior text.
pub fn prepare_for_move(
    examples: &[AnnotationExample],
    sessions: &BTreeMap<&str, &Session>,
    preprocess: &PreprocessConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<AnnotationExample>, PipelineError> {
    let mut out = Vec::with_capacity(examples.len());
    for example in examples {
        let session = sessions.get(example.session_id.as_str()).ok_or_else(|| {
            PipelineError::Config(format!(
                "example {} references unknown session {}",
                example.example_id, example.session_id
            ))
        })?;
        let index = session
            .utterances
            .iter()
            .position(|u| u.utterance_id == example.source_utterance_id)
            .ok_or_else(|| {
                PipelineError::Config(format!(
                    "example {} references unknown utterance {}",
                    example.example_id, example.source_utterance_id
                ))
            })?;
        let prior = build_context(session, index, preprocess)?;
        out.push(assemble_example(
            example.clone(),
            prior.as_deref(),
            preprocess,
            tokenizer,
        )?);
    }
    Ok(out)
}

/// Load all saved move models from a models directory (one subdirectory per
/// move).
pub fn load_model_suite(
    models_dir: &Path,
    moves: &[TalkMove],
) -> Result<BTreeMap<TalkMove, ModelHandle>, PipelineError> {
    let mut suite = BTreeMap::new();
    for m in moves {
        let dir = models_dir.join(m.name());
        if !dir.exists() {
            return Err(PipelineError::Config(format!(
                "no trained model for {m} at {}",
                dir.display()
            )));
        }
        suite.insert(*m, ModelHandle::load(&dir)?);
    }
    Ok(suite)
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub crate_version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub input_hashes: BTreeMap<String, String>,
}

/// Snapshot the run into `output_dir/<subcommand>.manifest.json`: config,
/// seed, versions, and a content hash per input file, enough to replay the
/// run exactly.
pub fn write_run_manifest(
    output_dir: &Path,
    subcommand: &str,
    config: &PipelineConfig,
    inputs: &[&Path],
) -> Result<(), PipelineError> {
    fs::create_dir_all(output_dir)?;
    let mut input_hashes = BTreeMap::new();
    for path in inputs {
        if path.is_file() {
            input_hashes.insert(path.display().to_string(), sha256_file(path)?);
        } else if path.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(path)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                input_hashes.insert(f.display().to_string(), sha256_file(&f)?);
            }
        }
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: subcommand.to_string(),
        seed: config.seed,
        config: serde_json::to_value(config)
            .map_err(|e| PipelineError::Config(e.to_string()))?,
        input_hashes,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    fs::write(output_dir.join(format!("{subcommand}.manifest.json")), json)?;
    Ok(())
}
