//! Pipeline library for turning diarized small-group instruction transcripts
//! into talk-move classifications and student-outcome regressions.
//!
//! The pipeline stages, in order:
//!
//! 1. [`corpus`] — ingest sessions: merge audio transcripts with chat logs,
//!    assign speakers from diarization timestamps.
//! 2. [`example_builder`] — segment long utterances, attach prior context,
//!    balance labels, sample and split train/test.
//! 3. [`annotation`] — double-annotator label sets, union gold labels,
//!    agreement statistics, label distributions, WER.
//! 4. [`classifier`] — one independent binary classifier per talk move behind
//!    a pluggable backend, with a per-move configuration registry.
//! 5. [`inference`] — corpus-wide prediction with checkpoint/resume and
//!    per-session hourly-rate features.
//! 6. [`analysis`] — OLS of outcomes on talk-move rates with
//!    instructor-clustered standard errors.
//!
//! See the `examples/` directory for one runnable example per stage and the
//! `talkmoves` binary for the end-to-end CLI.

pub mod analysis;
pub mod annotation;
pub mod classifier;
pub mod corpus;
pub mod example_builder;
pub mod inference;
pub mod pipeline;
pub mod synthetic;
pub mod tokenizer;

pub use annotation::{LabelSet, TalkMove};
pub use corpus::{Session, Source, SpeakerRole, Utterance};
pub use example_builder::{AnnotationExample, PreprocessConfig, TruncationSide};
pub use tokenizer::{Tokenizer, WhitespaceTokenizer};
