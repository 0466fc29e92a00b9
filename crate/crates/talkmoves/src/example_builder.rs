//! Turn sessions into annotation/training examples: segment long utterances,
//! attach prior-utterance context, truncate under a token budget, oversample
//! sparse labels, sample, and split train/test.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::LabelSet;
use crate::corpus::{Session, SpeakerRole, Utterance};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("target utterance at index {0} is not an instructor turn")]
    NotInstructor(usize),
    #[error("target text is {actual} tokens, over the {limit}-token total limit")]
    TargetTooLong { actual: usize, limit: usize },
    #[error("no positive examples for the target move; cannot balance")]
    NoPositives,
    #[error("requested {requested} utterances but corpus has {available}")]
    InsufficientData { requested: usize, available: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Which end of over-budget prior context to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationSide {
    /// Keep the first tokens of the prior text.
    KeepStart,
    /// Keep the last tokens, closest to the target utterance.
    KeepEnd,
}

/// Per-move example-construction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Number of prior utterances included as context (0 or 2).
    pub context_size: usize,
    /// Only meaningful when `context_size > 0`.
    pub truncation_side: TruncationSide,
    /// Oversampling divisor; `None` disables balancing.
    pub balancing_factor: Option<u32>,
    /// Combined prior + target token budget.
    pub total_token_limit: usize,
    /// Per-segment target token budget.
    pub segment_token_limit: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            context_size: 0,
            truncation_side: TruncationSide::KeepEnd,
            balancing_factor: None,
            total_token_limit: 512,
            segment_token_limit: 200,
        }
    }
}

/// One target instructor utterance (or segment of one), with optional prior
/// context and annotator labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationExample {
    pub example_id: String,
    pub session_id: String,
    /// Id of the utterance this example was cut from; segments of one
    /// utterance share it.
    pub source_utterance_id: String,
    pub target_text: String,
    pub segment_index: usize,
    pub segment_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_text: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels_by_annotator: BTreeMap<String, LabelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<LabelSet>,
}

/// Split an utterance into segments of at most `limit` tokens.
///
/// Cuts are greedy on token count, but when a sentence-final token (ending in
/// `.`, `!` or `?`) falls within the last 20% of a full window the cut moves
/// there, so segments tend to break between sentences rather than inside a
/// talk move. Concatenating the segments reproduces the original token
/// sequence exactly.
pub fn segment_long_utterance(
    text: &str,
    limit: usize,
    tokenizer: &dyn Tokenizer,
) -> Vec<String> {
    assert!(limit > 0, "segment token limit must be positive");
    let tokens = tokenizer.tokenize(text);
    if tokens.len() <= limit {
        return vec![text.to_string()];
    }
    let mut segments = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let remaining = tokens.len() - start;
        let mut cut = remaining.min(limit);
        if remaining > limit {
            // Prefer a sentence boundary in the last fifth of the window.
            let floor = (limit * 4).div_ceil(5).max(1);
            for offset in (floor..=limit).rev() {
                let tok = &tokens[start + offset - 1];
                if tok.ends_with(['.', '!', '?']) {
                    cut = offset;
                    break;
                }
            }
        }
        segments.push(tokenizer.detokenize(&tokens[start..start + cut]));
        start += cut;
    }
    segments
}

/// Build the prior-context string for the instructor utterance at
/// `target_index`: up to `context_size` immediately preceding utterances of
/// any speaker, each prefixed with its speaker-role tag, joined by newlines.
/// All segments of one split utterance share this same prior text.
pub fn build_context(
    session: &Session,
    target_index: usize,
    config: &PreprocessConfig,
) -> Result<Option<String>, BuildError> {
    let target = &session.utterances[target_index];
    if target.speaker_role != SpeakerRole::Instructor {
        return Err(BuildError::NotInstructor(target_index));
    }
    if config.context_size == 0 || target_index == 0 {
        return Ok(None);
    }
    let from = target_index.saturating_sub(config.context_size);
    let parts: Vec<String> = session.utterances[from..target_index]
        .iter()
        .map(|u| format!("{}: {}", role_tag(u.speaker_role), u.text))
        .collect();
    Ok(Some(parts.join("\n")))
}

fn role_tag(role: SpeakerRole) -> &'static str {
    match role {
        SpeakerRole::Instructor => "INSTRUCTOR",
        SpeakerRole::Student => "STUDENT",
    }
}

/// Truncate prior-context tokens to `budget`, keeping the stated side.
pub fn truncate_prior(tokens: &[String], budget: usize, side: TruncationSide) -> Vec<String> {
    if tokens.len() <= budget {
        return tokens.to_vec();
    }
    match side {
        TruncationSide::KeepStart => tokens[..budget].to_vec(),
        TruncationSide::KeepEnd => tokens[tokens.len() - budget..].to_vec(),
    }
}

/// Attach prior context to an example, truncating the prior so that
/// prior + target fits the total token limit. The target is never cut; its
/// own budget is enforced by segmentation upstream.
pub fn assemble_example(
    mut example: AnnotationExample,
    prior: Option<&str>,
    config: &PreprocessConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<AnnotationExample, BuildError> {
    let target_tokens = tokenizer.count(&example.target_text);
    if target_tokens > config.total_token_limit {
        return Err(BuildError::TargetTooLong {
            actual: target_tokens,
            limit: config.total_token_limit,
        });
    }
    example.prior_text = match (config.context_size, prior) {
        (0, _) | (_, None) => None,
        (_, Some(p)) => {
            let budget = config.total_token_limit - target_tokens;
            let tokens = tokenizer.tokenize(p);
            let kept = truncate_prior(&tokens, budget, config.truncation_side);
            if kept.is_empty() {
                None
            } else {
                Some(tokenizer.detokenize(&kept))
            }
        }
    };
    Ok(example)
}

/// Oversample positives with replacement until
/// `positives = max(original positives, ceil(negatives / factor))`.
/// Negatives and original positives pass through untouched; appended
/// examples are exact copies. Deterministic given the seed.
pub fn balance_labels(
    examples: &[(AnnotationExample, bool)],
    factor: u32,
    seed: u64,
) -> Result<Vec<(AnnotationExample, bool)>, BuildError> {
    assert!(factor > 0, "balancing factor must be positive");
    let positives: Vec<&AnnotationExample> =
        examples.iter().filter(|(_, y)| *y).map(|(e, _)| e).collect();
    if positives.is_empty() {
        return Err(BuildError::NoPositives);
    }
    let negatives = examples.len() - positives.len();
    let target = negatives.div_ceil(factor as usize);
    let mut out: Vec<(AnnotationExample, bool)> = examples.to_vec();
    if positives.len() >= target {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in positives.len()..target {
        let pick = positives[rng.gen_range(0..positives.len())];
        out.push((pick.clone(), true));
    }
    Ok(out)
}

/// Uniformly sample `n` instructor utterances (without replacement) across
/// the corpus, then segment each sampled utterance. A sample of `n`
/// utterances may therefore yield more than `n` examples.
pub fn sample_examples(
    corpus: &[Session],
    n: usize,
    seed: u64,
    config: &PreprocessConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<AnnotationExample>, BuildError> {
    let candidates: Vec<(&Session, usize)> = corpus
        .iter()
        .flat_map(|s| s.instructor_utterances().map(move |(i, _)| (s, i)))
        .collect();
    if candidates.len() < n {
        return Err(BuildError::InsufficientData {
            requested: n,
            available: candidates.len(),
        });
    }
    let mut indices: Vec<usize> = (0..candidates.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(n);
    indices.sort_unstable(); // keep corpus order in the output

    let mut out = Vec::new();
    for idx in indices {
        let (session, utt_idx) = candidates[idx];
        let utterance = &session.utterances[utt_idx];
        out.extend(segment_utterance_examples(session, utt_idx, utterance, config, tokenizer));
    }
    Ok(out)
}

/// Segment one instructor utterance into bare examples (no prior text yet;
/// context is attached per move config at training time).
pub fn segment_utterance_examples(
    session: &Session,
    _utterance_index: usize,
    utterance: &Utterance,
    config: &PreprocessConfig,
    tokenizer: &dyn Tokenizer,
) -> Vec<AnnotationExample> {
    let segments = segment_long_utterance(&utterance.text, config.segment_token_limit, tokenizer);
    let count = segments.len();
    segments
        .into_iter()
        .enumerate()
        .map(|(i, target_text)| AnnotationExample {
            example_id: format!("{}#{}", utterance.utterance_id, i),
            session_id: session.session_id.clone(),
            source_utterance_id: utterance.utterance_id.clone(),
            target_text,
            segment_index: i,
            segment_count: count,
            prior_text: None,
            labels_by_annotator: BTreeMap::new(),
            gold: None,
        })
        .collect()
}

/// Deterministic train/test split that keeps all segments of one source
/// utterance on the same side. The same (examples, ratio, seed) triple always
/// yields the same partition, so every talk move trains on one shared split.
pub fn train_test_split(
    examples: &[AnnotationExample],
    ratio: f64,
    seed: u64,
) -> (Vec<AnnotationExample>, Vec<AnnotationExample>) {
    assert!(ratio > 0.0 && ratio < 1.0, "split ratio must be in (0, 1)");
    let mut groups: BTreeMap<&str, Vec<&AnnotationExample>> = BTreeMap::new();
    for e in examples {
        groups.entry(&e.source_utterance_id).or_default().push(e);
    }
    let mut keys: Vec<&str> = groups.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);

    let target_train = (examples.len() as f64 * ratio).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for key in keys {
        let members = &groups[key];
        if train.len() < target_train {
            train.extend(members.iter().map(|e| (*e).clone()));
        } else {
            test.extend(members.iter().map(|e| (*e).clone()));
        }
    }
    (train, test)
}

/// Write examples as line-delimited JSON.
pub fn write_examples(examples: &[AnnotationExample], path: &Path) -> Result<(), BuildError> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, e)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<AnnotationExample>, BuildError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| BuildError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;
    use crate::tokenizer::WhitespaceTokenizer;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn bare_example(id: &str, source: &str, text: &str) -> AnnotationExample {
        AnnotationExample {
            example_id: id.into(),
            session_id: "s1".into(),
            source_utterance_id: source.into(),
            target_text: text.into(),
            segment_index: 0,
            segment_count: 1,
            prior_text: None,
            labels_by_annotator: BTreeMap::new(),
            gold: None,
        }
    }

    fn session_with(roles: &[(SpeakerRole, &str)]) -> Session {
        let utterances = roles
            .iter()
            .enumerate()
            .map(|(i, (role, text))| Utterance {
                utterance_id: format!("u{i}"),
                session_id: "s1".into(),
                speaker_role: *role,
                speaker_id: if *role == SpeakerRole::Instructor {
                    "i1".into()
                } else {
                    "stu".into()
                },
                start_time: i as f64,
                end_time: i as f64 + 0.5,
                text: text.to_string(),
                source: Source::Audio,
            })
            .collect();
        Session {
            session_id: "s1".into(),
            instructor_id: "i1".into(),
            utterances,
            declared_duration_hours: Some(1.0),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn segmentation_greedy_sizes() {
        let t = WhitespaceTokenizer;
        let segs = segment_long_utterance(&words(450), 200, &t);
        let sizes: Vec<usize> = segs.iter().map(|s| t.count(s)).collect();
        assert_eq!(sizes, vec![200, 200, 50]);
    }

    #[test]
    fn segmentation_at_limit_is_identity() {
        let t = WhitespaceTokenizer;
        let text = words(200);
        let segs = segment_long_utterance(&text, 200, &t);
        assert_eq!(segs, vec![text]);
    }

    #[test]
    fn segmentation_one_over_limit() {
        let t = WhitespaceTokenizer;
        let segs = segment_long_utterance(&words(201), 200, &t);
        let sizes: Vec<usize> = segs.iter().map(|s| t.count(s)).collect();
        assert_eq!(sizes, vec![200, 1]);
    }

    #[test]
    fn segmentation_prefers_sentence_boundary_in_window_tail() {
        let t = WhitespaceTokenizer;
        // 12 tokens, limit 10; token 9 (offset 9) ends a sentence and sits in
        // the last 20% of the window, so the cut moves there.
        let text = "a b c d e f g h done. i j k";
        let segs = segment_long_utterance(text, 10, &t);
        assert_eq!(segs[0], "a b c d e f g h done.");
        assert_eq!(segs[1], "i j k");
    }

    #[test]
    fn segmentation_preserves_tokens() {
        let t = WhitespaceTokenizer;
        let text = words(777);
        let segs = segment_long_utterance(&text, 100, &t);
        let rejoined: Vec<String> = segs.iter().flat_map(|s| t.tokenize(s)).collect();
        assert_eq!(rejoined, t.tokenize(&text));
    }

    #[test]
    fn context_absent_at_session_start() {
        let s = session_with(&[(SpeakerRole::Instructor, "hi class")]);
        let config = PreprocessConfig {
            context_size: 2,
            ..Default::default()
        };
        assert_eq!(build_context(&s, 0, &config).unwrap(), None);
    }

    #[test]
    fn context_takes_two_preceding_turns_with_role_tags() {
        let s = session_with(&[
            (SpeakerRole::Student, "zero"),
            (SpeakerRole::Student, "one"),
            (SpeakerRole::Student, "two"),
            (SpeakerRole::Student, "three"),
            (SpeakerRole::Instructor, "four"),
            (SpeakerRole::Instructor, "five"),
        ]);
        let config = PreprocessConfig {
            context_size: 2,
            ..Default::default()
        };
        let prior = build_context(&s, 5, &config).unwrap().unwrap();
        assert_eq!(prior, "STUDENT: three\nINSTRUCTOR: four");
    }

    #[test]
    fn context_requires_instructor_target() {
        let s = session_with(&[
            (SpeakerRole::Instructor, "hello"),
            (SpeakerRole::Student, "question"),
        ]);
        let config = PreprocessConfig {
            context_size: 2,
            ..Default::default()
        };
        assert!(matches!(
            build_context(&s, 1, &config),
            Err(BuildError::NotInstructor(1))
        ));
    }

    #[test]
    fn truncate_keep_start_and_keep_end_windows() {
        let tokens: Vec<String> = (0..600).map(|i| format!("t{i}")).collect();
        let start = truncate_prior(&tokens, 412, TruncationSide::KeepStart);
        assert_eq!(start, tokens[..412]);
        let end = truncate_prior(&tokens, 412, TruncationSide::KeepEnd);
        assert_eq!(end, tokens[188..]);
        let short = truncate_prior(&tokens[..100], 412, TruncationSide::KeepStart);
        assert_eq!(short, tokens[..100]);
    }

    #[test]
    fn assemble_truncates_prior_to_remaining_budget() {
        let t = WhitespaceTokenizer;
        let config = PreprocessConfig {
            context_size: 2,
            truncation_side: TruncationSide::KeepEnd,
            ..Default::default()
        };
        let example = bare_example("e0", "u0", &words(100));
        let prior = words(600);
        let out = assemble_example(example, Some(&prior), &config, &t).unwrap();
        assert_eq!(t.count(out.prior_text.as_deref().unwrap()), 412);
    }

    #[test]
    fn assemble_keeps_short_prior_whole() {
        let t = WhitespaceTokenizer;
        let config = PreprocessConfig {
            context_size: 2,
            ..Default::default()
        };
        let example = bare_example("e0", "u0", &words(100));
        let prior = words(50);
        let out = assemble_example(example, Some(&prior), &config, &t).unwrap();
        assert_eq!(out.prior_text.as_deref(), Some(prior.as_str()));
    }

    #[test]
    fn assemble_drops_prior_when_context_disabled() {
        let t = WhitespaceTokenizer;
        let config = PreprocessConfig::default(); // context_size 0
        let example = bare_example("e0", "u0", &words(100));
        let out = assemble_example(example, Some("anything at all"), &config, &t).unwrap();
        assert_eq!(out.prior_text, None);
    }

    #[test]
    fn assemble_rejects_oversized_target() {
        let t = WhitespaceTokenizer;
        let config = PreprocessConfig::default();
        let example = bare_example("e0", "u0", &words(600));
        assert!(matches!(
            assemble_example(example, None, &config, &t),
            Err(BuildError::TargetTooLong { actual: 600, .. })
        ));
    }

    fn labeled(n_neg: usize, n_pos: usize) -> Vec<(AnnotationExample, bool)> {
        let mut out = Vec::new();
        for i in 0..n_neg {
            out.push((bare_example(&format!("n{i}"), &format!("n{i}"), "neg"), false));
        }
        for i in 0..n_pos {
            out.push((bare_example(&format!("p{i}"), &format!("p{i}"), "pos"), true));
        }
        out
    }

    #[test]
    fn balance_reaches_ceil_target() {
        let out = balance_labels(&labeled(600, 40), 6, 7).unwrap();
        let pos = out.iter().filter(|(_, y)| *y).count();
        assert_eq!(pos, 100);
        assert_eq!(out.iter().filter(|(_, y)| !*y).count(), 600);
    }

    #[test]
    fn balance_noop_when_already_balanced() {
        let input = labeled(600, 600);
        let out = balance_labels(&input, 1, 7).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn balance_factor_one_equalizes_counts() {
        let out = balance_labels(&labeled(500, 30), 1, 7).unwrap();
        let pos = out.iter().filter(|(_, y)| *y).count();
        let neg = out.iter().filter(|(_, y)| !*y).count();
        assert_eq!((neg, pos), (500, 500));
        // every appended example duplicates an original positive
        for (e, y) in &out[530..] {
            assert!(*y);
            assert!(e.example_id.starts_with('p'));
        }
    }

    #[test]
    fn balance_requires_positives() {
        assert!(matches!(
            balance_labels(&labeled(10, 0), 2, 7),
            Err(BuildError::NoPositives)
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_exhaustive() {
        let texts: Vec<String> = (0..10).map(|i| format!("utterance number {i}")).collect();
        let turns: Vec<(SpeakerRole, &str)> = texts
            .iter()
            .map(|t| (SpeakerRole::Instructor, t.as_str()))
            .collect();
        let s = session_with(&turns);
        let corpus = vec![s];
        let config = PreprocessConfig::default();
        let t = WhitespaceTokenizer;
        let all = sample_examples(&corpus, 10, 1, &config, &t).unwrap();
        assert_eq!(all.len(), 10);
        let a = sample_examples(&corpus, 5, 42, &config, &t).unwrap();
        let b = sample_examples(&corpus, 5, 42, &config, &t).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample_examples(&corpus, 11, 1, &config, &t),
            Err(BuildError::InsufficientData { .. })
        ));
    }

    #[test]
    fn sampling_segments_long_utterances() {
        let long = words(450);
        let mut turns: Vec<(SpeakerRole, String)> = (0..4)
            .map(|i| (SpeakerRole::Instructor, format!("short utterance {i}")))
            .collect();
        turns.push((SpeakerRole::Instructor, long));
        let refs: Vec<(SpeakerRole, &str)> =
            turns.iter().map(|(r, t)| (*r, t.as_str())).collect();
        let corpus = vec![session_with(&refs)];
        let config = PreprocessConfig::default();
        let out = sample_examples(&corpus, 5, 1, &config, &WhitespaceTokenizer).unwrap();
        assert_eq!(out.len(), 7); // 4 short + 3 segments of the long one
    }

    #[test]
    fn split_keeps_segments_together() {
        let mut examples = Vec::new();
        for i in 0..50 {
            for seg in 0..2 {
                let mut e = bare_example(&format!("u{i}#{seg}"), &format!("u{i}"), "text here");
                e.segment_index = seg;
                e.segment_count = 2;
                examples.push(e);
            }
        }
        let (train, test) = train_test_split(&examples, 0.8, 13);
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(train.len(), 80);
        let train_sources: std::collections::HashSet<_> =
            train.iter().map(|e| e.source_utterance_id.clone()).collect();
        for e in &test {
            assert!(!train_sources.contains(&e.source_utterance_id));
        }
        let (train2, test2) = train_test_split(&examples, 0.8, 13);
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }
}
