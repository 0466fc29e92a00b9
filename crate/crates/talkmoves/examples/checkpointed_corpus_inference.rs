//! Corpus-wide inference with per-session checkpointing: an interrupted run
//! resumes from its checkpoint directory and produces byte-identical
//! predictions, then the records aggregate into per-session hourly rates.
//!
//!     cargo run --example checkpointed_corpus_inference

use std::collections::BTreeMap;

use talkmoves::annotation::TalkMove;
use talkmoves::classifier::{best_config_for, train_move_model, ModelHandle};
use talkmoves::example_builder::sample_examples;
use talkmoves::inference::{aggregate_session, predict_corpus, write_predictions};
use talkmoves::pipeline::{prepare_for_move, sessions_by_id};
use talkmoves::synthetic::{generate_corpus, rule_labels};
use talkmoves::tokenizer::WhitespaceTokenizer;

fn train_suite(
    corpus: &[talkmoves::corpus::Session],
    seed: u64,
) -> BTreeMap<TalkMove, ModelHandle> {
    let tokenizer = WhitespaceTokenizer;
    let sessions = sessions_by_id(corpus);
    let preprocess = talkmoves::example_builder::PreprocessConfig::default();
    let mut examples = sample_examples(corpus, 200, seed, &preprocess, &tokenizer).expect("sample");
    for e in &mut examples {
        e.gold = Some(rule_labels(&e.target_text));
    }
    TalkMove::CORE
        .into_iter()
        .map(|m| {
            let (preprocess, mut training) = best_config_for(m).expect("registry config");
            training.seed = seed;
            let prepared =
                prepare_for_move(&examples, &sessions, &preprocess, &tokenizer).expect("prepare");
            let handle = train_move_model(m, &prepared, &preprocess, &training).expect("train");
            (m, handle)
        })
        .collect()
}

fn main() {
    let tokenizer = WhitespaceTokenizer;
    let corpus = generate_corpus(12, 9);
    let suite = train_suite(&corpus, 9);
    let work = tempfile::tempdir().expect("temp dir");

    // Simulate an interrupted run: predict only the first few sessions into
    // the checkpoint directory, then "restart" over the whole corpus. The
    // manifest skips every completed session by content hash.
    let checkpoints = work.path().join("checkpoints");
    let partial =
        predict_corpus(&suite, &corpus[..4], &checkpoints, &tokenizer).expect("partial run");
    println!("partial run wrote {} records for 4 sessions", partial.len());

    let resumed = predict_corpus(&suite, &corpus, &checkpoints, &tokenizer).expect("resumed run");

    // A fresh, uninterrupted run from an empty checkpoint dir must match
    // exactly.
    let fresh_dir = work.path().join("checkpoints-fresh");
    let fresh = predict_corpus(&suite, &corpus, &fresh_dir, &tokenizer).expect("fresh run");
    assert_eq!(resumed, fresh, "resumed and fresh runs diverged");
    println!(
        "resumed run matches fresh run: {} records over {} sessions",
        resumed.len(),
        corpus.len()
    );
    write_predictions(&resumed, &work.path().join("predictions.jsonl")).expect("write");

    let moves = TalkMove::CORE.to_vec();
    println!("\nper-session connecting rates:");
    for session in corpus.iter().take(5) {
        let records: Vec<_> = resumed
            .iter()
            .filter(|r| r.session_id == session.session_id)
            .cloned()
            .collect();
        let features = aggregate_session(session, &records, &moves, false).expect("aggregate");
        println!(
            "  {:<12} {:.1} per hour over {:.2} h",
            features.session_id,
            features.rate_per_hour[&TalkMove::Connecting],
            features.duration_hours
        );
    }
}
