//! The whole pipeline in one program, mirroring the CLI subcommand order:
//! ingest -> build dataset -> attach gold -> train -> evaluate -> infer ->
//! features -> regress. Everything runs in a temp directory on a synthetic
//! corpus; rerunning with the same seed reproduces every artifact.
//!
//!     cargo run --example full_pipeline

use std::collections::BTreeMap;
use std::fs;

use talkmoves::analysis::{default_specs, format_table_text, run_table};
use talkmoves::annotation::TalkMove;
use talkmoves::classifier::{best_config_for, evaluate, train_move_model};
use talkmoves::example_builder::{sample_examples, train_test_split, write_examples};
use talkmoves::inference::{aggregate_session, predict_corpus};
use talkmoves::pipeline::{
    attach_gold, ingest, load_corpus, prepare_for_move, sessions_by_id,
};
use talkmoves::synthetic::{annotate_examples, generate_corpus, generate_outcomes};
use talkmoves::tokenizer::WhitespaceTokenizer;

fn main() {
    let seed = 11;
    let tokenizer = WhitespaceTokenizer;
    let work = tempfile::tempdir().expect("temp dir");
    let raw_dir = work.path().join("raw");
    let corpus_dir = work.path().join("corpus");

    // Ingest: normalize raw sessions into the corpus directory.
    fs::create_dir_all(&raw_dir).expect("raw dir");
    for s in &generate_corpus(20, 3) {
        talkmoves::corpus::save_session(
            s,
            &raw_dir.join(format!("{}.session.jsonl", s.session_id)),
        )
        .expect("write raw session");
    }
    let n = ingest(&raw_dir, &corpus_dir).expect("ingest");
    let corpus = load_corpus(&corpus_dir).expect("load corpus");
    let sessions = sessions_by_id(&corpus);
    println!("ingested {n} sessions");

    // Build dataset: sample instructor utterances, then double-annotate them
    // with the deterministic synthetic annotators and take union gold.
    let preprocess = talkmoves::example_builder::PreprocessConfig::default();
    let examples = sample_examples(&corpus, 150, seed, &preprocess, &tokenizer).expect("sample");
    let records = annotate_examples(&examples);
    let (gold_examples, _excluded) = attach_gold(&examples, &records, false);
    write_examples(&gold_examples, &work.path().join("examples_gold.jsonl")).expect("write");
    println!("built {} gold-labeled examples", gold_examples.len());

    // Train and evaluate one model per core move on a shared grouped split.
    let (train, test) = train_test_split(&gold_examples, 0.8, seed);
    let mut suite = BTreeMap::new();
    println!("\nheld-out evaluation:");
    for m in TalkMove::CORE {
        let (preprocess, mut training) = best_config_for(m).expect("registry config");
        training.seed = seed;
        let prepared =
            prepare_for_move(&train, &sessions, &preprocess, &tokenizer).expect("prepare");
        let handle = train_move_model(m, &prepared, &preprocess, &training).expect("train");
        let prepared_test =
            prepare_for_move(&test, &sessions, &preprocess, &tokenizer).expect("prepare test");
        let report = evaluate(&handle, &prepared_test, handle.training.decision_threshold)
            .expect("evaluate");
        println!("  {:<16} F1={:.3}", m.name(), report.f1);
        suite.insert(m, handle);
    }

    // Infer over the whole corpus with checkpointing, then aggregate into
    // per-session hourly rates.
    let predictions = predict_corpus(&suite, &corpus, &work.path().join("checkpoints"), &tokenizer)
        .expect("infer");
    let moves = TalkMove::CORE.to_vec();
    let features: Vec<_> = corpus
        .iter()
        .map(|session| {
            let records: Vec<_> = predictions
                .iter()
                .filter(|r| r.session_id == session.session_id)
                .cloned()
                .collect();
            aggregate_session(session, &records, &moves, false).expect("aggregate")
        })
        .collect();
    println!("\n{} prediction records -> {} feature rows", predictions.len(), features.len());

    // Regress synthetic outcomes on the predicted rates with
    // instructor-clustered standard errors.
    let outcomes = generate_outcomes(&corpus, seed);
    let cells = run_table(&features, &outcomes, &default_specs());
    print!("\n{}", format_table_text(&cells));
}
