//! Train one binary classifier per talk move on a synthetic corpus with the
//! deterministic linear baseline, save the models, and score them on a
//! held-out split.
//!
//!     cargo run --example train_and_evaluate_models

use talkmoves::annotation::TalkMove;
use talkmoves::classifier::{best_config_for, evaluate, train_move_model, ModelHandle};
use talkmoves::example_builder::{sample_examples, train_test_split};
use talkmoves::pipeline::{prepare_for_move, sessions_by_id};
use talkmoves::synthetic::{generate_corpus, rule_labels};
use talkmoves::tokenizer::WhitespaceTokenizer;

fn main() {
    let seed = 5;
    let tokenizer = WhitespaceTokenizer;
    let corpus = generate_corpus(20, 3);
    let sessions = sessions_by_id(&corpus);

    // Build gold-labeled examples from every instructor utterance.
    let n_available = corpus
        .iter()
        .flat_map(|s| s.utterances.iter())
        .filter(|u| u.speaker_role == talkmoves::corpus::SpeakerRole::Instructor)
        .count();
    let default_preprocess = talkmoves::example_builder::PreprocessConfig::default();
    let mut examples =
        sample_examples(&corpus, n_available, seed, &default_preprocess, &tokenizer)
            .expect("sample");
    for e in &mut examples {
        e.gold = Some(rule_labels(&e.target_text));
    }
    let (train, test) = train_test_split(&examples, 0.8, seed);
    println!("{} training / {} test examples\n", train.len(), test.len());

    let models_dir = tempfile::tempdir().expect("temp dir");
    for m in TalkMove::CORE {
        // Each move carries its own registry config: context size,
        // truncation side, and balancing factor.
        let (preprocess, mut training) = best_config_for(m).expect("registry config");
        training.seed = seed;
        let prepared =
            prepare_for_move(&train, &sessions, &preprocess, &tokenizer).expect("prepare train");
        let handle = train_move_model(m, &prepared, &preprocess, &training).expect("train");

        // Round-trip through disk the way the CLI does.
        let dir = models_dir.path().join(m.name());
        handle.save(&dir).expect("save model");
        let handle = ModelHandle::load(&dir).expect("reload model");

        let prepared_test =
            prepare_for_move(&test, &sessions, &handle.preprocess, &tokenizer).expect("prepare test");
        let report = evaluate(&handle, &prepared_test, handle.training.decision_threshold)
            .expect("evaluate");
        println!(
            "{:<16} P={:.3} R={:.3} F1={:.3} (tp={} fp={} fn={} tn={})",
            m.name(),
            report.precision,
            report.recall,
            report.f1,
            report.true_positive,
            report.false_positive,
            report.false_negative,
            report.true_negative
        );
    }
}
