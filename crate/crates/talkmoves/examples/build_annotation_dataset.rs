//! Dataset construction: sample instructor utterances, segment long turns on
//! sentence boundaries, attach prior context under a token budget, and
//! oversample scarce positives.
//!
//!     cargo run --example build_annotation_dataset

use talkmoves::annotation::TalkMove;
use talkmoves::example_builder::{
    balance_labels, sample_examples, segment_long_utterance, train_test_split,
};
use talkmoves::pipeline::{prepare_for_move, sessions_by_id};
use talkmoves::synthetic::{generate_corpus, rule_labels};
use talkmoves::tokenizer::WhitespaceTokenizer;

fn main() {
    let tokenizer = WhitespaceTokenizer;
    let corpus = generate_corpus(10, 42);

    // Long utterances are cut into <=200-token segments, preferring sentence
    // boundaries near the end of each window.
    let long_turn = (0..90)
        .map(|i| format!("point number {i} deserves a full sentence of its own."))
        .collect::<Vec<_>>()
        .join(" ");
    let segments = segment_long_utterance(&long_turn, 200, &tokenizer);
    println!(
        "a {}-token turn became {} segments of sizes {:?}",
        long_turn.split_whitespace().count(),
        segments.len(),
        segments
            .iter()
            .map(|s| s.split_whitespace().count())
            .collect::<Vec<_>>()
    );

    // Sample 150 instructor utterances corpus-wide, then rebuild each example
    // under the probing move's config: two prior utterances, truncated from
    // the start to fit the shared 512-token budget.
    let preprocess = talkmoves::classifier::best_config_for(TalkMove::Probing)
        .expect("registry config")
        .0;
    let examples = sample_examples(&corpus, 150, 7, &preprocess, &tokenizer).expect("sample");
    let sessions = sessions_by_id(&corpus);
    let prepared =
        prepare_for_move(&examples, &sessions, &preprocess, &tokenizer).expect("attach context");
    let with_context = prepared.iter().filter(|e| e.prior_text.is_some()).count();
    println!(
        "sampled {} examples; {} carry prior context under the {}-token budget",
        prepared.len(),
        with_context,
        preprocess.total_token_limit
    );

    // Label by rule and oversample connecting (the rarest move) so training
    // sees at least one positive per `factor` negatives.
    let labeled: Vec<_> = prepared
        .iter()
        .map(|e| (e.clone(), rule_labels(&e.target_text).get(TalkMove::Connecting)))
        .collect();
    let n_pos = labeled.iter().filter(|(_, y)| *y).count();
    let balanced = balance_labels(&labeled, 6, 7).expect("oversample");
    let n_pos_after = balanced.iter().filter(|(_, y)| *y).count();
    println!(
        "connecting positives {} -> {} after 1:6 oversampling ({} total examples)",
        n_pos,
        n_pos_after,
        balanced.len()
    );

    // The split groups by source utterance, so no segment of one turn leaks
    // across the boundary.
    let (train, test) = train_test_split(&prepared, 0.8, 7);
    println!("train/test split: {} / {} examples", train.len(), test.len());
}
