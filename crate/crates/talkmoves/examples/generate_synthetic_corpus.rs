//! Generate the bundled synthetic classroom corpus and save it to disk in
//! the pipeline's session format.
//!
//!     cargo run --example generate_synthetic_corpus -- [out_dir]
//!
//! Every session mixes instructor and student turns; instructor turns embed
//! deterministic marker phrases so downstream labels are recoverable by rule.

use std::collections::BTreeMap;
use std::path::PathBuf;

use talkmoves::annotation::TalkMove;
use talkmoves::corpus::{save_session, SpeakerRole};
use talkmoves::synthetic::{generate_corpus, true_move_count};

fn main() {
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("synthetic_corpus"));
    std::fs::create_dir_all(&out_dir).expect("create output directory");

    let corpus = generate_corpus(20, 0);
    let mut move_totals: BTreeMap<TalkMove, usize> = BTreeMap::new();
    for session in &corpus {
        let path = out_dir.join(format!("{}.session.jsonl", session.session_id));
        save_session(session, &path).expect("write session");
        for m in TalkMove::CORE {
            *move_totals.entry(m).or_default() += true_move_count(session, m);
        }
    }

    let n_utterances: usize = corpus.iter().map(|s| s.utterances.len()).sum();
    let n_instructor: usize = corpus
        .iter()
        .flat_map(|s| s.utterances.iter())
        .filter(|u| u.speaker_role == SpeakerRole::Instructor)
        .count();
    println!(
        "wrote {} sessions ({} utterances, {} instructor turns) to {}",
        corpus.len(),
        n_utterances,
        n_instructor,
        out_dir.display()
    );
    println!("true talk-move counts across the corpus:");
    for (m, count) in &move_totals {
        println!("  {:<16} {count}", m.name());
    }
}
