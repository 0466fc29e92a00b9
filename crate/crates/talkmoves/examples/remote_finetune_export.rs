//! Export training examples in the remote fine-tuning service's JSONL wire
//! format, without any network traffic.
//!
//!     cargo run --example remote_finetune_export
//!
//! Each line is a prompt/completion pair: prior context (if any), a blank
//! line, the target segment, the "\n\n###\n\n" delimiter, and " yes"/" no".
//! Live use goes through `RemoteClient::from_env`, which reads
//! TALKMOVES_API_KEY and TALKMOVES_API_BASE.

use std::collections::BTreeMap;

use talkmoves::annotation::{LabelSet, TalkMove};
use talkmoves::classifier::{parse_prompt_target, remote_finetune_format};
use talkmoves::example_builder::AnnotationExample;

fn example(id: &str, text: &str, prior: Option<&str>, gold: LabelSet) -> AnnotationExample {
    AnnotationExample {
        example_id: id.to_string(),
        session_id: "s1".to_string(),
        source_utterance_id: id.to_string(),
        target_text: text.to_string(),
        segment_index: 0,
        segment_count: 1,
        prior_text: prior.map(str::to_owned),
        labels_by_annotator: BTreeMap::new(),
        gold: Some(gold),
    }
}

fn main() {
    let talk_move = TalkMove::Probing;
    let examples = [
        example(
            "u1#0",
            "what do you think happens on the last iteration?",
            Some("STUDENT: i am stuck on the loop"),
            LabelSet::default().with(TalkMove::Probing),
        ),
        example(
            "u2#0",
            "the answer is on the slide.",
            None,
            LabelSet::default(),
        ),
    ];

    println!("fine-tuning JSONL for the {} model:", talk_move.name());
    for e in &examples {
        let gold = e.gold.expect("gold label").get(talk_move);
        let (prompt, completion) = remote_finetune_format(e, gold);
        // BTreeMap keys give a stable field order on the wire.
        let line = serde_json::to_string(&BTreeMap::from([
            ("completion", completion),
            ("prompt", prompt.clone()),
        ]))
        .expect("serialize line");
        println!("{line}");

        // The target segment is recoverable from the prompt alone.
        assert_eq!(parse_prompt_target(&prompt), Some(e.target_text.as_str()));
    }
}
