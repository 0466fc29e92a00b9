//! Double-annotation statistics: per-move pairwise agreement, the
//! any-label overlap rate, union-gold label distribution, and word error
//! rate between transcript variants.
//!
//!     cargo run --example annotation_statistics

use std::collections::BTreeMap;

use talkmoves::annotation::{
    any_label_overlap_rate, label_distribution, pairwise_agreement, union_gold, word_error_rate,
    TalkMove,
};
use talkmoves::synthetic::{agreement_fixture, overlap_fixture};

fn main() {
    // A fixture with a controlled number of per-move disagreements between
    // the two annotators.
    let disagreements = BTreeMap::from([
        (TalkMove::AddingOn, 12),
        (TalkMove::Connecting, 2),
        (TalkMove::Eliciting, 8),
        (TalkMove::Probing, 6),
        (TalkMove::Revoicing, 4),
    ]);
    let records = agreement_fixture(100, &disagreements);

    println!("pairwise agreement over 100 doubly-annotated examples:");
    for m in TalkMove::CORE {
        let (per_pair, mean) = pairwise_agreement(&records, m).expect("agreement");
        println!("  {:<16} mean {:.2} over {} annotator pair(s)", m.name(), mean, per_pair.len());
    }

    let overlap = overlap_fixture(100, 63);
    println!(
        "\nany-label overlap rate: {:.2}",
        any_label_overlap_rate(&overlap).expect("overlap rate")
    );

    // Union gold: an example is positive for a move if either annotator
    // marked it.
    let golds: Vec<_> = records
        .chunks(2)
        .map(|pair| union_gold(&pair[0].labels, &pair[1].labels))
        .collect();
    println!("\nunion-gold label distribution:");
    for (m, fraction) in label_distribution(&golds).expect("distribution") {
        println!("  {:<16} {:.2}", m.name(), fraction);
    }

    let reference = "what do you think the exit condition is";
    let hypothesis = "what do you think the exit commission is";
    println!(
        "\nword error rate between transcript variants: {:.3}",
        word_error_rate(reference, hypothesis).expect("wer")
    );
}
