//! Double-annotator label sets, union gold labels, agreement statistics,
//! label distributions, and word error rate.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("example {0} has {1} annotation records, expected exactly 2")]
    MissingPair(String, usize),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("reference is empty after normalization")]
    EmptyReference,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The five accountable-talk moves plus the exemplary-use label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TalkMove {
    AddingOn,
    Connecting,
    Eliciting,
    Probing,
    Revoicing,
    /// An exemplary instance of any of the five moves.
    ModelUtterance,
}

impl TalkMove {
    /// The five core moves, in canonical order.
    pub const CORE: [TalkMove; 5] = [
        TalkMove::AddingOn,
        TalkMove::Connecting,
        TalkMove::Eliciting,
        TalkMove::Probing,
        TalkMove::Revoicing,
    ];

    /// All six labels the classifier suite can model.
    pub const ALL: [TalkMove; 6] = [
        TalkMove::AddingOn,
        TalkMove::Connecting,
        TalkMove::Eliciting,
        TalkMove::Probing,
        TalkMove::Revoicing,
        TalkMove::ModelUtterance,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TalkMove::AddingOn => "adding_on",
            TalkMove::Connecting => "connecting",
            TalkMove::Eliciting => "eliciting",
            TalkMove::Probing => "probing",
            TalkMove::Revoicing => "revoicing",
            TalkMove::ModelUtterance => "model_utterance",
        }
    }

    pub fn parse(name: &str) -> Option<TalkMove> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl std::fmt::Display for TalkMove {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Multi-label annotation for one example. Every field is independently
/// settable; an utterance can exhibit several talk moves at once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub adding_on: bool,
    pub connecting: bool,
    pub eliciting: bool,
    pub probing: bool,
    pub revoicing: bool,
    pub off_task: bool,
    pub poor_transcription: bool,
    pub model_utterance: bool,
}

impl LabelSet {
    pub fn get(&self, m: TalkMove) -> bool {
        match m {
            TalkMove::AddingOn => self.adding_on,
            TalkMove::Connecting => self.connecting,
            TalkMove::Eliciting => self.eliciting,
            TalkMove::Probing => self.probing,
            TalkMove::Revoicing => self.revoicing,
            TalkMove::ModelUtterance => self.model_utterance,
        }
    }

    pub fn set(&mut self, m: TalkMove, value: bool) {
        match m {
            TalkMove::AddingOn => self.adding_on = value,
            TalkMove::Connecting => self.connecting = value,
            TalkMove::Eliciting => self.eliciting = value,
            TalkMove::Probing => self.probing = value,
            TalkMove::Revoicing => self.revoicing = value,
            TalkMove::ModelUtterance => self.model_utterance = value,
        }
    }

    pub fn with(mut self, m: TalkMove) -> Self {
        self.set(m, true);
        self
    }

    fn fields(&self) -> [bool; 8] {
        [
            self.adding_on,
            self.connecting,
            self.eliciting,
            self.probing,
            self.revoicing,
            self.off_task,
            self.poor_transcription,
            self.model_utterance,
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.fields().iter().all(|&b| !b)
    }
}

/// One annotator's labels for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub example_id: String,
    pub annotator_id: String,
    pub labels: LabelSet,
}

/// Union gold labeling: an example carries a label if either annotator
/// selected it. Field-wise logical OR across all labels.
pub fn union_gold(a: &LabelSet, b: &LabelSet) -> LabelSet {
    LabelSet {
        adding_on: a.adding_on || b.adding_on,
        connecting: a.connecting || b.connecting,
        eliciting: a.eliciting || b.eliciting,
        probing: a.probing || b.probing,
        revoicing: a.revoicing || b.revoicing,
        off_task: a.off_task || b.off_task,
        poor_transcription: a.poor_transcription || b.poor_transcription,
        model_utterance: a.model_utterance || b.model_utterance,
    }
}

/// Group records by example, requiring exactly two annotators per example.
fn pairs(records: &[AnnotationRecord]) -> Result<Vec<(&AnnotationRecord, &AnnotationRecord)>, AnnotationError> {
    let mut by_example: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_example.entry(&r.example_id).or_default().push(r);
    }
    let mut out = Vec::with_capacity(by_example.len());
    for (example_id, recs) in by_example {
        if recs.len() != 2 {
            return Err(AnnotationError::MissingPair(example_id.to_string(), recs.len()));
        }
        out.push((recs[0], recs[1]));
    }
    Ok(out)
}

/// Per-annotator agreement on one move: the fraction of an annotator's
/// examples where their boolean matches the co-annotator's, plus the mean
/// over all annotators.
pub fn pairwise_agreement(
    records: &[AnnotationRecord],
    m: TalkMove,
) -> Result<(BTreeMap<String, f64>, f64), AnnotationError> {
    let mut agree: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (a, b) in pairs(records)? {
        let matched = a.labels.get(m) == b.labels.get(m);
        for r in [a, b] {
            let entry = agree.entry(r.annotator_id.clone()).or_insert((0, 0));
            entry.1 += 1;
            if matched {
                entry.0 += 1;
            }
        }
    }
    if agree.is_empty() {
        return Err(AnnotationError::EmptyInput("no annotation records".into()));
    }
    let per: BTreeMap<String, f64> = agree
        .into_iter()
        .map(|(id, (hits, total))| (id, hits as f64 / total as f64))
        .collect();
    let mean = per.values().sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}

/// Fraction of examples where the two annotators' selected-label sets
/// intersect. Two empty selections count as overlapping.
pub fn any_label_overlap_rate(records: &[AnnotationRecord]) -> Result<f64, AnnotationError> {
    let pairs = pairs(records)?;
    if pairs.is_empty() {
        return Err(AnnotationError::EmptyInput("no annotation records".into()));
    }
    let overlapping = pairs
        .iter()
        .filter(|(a, b)| {
            let (fa, fb) = (a.labels.fields(), b.labels.fields());
            let both_empty = a.labels.is_empty() && b.labels.is_empty();
            both_empty || fa.iter().zip(fb.iter()).any(|(&x, &y)| x && y)
        })
        .count();
    Ok(overlapping as f64 / pairs.len() as f64)
}

/// Per-move fraction of gold label sets with the move set. Fractions need not
/// sum to 1 (multi-label).
pub fn label_distribution(gold: &[LabelSet]) -> Result<BTreeMap<TalkMove, f64>, AnnotationError> {
    if gold.is_empty() {
        return Err(AnnotationError::EmptyInput("no gold label sets".into()));
    }
    let n = gold.len() as f64;
    Ok(TalkMove::ALL
        .into_iter()
        .map(|m| (m, gold.iter().filter(|g| g.get(m)).count() as f64 / n))
        .collect())
}

fn wer_normalize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        curr[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            curr[j] = (prev[j] + 1).min(curr[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Word error rate: word-level edit distance over reference word count.
/// Both strings are case-folded and punctuation-stripped first, so the metric
/// is reproducible across transcription sources. Can exceed 1.0 with enough
/// insertions.
pub fn word_error_rate(reference: &str, hypothesis: &str) -> Result<f64, AnnotationError> {
    let r = wer_normalize(reference);
    if r.is_empty() {
        return Err(AnnotationError::EmptyReference);
    }
    let h = wer_normalize(hypothesis);
    Ok(levenshtein(&r, &h) as f64 / r.len() as f64)
}

/// Annotation CSV column order, fixed: example_id, annotator_id, then one
/// 0/1 column per label.
pub const ANNOTATION_COLUMNS: [&str; 10] = [
    "example_id",
    "annotator_id",
    "adding_on",
    "connecting",
    "eliciting",
    "probing",
    "revoicing",
    "off_task",
    "poor_transcription",
    "model_utterance",
];

pub fn write_annotation_csv(records: &[AnnotationRecord], path: &Path) -> Result<(), AnnotationError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(ANNOTATION_COLUMNS)?;
    for r in records {
        let l = r.labels;
        let bits = [
            l.adding_on,
            l.connecting,
            l.eliciting,
            l.probing,
            l.revoicing,
            l.off_task,
            l.poor_transcription,
            l.model_utterance,
        ];
        let mut row = vec![r.example_id.clone(), r.annotator_id.clone()];
        row.extend(bits.iter().map(|&b| if b { "1".into() } else { "0".into() }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotation_csv(path: &Path) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut reader = csv::Reader::from_reader(File::open(path)?);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let bit = |i: usize| row.get(i).map(|v| v.trim() == "1").unwrap_or(false);
        out.push(AnnotationRecord {
            example_id: row.get(0).unwrap_or_default().to_string(),
            annotator_id: row.get(1).unwrap_or_default().to_string(),
            labels: LabelSet {
                adding_on: bit(2),
                connecting: bit(3),
                eliciting: bit(4),
                probing: bit(5),
                revoicing: bit(6),
                off_task: bit(7),
                poor_transcription: bit(8),
                model_utterance: bit(9),
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(example: &str, annotator: &str, labels: LabelSet) -> AnnotationRecord {
        AnnotationRecord {
            example_id: example.into(),
            annotator_id: annotator.into(),
            labels,
        }
    }

    #[test]
    fn union_is_fieldwise_or() {
        let a = LabelSet::default().with(TalkMove::Eliciting);
        let b = LabelSet::default();
        assert_eq!(union_gold(&a, &b), a);

        let c = LabelSet::default().with(TalkMove::Probing);
        let d = LabelSet::default().with(TalkMove::Revoicing);
        let u = union_gold(&c, &d);
        assert!(u.probing && u.revoicing && !u.eliciting);

        assert_eq!(union_gold(&LabelSet::default(), &LabelSet::default()), LabelSet::default());
    }

    #[test]
    fn union_or_laws() {
        let a = LabelSet::default().with(TalkMove::AddingOn);
        let b = LabelSet::default().with(TalkMove::Connecting);
        assert_eq!(union_gold(&a, &b), union_gold(&b, &a));
        assert_eq!(union_gold(&a, &a), a);
    }

    #[test]
    fn agreement_fraction() {
        // one annotator pair, 10 examples, 9 matches on eliciting
        let mut records = Vec::new();
        for i in 0..10 {
            let a_labels = LabelSet::default().with(TalkMove::Eliciting);
            let b_labels = if i == 0 {
                LabelSet::default()
            } else {
                LabelSet::default().with(TalkMove::Eliciting)
            };
            records.push(rec(&format!("e{i}"), "ann_a", a_labels));
            records.push(rec(&format!("e{i}"), "ann_b", b_labels));
        }
        let (per, mean) = pairwise_agreement(&records, TalkMove::Eliciting).unwrap();
        assert_eq!(per["ann_a"], 0.9);
        assert_eq!(per["ann_b"], 0.9);
        assert_eq!(mean, 0.9);
    }

    #[test]
    fn identical_annotators_agree_fully() {
        let labels = LabelSet::default().with(TalkMove::Probing);
        let records = vec![
            rec("e0", "a", labels),
            rec("e0", "b", labels),
            rec("e1", "a", LabelSet::default()),
            rec("e1", "b", LabelSet::default()),
        ];
        for m in TalkMove::CORE {
            let (_, mean) = pairwise_agreement(&records, m).unwrap();
            assert_eq!(mean, 1.0);
        }
    }

    #[test]
    fn missing_pair_is_an_error() {
        let records = vec![rec("e0", "a", LabelSet::default())];
        assert!(matches!(
            pairwise_agreement(&records, TalkMove::Eliciting),
            Err(AnnotationError::MissingPair(_, 1))
        ));
    }

    #[test]
    fn overlap_rate_counts_shared_and_both_empty_selections() {
        let records = vec![
            // shared eliciting -> overlap
            rec("e0", "a", LabelSet::default().with(TalkMove::Eliciting)),
            rec("e0", "b", LabelSet::default().with(TalkMove::Eliciting)),
            // disjoint selections -> no overlap
            rec("e1", "a", LabelSet::default().with(TalkMove::Probing)),
            rec("e1", "b", LabelSet::default().with(TalkMove::Revoicing)),
            // both empty -> overlap
            rec("e2", "a", LabelSet::default()),
            rec("e2", "b", LabelSet::default()),
        ];
        let rate = any_label_overlap_rate(&records).unwrap();
        assert!((rate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn distribution_fractions() {
        let gold = vec![
            LabelSet::default().with(TalkMove::Eliciting),
            LabelSet::default(),
            LabelSet::default(),
            LabelSet::default(),
        ];
        let dist = label_distribution(&gold).unwrap();
        assert_eq!(dist[&TalkMove::Eliciting], 0.25);
        assert_eq!(dist[&TalkMove::Probing], 0.0);
    }

    #[test]
    fn distribution_rejects_empty_input() {
        assert!(label_distribution(&[]).is_err());
    }

    #[test]
    fn wer_single_substitution() {
        let wer = word_error_rate("the cat sat", "the cat sit").unwrap();
        assert!((wer - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wer_identical_is_zero() {
        assert_eq!(word_error_rate("Hello, world!", "hello world").unwrap(), 0.0);
    }

    #[test]
    fn wer_can_exceed_one() {
        assert_eq!(word_error_rate("a b", "a x b y").unwrap(), 1.0);
    }

    #[test]
    fn wer_empty_reference_errors() {
        assert!(matches!(
            word_error_rate("...", "anything"),
            Err(AnnotationError::EmptyReference)
        ));
    }
}
