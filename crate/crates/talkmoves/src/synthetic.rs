//! Deterministic synthetic data: a rule-generated instruction corpus whose
//! talk moves are announced by fixed marker phrases, matching annotation
//! records, and outcome tables with planted regression coefficients.
//!
//! The generating rules double as test oracles: an utterance exhibits a move
//! exactly when its text contains that move's marker phrase, and the planted
//! coefficient is the ground truth a regression should recover.

use std::collections::BTreeMap;

use rand::distributions::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::Normal;

use crate::analysis::OutcomeRow;
use crate::annotation::{AnnotationRecord, LabelSet, TalkMove};
use crate::corpus::{Session, Source, SpeakerRole, Utterance};
use crate::example_builder::AnnotationExample;
use crate::inference::SessionFeatures;

/// Marker phrase whose presence defines a positive example for each move.
pub fn marker_phrase(talk_move: TalkMove) -> &'static str {
    match talk_move {
        TalkMove::AddingOn => "building on that idea let me add another point",
        TalkMove::Connecting => "remember how jordan connected this to the earlier example",
        TalkMove::Eliciting => "who wants to share how we might start this problem",
        TalkMove::Probing => "can you say more about why that works",
        TalkMove::Revoicing => "so what i hear you saying is that the loop stops",
        TalkMove::ModelUtterance => "that is an excellent way to phrase the question",
    }
}

/// The rule-based labeling oracle: labels follow directly from the text.
pub fn rule_labels(text: &str) -> LabelSet {
    let lower = text.to_lowercase();
    let mut labels = LabelSet::default();
    for m in TalkMove::ALL {
        if lower.contains(marker_phrase(m)) {
            labels.set(m, true);
        }
    }
    labels.poor_transcription = lower.contains("inaudible");
    labels.off_task = lower.contains("weekend plans");
    labels
}

const FILLERS: [&str; 8] = [
    "let us walk through the next function together",
    "the variable keeps its value until we assign a new one",
    "try running the code and watch what the console prints",
    "a for loop repeats the body once per element",
    "the condition is checked before every iteration",
    "indentation decides which lines belong to the block",
    "we return the result at the end of the function",
    "strings and integers cannot be added directly",
];

const STUDENT_LINES: [&str; 6] = [
    "i think the loop runs one time too many",
    "my program prints nothing at all",
    "should the condition use less than or equals",
    "i used a while loop instead",
    "the error says index out of range",
    "mine works when the list is empty",
];

fn per_move_rate(talk_move: TalkMove) -> f64 {
    match talk_move {
        TalkMove::AddingOn => 0.25,
        TalkMove::Connecting => 0.08,
        TalkMove::Eliciting => 0.17,
        TalkMove::Probing => 0.13,
        TalkMove::Revoicing => 0.11,
        TalkMove::ModelUtterance => 0.06,
    }
}

/// Generate a deterministic synthetic corpus: `n_sessions` sessions spread
/// over five instructors, alternating student and instructor turns, with
/// marker phrases planted per move and a sprinkle of chat messages, long
/// utterances, and noise markers.
pub fn generate_corpus(n_sessions: usize, seed: u64) -> Vec<Session> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sessions = Vec::with_capacity(n_sessions);
    for s in 0..n_sessions {
        let session_id = format!("synth{s:03}");
        // Ten instructors: the outcome design has six instructor-level
        // columns (intercept, female, first_time, in_us, age, age^2), so
        // fewer than seven clusters would make it rank deficient.
        let instructor_id = format!("inst{}", s % 10);
        let n_turns = 30;
        let mut utterances = Vec::new();
        let mut t = 0.0_f64;
        for turn in 0..n_turns {
            // student turn
            let student_text = STUDENT_LINES[rng.gen_range(0..STUDENT_LINES.len())];
            utterances.push(Utterance {
                utterance_id: format!("{session_id}-u{:03}", turn * 2),
                session_id: session_id.clone(),
                speaker_role: SpeakerRole::Student,
                speaker_id: format!("stu{}", rng.gen_range(0..6)),
                start_time: t,
                end_time: t + 6.0,
                text: student_text.to_string(),
                source: Source::Audio,
            });
            t += 8.0;

            // instructor turn: filler plus any markers drawn for this turn
            let mut parts = vec![FILLERS[rng.gen_range(0..FILLERS.len())].to_string()];
            for m in TalkMove::ALL {
                if rng.gen_bool(per_move_rate(m)) {
                    parts.push(marker_phrase(m).to_string());
                }
            }
            if rng.gen_bool(0.03) {
                parts.push("inaudible".to_string());
            }
            if rng.gen_bool(0.02) {
                parts.push("tell me about your weekend plans".to_string());
            }
            // occasionally pad past the segment limit to exercise splitting
            if rng.gen_bool(0.05) {
                for _ in 0..40 {
                    parts.push(FILLERS[rng.gen_range(0..FILLERS.len())].to_string());
                }
            }
            utterances.push(Utterance {
                utterance_id: format!("{session_id}-u{:03}", turn * 2 + 1),
                session_id: session_id.clone(),
                speaker_role: SpeakerRole::Instructor,
                speaker_id: instructor_id.clone(),
                start_time: t,
                end_time: t + 20.0,
                text: parts.join(". "),
                source: Source::Audio,
            });
            t += 25.0;

            if rng.gen_bool(0.1) {
                utterances.push(Utterance {
                    utterance_id: format!("{session_id}-c{turn:03}"),
                    session_id: session_id.clone(),
                    speaker_role: SpeakerRole::Student,
                    speaker_id: format!("stu{}", rng.gen_range(0..6)),
                    start_time: t,
                    end_time: t,
                    text: "thanks that makes sense".to_string(),
                    source: Source::Chat,
                });
                t += 2.0;
            }
        }
        let duration = (t / 3600.0).max(0.25) + rng.gen_range(0.0..0.25);
        sessions.push(
            Session {
                session_id,
                instructor_id,
                utterances,
                declared_duration_hours: Some(duration),
                metadata: BTreeMap::new(),
            }
            .finalize()
            .expect("synthetic session is valid"),
        );
    }
    sessions
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Produce two annotators' records for each example, deterministically from
/// the example text. Annotator B always follows the rule; annotator A
/// occasionally misses one label, so the union still equals the rule.
pub fn annotate_examples(examples: &[AnnotationExample]) -> Vec<AnnotationRecord> {
    let mut records = Vec::with_capacity(examples.len() * 2);
    for e in examples {
        let truth = rule_labels(&e.target_text);
        let mut a = truth;
        if fnv1a(e.example_id.as_bytes()) % 17 == 0 {
            for m in TalkMove::ALL {
                if a.get(m) {
                    a.set(m, false);
                    break;
                }
            }
        }
        records.push(AnnotationRecord {
            example_id: e.example_id.clone(),
            annotator_id: "ann_a".into(),
            labels: a,
        });
        records.push(AnnotationRecord {
            example_id: e.example_id.clone(),
            annotator_id: "ann_b".into(),
            labels: truth,
        });
    }
    records
}

/// Utterance-level count of a move in a session under the generating rule.
pub fn true_move_count(session: &Session, talk_move: TalkMove) -> usize {
    session
        .instructor_utterances()
        .filter(|(_, u)| rule_labels(&u.text).get(talk_move))
        .count()
}

/// Per-instructor covariate draw. The first two instructors get fixed
/// complementary binary values so no binary column is ever constant across a
/// dataset (a constant column would alias the regression intercept).
fn instructor_covariates(index: usize, rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    // rng is keyed per instructor by the caller
    let age = rng.gen_range(22.0..45.0_f64).round();
    // distinct anchor patterns: every binary column takes both values, and no
    // two columns (or complements) can coincide across the whole dataset
    let (female, first_time, in_us) = match index {
        0 => (0.0, 0.0, 1.0),
        1 => (1.0, 0.0, 0.0),
        2 => (0.0, 1.0, 0.0),
        _ => (
            f64::from(rng.gen_bool(0.3)),
            f64::from(rng.gen_bool(0.8)),
            f64::from(rng.gen_bool(0.65)),
        ),
    };
    (female, first_time, in_us, age)
}

fn section_props(rng: &mut ChaCha8Rng) -> [f64; 7] {
    let prop_female = rng.gen_range(0.2..0.8);
    let prop_us = rng.gen_range(0.3..0.9);
    // age buckets deliberately sum below 1 (some students under 22)
    let mut buckets = [0.0_f64; 5];
    let mut remaining = 0.85;
    for b in buckets.iter_mut() {
        let v = rng.gen_range(0.0..remaining / 2.0);
        *b = v;
        remaining -= v;
    }
    [
        prop_female, prop_us, buckets[0], buckets[1], buckets[2], buckets[3], buckets[4],
    ]
}

/// Planted coefficient on the connecting hourly rate in generated outcomes.
pub const PLANTED_BETA: f64 = 0.05;

/// Generate an outcomes/covariates table for a synthetic corpus. Outcomes
/// load on the true connecting rate with coefficient [`PLANTED_BETA`] times a
/// per-outcome scale, plus covariate effects and instructor-clustered noise.
pub fn generate_outcomes(sessions: &[Session], seed: u64) -> Vec<OutcomeRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut instructor_effects: BTreeMap<String, f64> = BTreeMap::new();
    let mut instructor_covs: BTreeMap<String, (f64, f64, f64, f64)> = BTreeMap::new();
    let mut rows = Vec::new();
    for session in sessions {
        let inst = session.instructor_id.clone();
        let effect = *instructor_effects
            .entry(inst.clone())
            .or_insert_with(|| noise.sample(&mut rng));
        let mut cov_rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(inst.as_bytes()));
        let inst_index = instructor_covs.len(); // order of first appearance
        let (female, first_time, in_us, age) = *instructor_covs
            .entry(inst.clone())
            .or_insert_with(|| instructor_covariates(inst_index, &mut cov_rng));
        let props = section_props(&mut rng);
        let duration = session.declared_duration_hours.unwrap_or(1.0);
        let rate = true_move_count(session, TalkMove::Connecting) as f64 / duration;
        let covariate_part = 0.4 * female - 0.2 * first_time + 0.1 * in_us + 0.02 * age
            - 0.0002 * age * age
            + 0.5 * props[0];

        let base = OutcomeRow {
            session_id: session.session_id.clone(),
            instructor_id: inst.clone(),
            student_id: None,
            subsequent_attendance: None,
            helpfulness_rating: None,
            assignments_completed: None,
            female: Some(female),
            first_time: Some(first_time),
            in_us: Some(in_us),
            age: Some(age),
            prop_female: Some(props[0]),
            prop_us: Some(props[1]),
            prop_age_22_25: Some(props[2]),
            prop_age_26_30: Some(props[3]),
            prop_age_31_35: Some(props[4]),
            prop_age_36_40: Some(props[5]),
            prop_age_40_plus: Some(props[6]),
        };

        // transcript-level row: attendance
        let mut transcript = base.clone();
        transcript.subsequent_attendance = Some(
            8.0 + PLANTED_BETA * rate + covariate_part + effect + noise.sample(&mut rng),
        );
        rows.push(transcript);

        // student-level rows: rating and assignments
        for student in 0..4 {
            let mut row = base.clone();
            row.student_id = Some(format!("{}-stu{student}", session.session_id));
            row.helpfulness_rating = Some(
                (2.5 + PLANTED_BETA * rate + 0.2 * covariate_part
                    + effect
                    + noise.sample(&mut rng))
                .clamp(1.0, 4.0),
            );
            row.assignments_completed = Some(
                (1.5 + PLANTED_BETA * rate + 0.2 * covariate_part
                    + effect
                    + noise.sample(&mut rng))
                .clamp(0.0, 3.0),
            );
            rows.push(row);
        }
    }
    rows
}

/// Standalone regression dataset with a known coefficient: `n_instructors`
/// clusters of `sessions_per` sessions, connecting rates drawn uniformly, and
/// attendance generated as `PLANTED_BETA * rate + covariates +
/// instructor-clustered noise`.
pub fn generate_regression_dataset(
    n_instructors: usize,
    sessions_per: usize,
    seed: u64,
) -> (Vec<SessionFeatures>, Vec<OutcomeRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cluster_noise = Normal::new(0.0, 0.05).unwrap();
    let obs_noise = Normal::new(0.0, 0.5).unwrap();
    let mut features = Vec::new();
    let mut rows = Vec::new();
    for i in 0..n_instructors {
        let instructor_id = format!("inst{i:02}");
        let effect = cluster_noise.sample(&mut rng);
        let mut cov_rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(instructor_id.as_bytes()));
        let (female, first_time, in_us, age) = instructor_covariates(i, &mut cov_rng);
        for s in 0..sessions_per {
            let session_id = format!("{instructor_id}-sess{s:02}");
            let duration = rng.gen_range(0.8..1.6);
            let mut counts = BTreeMap::new();
            let mut rates = BTreeMap::new();
            for m in TalkMove::CORE {
                let count = rng.gen_range(0..14_usize);
                counts.insert(m, count);
                rates.insert(m, count as f64 / duration);
            }
            let rate = rates[&TalkMove::Connecting];
            let props = section_props(&mut rng);
            let covariate_part = 0.4 * female - 0.2 * first_time + 0.1 * in_us + 0.02 * age
                - 0.0002 * age * age
                + 0.5 * props[0]
                + 0.3 * props[1];
            let attendance =
                8.0 + PLANTED_BETA * rate + covariate_part + effect + obs_noise.sample(&mut rng);
            features.push(SessionFeatures {
                session_id: session_id.clone(),
                duration_hours: duration,
                counts,
                rate_per_hour: rates,
            });
            rows.push(OutcomeRow {
                session_id,
                instructor_id: instructor_id.clone(),
                student_id: None,
                subsequent_attendance: Some(attendance),
                helpfulness_rating: None,
                assignments_completed: None,
                female: Some(female),
                first_time: Some(first_time),
                in_us: Some(in_us),
                age: Some(age),
                prop_female: Some(props[0]),
                prop_us: Some(props[1]),
                prop_age_22_25: Some(props[2]),
                prop_age_26_30: Some(props[3]),
                prop_age_31_35: Some(props[4]),
                prop_age_36_40: Some(props[5]),
                prop_age_40_plus: Some(props[6]),
            });
        }
    }
    (features, rows)
}

/// Fixture with exact per-move disagreement counts planted so every
/// annotator's agreement equals the target rate.
///
/// Three fixed annotator pairs each label `examples_per_pair` examples; for
/// each move, the pair disagrees on exactly `disagreements(move)` of them.
pub fn agreement_fixture(
    examples_per_pair: usize,
    disagreements: &BTreeMap<TalkMove, usize>,
) -> Vec<AnnotationRecord> {
    let pairs = [("a1", "a2"), ("a3", "a4"), ("a5", "a6")];
    let mut records = Vec::new();
    for (p, (left, right)) in pairs.iter().enumerate() {
        for i in 0..examples_per_pair {
            let example_id = format!("pair{p}-ex{i:04}");
            let mut l = LabelSet::default();
            let r = LabelSet::default();
            for (m, d) in disagreements {
                if i < *d {
                    l.set(*m, true); // left says yes, right says no: one disagreement
                }
            }
            records.push(AnnotationRecord {
                example_id: example_id.clone(),
                annotator_id: (*left).to_string(),
                labels: l,
            });
            records.push(AnnotationRecord {
                example_id,
                annotator_id: (*right).to_string(),
                labels: r,
            });
        }
    }
    records
}

/// Fixture with an exact share of examples where the two annotators'
/// selections overlap. A fifth of the overlapping examples overlap by both
/// annotators selecting nothing.
pub fn overlap_fixture(total: usize, overlapping: usize) -> Vec<AnnotationRecord> {
    assert!(overlapping <= total);
    let mut records = Vec::new();
    let both_empty = overlapping / 5;
    for i in 0..total {
        let example_id = format!("ov-ex{i:04}");
        let (a, b) = if i < both_empty {
            (LabelSet::default(), LabelSet::default())
        } else if i < overlapping {
            (
                LabelSet::default().with(TalkMove::Eliciting),
                LabelSet::default().with(TalkMove::Eliciting).with(TalkMove::Probing),
            )
        } else {
            (
                LabelSet::default().with(TalkMove::Probing),
                LabelSet::default().with(TalkMove::Revoicing),
            )
        };
        records.push(AnnotationRecord {
            example_id: example_id.clone(),
            annotator_id: "a1".into(),
            labels: a,
        });
        records.push(AnnotationRecord {
            example_id,
            annotator_id: "a2".into(),
            labels: b,
        });
    }
    records
}
