//! Transcript ingest mechanics: assign speakers to raw transcript segments
//! from diarization intervals, then merge typed chat messages into the
//! spoken timeline.
//!
//!     cargo run --example diarization_and_chat_merge
//!
//! Speaker assignment picks the interval with the largest time overlap
//! (ties go to the earlier interval); segments covered by no interval fall
//! back to an "unknown" student so they can never inflate instructor counts.

use talkmoves::corpus::{
    assign_speakers, merge_chat, RawSegment, Source, SpeakerInterval, SpeakerRole, Utterance,
};

fn seg(start: f64, end: f64, text: &str) -> RawSegment {
    RawSegment { start_time: start, end_time: end, text: text.to_string() }
}

fn interval(speaker: &str, role: SpeakerRole, start: f64, end: f64) -> SpeakerInterval {
    SpeakerInterval { speaker_id: speaker.to_string(), role, start, end }
}

fn main() {
    let segments = [
        seg(0.0, 4.0, "Welcome back everyone, let's pick up where we stopped."),
        seg(4.5, 7.0, "I think the loop never terminates?"),
        seg(7.0, 12.0, "Good question. What do you think the exit condition is?"),
        seg(40.0, 42.0, "mumbled aside nobody was mic'd for"),
    ];
    let intervals = [
        interval("instructor-1", SpeakerRole::Instructor, 0.0, 4.2),
        interval("student-a", SpeakerRole::Student, 4.2, 7.0),
        interval("instructor-1", SpeakerRole::Instructor, 7.0, 12.0),
    ];

    let spoken = assign_speakers("demo-session", &segments, &intervals);
    println!("diarized utterances:");
    for u in &spoken {
        println!(
            "  [{:>5.1}s] {:<12} ({:?}): {}",
            u.start_time, u.speaker_id, u.speaker_role, u.text
        );
    }

    // A chat message typed while the instructor was talking slots into the
    // timeline by timestamp; on an exact tie audio comes first.
    let chat = vec![Utterance {
        utterance_id: "demo-session-chat0".to_string(),
        session_id: "demo-session".to_string(),
        speaker_role: SpeakerRole::Student,
        speaker_id: "student-b".to_string(),
        start_time: 8.0,
        end_time: 8.0,
        text: "is it the counter hitting zero?".to_string(),
        source: Source::Chat,
    }];
    let merged = merge_chat(spoken, chat).expect("merge chat log");

    println!("\nmerged timeline (audio + chat):");
    for u in &merged {
        let tag = match u.source {
            Source::Audio => "audio",
            Source::Chat => "chat ",
        };
        println!("  [{:>5.1}s] {tag} {:<12}: {}", u.start_time, u.speaker_id, u.text);
    }
}
