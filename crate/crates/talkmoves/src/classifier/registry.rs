//! Per-move default configurations: the best preprocessing found for each
//! talk move, plus the epoch counts used with the remote completion service.

use std::collections::BTreeMap;

use crate::annotation::TalkMove;
use crate::example_builder::{PreprocessConfig, TruncationSide};

use super::{ClassifierError, TrainingConfig};

/// The best preprocessing configuration for each talk move:
///
/// - adding_on: two prior texts, truncate keeping the start, no balancing
/// - connecting: no prior text, balancing factor 6
/// - eliciting: no prior text, no balancing
/// - probing: two prior texts, truncate keeping the end, no balancing
/// - revoicing: two prior texts, truncate keeping the end, balancing factor 1
/// - model_utterance: two prior texts, truncate keeping the end, balancing factor 1
pub fn best_config_for(
    talk_move: TalkMove,
) -> Result<(PreprocessConfig, TrainingConfig), ClassifierError> {
    let base = PreprocessConfig::default();
    let preprocess = match talk_move {
        TalkMove::AddingOn => PreprocessConfig {
            context_size: 2,
            truncation_side: TruncationSide::KeepStart,
            balancing_factor: None,
            ..base
        },
        TalkMove::Connecting => PreprocessConfig {
            context_size: 0,
            balancing_factor: Some(6),
            ..base
        },
        TalkMove::Eliciting => PreprocessConfig {
            context_size: 0,
            balancing_factor: None,
            ..base
        },
        TalkMove::Probing => PreprocessConfig {
            context_size: 2,
            truncation_side: TruncationSide::KeepEnd,
            balancing_factor: None,
            ..base
        },
        TalkMove::Revoicing => PreprocessConfig {
            context_size: 2,
            truncation_side: TruncationSide::KeepEnd,
            balancing_factor: Some(1),
            ..base
        },
        TalkMove::ModelUtterance => PreprocessConfig {
            context_size: 2,
            truncation_side: TruncationSide::KeepEnd,
            balancing_factor: Some(1),
            ..base
        },
    };
    Ok((preprocess, TrainingConfig::default()))
}

/// Variant of [`best_config_for`] for string move names, for CLI use.
pub fn best_config_by_name(
    name: &str,
) -> Result<(PreprocessConfig, TrainingConfig), ClassifierError> {
    let talk_move =
        TalkMove::parse(name).ok_or_else(|| ClassifierError::UnknownMove(name.to_string()))?;
    best_config_for(talk_move)
}

/// The full registry: one entry per modeled label.
pub fn move_config_registry() -> BTreeMap<TalkMove, (PreprocessConfig, TrainingConfig)> {
    TalkMove::ALL
        .into_iter()
        .map(|m| (m, best_config_for(m).expect("registry covers all moves")))
        .collect()
}

/// Epoch counts for the remote completion-service models. The epoch sweep
/// starts at 5 and decreases; these were the best found per move.
pub fn remote_epochs_for(talk_move: TalkMove) -> u32 {
    match talk_move {
        TalkMove::AddingOn => 4,
        TalkMove::Connecting => 3,
        TalkMove::Eliciting => 5,
        TalkMove::Probing => 4,
        TalkMove::Revoicing => 5,
        TalkMove::ModelUtterance => 5,
    }
}
