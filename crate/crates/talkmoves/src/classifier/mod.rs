//! One independent binary classifier per talk move, behind a pluggable
//! backend. A trained model is persisted together with the preprocessing
//! configuration it was trained under, so inference replays the exact same
//! example construction.

mod baseline;
mod metrics;
mod registry;
pub mod remote;

pub use baseline::LinearBaseline;
pub use metrics::EvalReport;
pub use registry::{best_config_by_name, best_config_for, move_config_registry, remote_epochs_for};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::TalkMove;
use crate::example_builder::{balance_labels, AnnotationExample, BuildError, PreprocessConfig};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("unknown talk move: {0}")]
    UnknownMove(String),
    #[error("no positive examples for the target move")]
    NoPositives,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("backend error: {0}")]
    Backend(String),
    #[error("missing API credentials: set {0}")]
    Auth(String),
    #[error("remote fine-tune job failed: {0}")]
    RemoteJobFailed(String),
    #[error("remote job did not finish within {0:?}")]
    Timeout(std::time::Duration),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact error: {0}")]
    Artifact(String),
}

impl From<BuildError> for ClassifierError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::NoPositives => ClassifierError::NoPositives,
            other => ClassifierError::Backend(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LocalEncoder,
    RemoteCompletionService,
    LinearBaseline,
}

/// Training hyperparameters, independent of preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub backend: BackendKind,
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
    pub decision_threshold: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            backend: BackendKind::LinearBaseline,
            epochs: 20,
            learning_rate: 0.5,
            seed: 0,
            decision_threshold: 0.5,
        }
    }
}

/// A trained binary model for one talk move. Predictions are deterministic
/// for a fixed model and never consult gold labels.
pub trait TrainedModel: Send + Sync {
    fn predict_probability(&self, example: &AnnotationExample) -> Result<f64, ClassifierError>;
    /// Persist backend-specific state into `dir`; returns the artifact name
    /// recorded in the handle snapshot.
    fn save(&self, dir: &Path) -> Result<String, ClassifierError>;
}

/// The text a backend actually sees: prior context (when present) above the
/// target segment.
pub fn model_input_text(example: &AnnotationExample) -> String {
    match &example.prior_text {
        Some(prior) => format!("{prior}\n{}", example.target_text),
        None => example.target_text.clone(),
    }
}

/// A trained model bundled with everything needed to reproduce its
/// training-time preprocessing at inference.
pub struct ModelHandle {
    pub talk_move: TalkMove,
    pub preprocess: PreprocessConfig,
    pub training: TrainingConfig,
    pub model: Box<dyn TrainedModel>,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("talk_move", &self.talk_move)
            .field("preprocess", &self.preprocess)
            .field("training", &self.training)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct HandleSnapshot {
    talk_move: TalkMove,
    preprocess: PreprocessConfig,
    training: TrainingConfig,
    artifact: String,
}

impl ModelHandle {
    /// Persist the handle as a directory: a config snapshot plus the
    /// backend's own artifact.
    pub fn save(&self, dir: &Path) -> Result<(), ClassifierError> {
        fs::create_dir_all(dir)?;
        let artifact = self.model.save(dir)?;
        let snapshot = HandleSnapshot {
            talk_move: self.talk_move,
            preprocess: self.preprocess,
            training: self.training,
            artifact,
        };
        let json = serde_json::to_string_pretty(&snapshot)
            .map_err(|e| ClassifierError::Artifact(e.to_string()))?;
        fs::write(dir.join("handle.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<ModelHandle, ClassifierError> {
        let raw = fs::read_to_string(dir.join("handle.json"))?;
        let snapshot: HandleSnapshot =
            serde_json::from_str(&raw).map_err(|e| ClassifierError::Artifact(e.to_string()))?;
        let model: Box<dyn TrainedModel> = match snapshot.training.backend {
            BackendKind::LinearBaseline => {
                Box::new(LinearBaseline::load(&dir.join(&snapshot.artifact))?)
            }
            BackendKind::RemoteCompletionService => {
                let model_id = fs::read_to_string(dir.join(&snapshot.artifact))?;
                Box::new(remote::RemoteModel::reattach(model_id.trim().to_string())?)
            }
            BackendKind::LocalEncoder => {
                return Err(ClassifierError::Backend(
                    "no local encoder runtime is bundled with this build".into(),
                ))
            }
        };
        Ok(ModelHandle {
            talk_move: snapshot.talk_move,
            preprocess: snapshot.preprocess,
            training: snapshot.training,
            model,
        })
    }

    pub fn predict(&self, example: &AnnotationExample) -> Result<(f64, bool), ClassifierError> {
        let p = self.model.predict_probability(example)?;
        Ok((p, p >= self.training.decision_threshold))
    }
}

/// Extract the binary label for `talk_move` from each example's gold set.
/// Examples without gold labels are skipped.
pub fn binary_labels(
    examples: &[AnnotationExample],
    talk_move: TalkMove,
) -> Vec<(AnnotationExample, bool)> {
    examples
        .iter()
        .filter_map(|e| e.gold.map(|g| (e.clone(), g.get(talk_move))))
        .collect()
}

/// Train the model for one talk move: balance labels when the preprocess
/// config asks for it, then hand the (possibly oversampled) set to the
/// backend named in the training config.
pub fn train_move_model(
    talk_move: TalkMove,
    train_examples: &[AnnotationExample],
    preprocess: &PreprocessConfig,
    training: &TrainingConfig,
) -> Result<ModelHandle, ClassifierError> {
    let labeled = binary_labels(train_examples, talk_move);
    if !labeled.iter().any(|(_, y)| *y) {
        return Err(ClassifierError::NoPositives);
    }
    let labeled = match preprocess.balancing_factor {
        Some(factor) => balance_labels(&labeled, factor, training.seed)?,
        None => labeled,
    };
    let model: Box<dyn TrainedModel> = match training.backend {
        BackendKind::LinearBaseline => Box::new(LinearBaseline::train(&labeled, training)),
        BackendKind::RemoteCompletionService => {
            let client = remote::RemoteClient::from_env()?;
            Box::new(remote::remote_backend_client(&client, &labeled, training)?)
        }
        BackendKind::LocalEncoder => {
            return Err(ClassifierError::Backend(
                "no local encoder runtime is bundled with this build; \
                 use linear_baseline or remote_completion_service"
                    .into(),
            ))
        }
    };
    Ok(ModelHandle {
        talk_move,
        preprocess: *preprocess,
        training: *training,
        model,
    })
}

/// Score a model on held-out examples at the given decision threshold.
pub fn evaluate(
    handle: &ModelHandle,
    test_examples: &[AnnotationExample],
    threshold: f64,
) -> Result<EvalReport, ClassifierError> {
    let labeled = binary_labels(test_examples, handle.talk_move);
    if labeled.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (example, gold) in &labeled {
        let p = handle.model.predict_probability(example)?;
        let decision = p >= threshold;
        match (decision, *gold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(EvalReport::from_counts(handle.talk_move, tp, fp, fn_, tn))
}

/// Serialize one example into the remote service's prompt/completion pair.
///
/// Format, bit-exact: the prompt is the prior text (when present), a blank
/// line, the target text, then the suffix delimiter `"\n\n###\n\n"`. The
/// completion is `" yes"` or `" no"`. Normalized text contains no blank
/// lines, so the target is always the last blank-line-separated block before
/// the delimiter.
pub fn remote_finetune_format(example: &AnnotationExample, gold: bool) -> (String, String) {
    let prompt = match &example.prior_text {
        Some(prior) => format!("{prior}\n\n{}\n\n###\n\n", example.target_text),
        None => format!("{}\n\n###\n\n", example.target_text),
    };
    let completion = if gold { " yes" } else { " no" };
    (prompt, completion.to_string())
}

/// Recover the target text from a formatted prompt.
pub fn parse_prompt_target(prompt: &str) -> Option<&str> {
    let body = prompt.strip_suffix("\n\n###\n\n")?;
    Some(match body.rfind("\n\n") {
        Some(idx) => &body[idx + 2..],
        None => body,
    })
}
