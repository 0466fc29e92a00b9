//! Deterministic linear baseline: logistic regression over hashed unigram
//! and bigram features. Runs the full pipeline at desk scale with no
//! accelerator or paid API; the encoder backend is configuration-compatible.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::example_builder::AnnotationExample;

use super::{ClassifierError, TrainedModel, TrainingConfig};

const FEATURE_BITS: u32 = 16;
const FEATURE_DIM: usize = 1 << FEATURE_BITS;
const L2: f64 = 1e-4;
const WEIGHTS_FILE: &str = "weights.bin";

/// Stable FNV-1a; std's hasher is randomly keyed per process, which would
/// break run-to-run determinism of saved models.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn field_features(text: &str, tag: &str, out: &mut Vec<usize>) {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    out.reserve(tokens.len() * 2);
    for t in &tokens {
        let key = format!("{tag}|{t}");
        out.push((fnv1a(key.as_bytes()) as usize) & (FEATURE_DIM - 1));
    }
    for pair in tokens.windows(2) {
        let key = format!("{tag}|{} {}", pair[0], pair[1]);
        out.push((fnv1a(key.as_bytes()) as usize) & (FEATURE_DIM - 1));
    }
}

/// Hashed unigrams and bigrams, tagged by field so a phrase in the prior
/// context never collides with the same phrase in the target segment.
fn features(example: &AnnotationExample) -> Vec<usize> {
    let mut out = Vec::new();
    field_features(&example.target_text, "t", &mut out);
    if let Some(prior) = &example.prior_text {
        field_features(prior, "c", &mut out);
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Clone)]
pub struct LinearBaseline {
    weights: Vec<f64>,
    bias: f64,
}

impl LinearBaseline {
    /// SGD logistic regression with L2 regularization. Example order is
    /// shuffled each epoch from the config seed, so identical
    /// (data, seed, config) always yields identical weights.
    pub fn train(examples: &[(AnnotationExample, bool)], config: &TrainingConfig) -> LinearBaseline {
        let featurized: Vec<(Vec<usize>, f64)> = examples
            .iter()
            .map(|(e, y)| (features(e), if *y { 1.0 } else { 0.0 }))
            .collect();
        let mut weights = vec![0.0_f64; FEATURE_DIM];
        let mut bias = 0.0_f64;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..featurized.len()).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            // 1/(1+epoch) decay keeps late epochs from thrashing.
            let lr = config.learning_rate / (1.0 + epoch as f64);
            for &i in &order {
                let (feats, y) = &featurized[i];
                let z: f64 = bias + feats.iter().map(|&f| weights[f]).sum::<f64>();
                let grad = sigmoid(z) - y;
                bias -= lr * grad;
                for &f in feats {
                    weights[f] -= lr * (grad + L2 * weights[f]);
                }
            }
        }
        LinearBaseline { weights, bias }
    }

    pub fn load(path: &Path) -> Result<LinearBaseline, ClassifierError> {
        let bytes = fs::read(path)?;
        if bytes.len() != (FEATURE_DIM + 1) * 8 {
            return Err(ClassifierError::Artifact(format!(
                "weights file {} has unexpected size {}",
                path.display(),
                bytes.len()
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let bias = values.next().unwrap();
        Ok(LinearBaseline {
            weights: values.collect(),
            bias,
        })
    }
}

impl TrainedModel for LinearBaseline {
    fn predict_probability(&self, example: &AnnotationExample) -> Result<f64, ClassifierError> {
        let feats = features(example);
        let z: f64 = self.bias + feats.iter().map(|&f| self.weights[f]).sum::<f64>();
        Ok(sigmoid(z))
    }

    fn save(&self, dir: &Path) -> Result<String, ClassifierError> {
        let mut bytes = Vec::with_capacity((FEATURE_DIM + 1) * 8);
        bytes.extend_from_slice(&self.bias.to_le_bytes());
        for w in &self.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        fs::write(dir.join(WEIGHTS_FILE), bytes)?;
        Ok(WEIGHTS_FILE.to_string())
    }
}
