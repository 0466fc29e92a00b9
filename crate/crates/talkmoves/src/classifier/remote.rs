//! Client for a remote completion-model fine-tuning service.
//!
//! The wire contract: upload a line-delimited prompt/completion dataset,
//! launch a fine-tune job, poll it to completion, then score prompts through
//! the completions endpoint. Credentials come from the `TALKMOVES_API_KEY`
//! environment variable; `TALKMOVES_API_BASE` overrides the base URL so tests
//! can point the client at a local mock server.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::example_builder::AnnotationExample;

use super::{remote_finetune_format, ClassifierError, TrainedModel, TrainingConfig};

pub const API_KEY_ENV: &str = "TALKMOVES_API_KEY";
pub const API_BASE_ENV: &str = "TALKMOVES_API_BASE";
const DEFAULT_BASE: &str = "https://api.finetune.invalid/v1";

#[derive(Debug, Clone)]
pub struct RemoteClient {
    base_url: String,
    api_key: String,
    pub poll_interval: Duration,
    pub poll_deadline: Duration,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct FineTuneRequest<'a> {
    training_file: &'a str,
    n_epochs: u32,
}

#[derive(Deserialize)]
struct IdResponse {
    id: String,
}

#[derive(Deserialize)]
struct JobStatus {
    status: String,
    #[serde(default)]
    fine_tuned_model: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    logprobs: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    token_logprobs: Vec<f64>,
}

impl RemoteClient {
    /// Build a client from the environment. Fails with an auth error, before
    /// anything is uploaded, when no API key is configured.
    pub fn from_env() -> Result<RemoteClient, ClassifierError> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ClassifierError::Auth(API_KEY_ENV.to_string()))?;
        let base_url =
            std::env::var(API_BASE_ENV).unwrap_or_else(|_| DEFAULT_BASE.to_string());
        Ok(RemoteClient::new(base_url, api_key))
    }

    pub fn new(base_url: String, api_key: String) -> RemoteClient {
        RemoteClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            poll_interval: Duration::from_millis(200),
            poll_deadline: Duration::from_secs(3600),
            http: reqwest::blocking::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn check(
        &self,
        resp: reqwest::blocking::Response,
    ) -> Result<reqwest::blocking::Response, ClassifierError> {
        if resp.status() == reqwest::StatusCode::UNAUTHORIZED {
            return Err(ClassifierError::Auth(API_KEY_ENV.to_string()));
        }
        if !resp.status().is_success() {
            let status = resp.status();
            let body = resp.text().unwrap_or_default();
            return Err(ClassifierError::Backend(format!(
                "remote returned {status}: {body}"
            )));
        }
        Ok(resp)
    }

    /// Upload a formatted dataset as line-delimited JSON; returns the file id.
    pub fn upload_dataset(&self, pairs: &[(String, String)]) -> Result<String, ClassifierError> {
        let mut body = Vec::new();
        for (prompt, completion) in pairs {
            serde_json::to_writer(
                &mut body,
                &serde_json::json!({ "prompt": prompt, "completion": completion }),
            )
            .map_err(|e| ClassifierError::Backend(e.to_string()))?;
            body.write_all(b"\n")?;
        }
        let resp = self
            .http
            .post(self.url("/files"))
            .bearer_auth(&self.api_key)
            .header("content-type", "application/jsonl")
            .body(body)
            .send()
            .map_err(|e| ClassifierError::Backend(e.to_string()))?;
        let parsed: IdResponse = self
            .check(resp)?
            .json()
            .map_err(|e| ClassifierError::Backend(e.to_string()))?;
        Ok(parsed.id)
    }

    /// Launch a fine-tune over an uploaded file and poll it to completion.
    pub fn fine_tune(&self, training_file: &str, epochs: u32) -> Result<String, ClassifierError> {
        let resp = self
            .http
            .post(self.url("/fine-tunes"))
            .bearer_auth(&self.api_key)
            .json(&FineTuneRequest {
                training_file,
                n_epochs: epochs,
            })
            .send()
            .map_err(|e| ClassifierError::Backend(e.to_string()))?;
        let job: IdResponse = self
            .check(resp)?
            .json()
            .map_err(|e| ClassifierError::Backend(e.to_string()))?;

        let start = Instant::now();
        loop {
            let resp = self
                .http
                .get(self.url(&format!("/fine-tunes/{}", job.id)))
                .bearer_auth(&self.api_key)
                .send()
                .map_err(|e| ClassifierError::Backend(e.to_string()))?;
            let status: JobStatus = self
                .check(resp)?
                .json()
                .map_err(|e| ClassifierError::Backend(e.to_string()))?;
            match status.status.as_str() {
                "succeeded" => {
                    return status.fine_tuned_model.ok_or_else(|| {
                        ClassifierError::RemoteJobFailed(
                            "job succeeded but returned no model id".into(),
                        )
                    })
                }
                "failed" => {
                    return Err(ClassifierError::RemoteJobFailed(
                        status.error.unwrap_or_else(|| "no diagnostic".into()),
                    ))
                }
                _ => {
                    if start.elapsed() > self.poll_deadline {
                        return Err(ClassifierError::Timeout(self.poll_deadline));
                    }
                    std::thread::sleep(self.poll_interval);
                }
            }
        }
    }

    /// Score one prompt: probability that the fine-tuned model answers the
    /// positive class token. The completion's first-token logprob is mapped
    /// to `[0,1]` (`exp(logprob)` for " yes", its complement for anything
    /// else).
    pub fn predict(&self, model_id: &str, prompt: &str) -> Result<f64, ClassifierError> {
        let resp = self
            .http
            .post(self.url("/completions"))
            .bearer_auth(&self.api_key)
            .json(&CompletionRequest {
                model: model_id,
                prompt,
                max_tokens: 1,
                logprobs: 1,
            })
            .send()
            .map_err(|e| ClassifierError::Backend(e.to_string()))?;
        let parsed: CompletionResponse = self
            .check(resp)?
            .json()
            .map_err(|e| ClassifierError::Backend(e.to_string()))?;
        let choice = parsed
            .choices
            .first()
            .ok_or_else(|| ClassifierError::Backend("empty completion choices".into()))?;
        let token_prob = choice
            .logprobs
            .as_ref()
            .and_then(|l| l.token_logprobs.first())
            .map(|lp| lp.exp().clamp(0.0, 1.0))
            .unwrap_or(1.0);
        let positive = choice.text.trim().eq_ignore_ascii_case("yes");
        Ok(if positive { token_prob } else { 1.0 - token_prob })
    }
}

/// Handle onto a fine-tuned remote model.
pub struct RemoteModel {
    pub model_id: String,
    client: RemoteClient,
}

impl RemoteModel {
    /// Rebuild a handle for an already-trained remote model id.
    pub fn reattach(model_id: String) -> Result<RemoteModel, ClassifierError> {
        Ok(RemoteModel {
            model_id,
            client: RemoteClient::from_env()?,
        })
    }
}

impl TrainedModel for RemoteModel {
    fn predict_probability(&self, example: &AnnotationExample) -> Result<f64, ClassifierError> {
        // Gold flag is irrelevant here; only the prompt half is used.
        let (prompt, _) = remote_finetune_format(example, false);
        self.client.predict(&self.model_id, &prompt)
    }

    fn save(&self, dir: &std::path::Path) -> Result<String, ClassifierError> {
        std::fs::write(dir.join("remote_model_id.txt"), &self.model_id)?;
        Ok("remote_model_id.txt".to_string())
    }
}

/// Format a labeled dataset, upload it, run the fine-tune, and return a
/// model handle wrapping the remote id.
pub fn remote_backend_client(
    client: &RemoteClient,
    examples: &[(AnnotationExample, bool)],
    training: &TrainingConfig,
) -> Result<RemoteModel, ClassifierError> {
    let pairs: Vec<(String, String)> = examples
        .iter()
        .map(|(e, y)| remote_finetune_format(e, *y))
        .collect();
    let file_id = client.upload_dataset(&pairs)?;
    let model_id = client.fine_tune(&file_id, training.epochs)?;
    Ok(RemoteModel {
        model_id,
        client: client.clone(),
    })
}
