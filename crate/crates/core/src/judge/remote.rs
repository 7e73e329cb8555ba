//! Remote judge over the messages-based chat-completion wire protocol.
//! Every outbound request pins temperature to 0.0; transient failures retry
//! with capped exponential backoff, credential rejections do not.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::alignment::{ContributionScore, Judge};
use crate::conversation::Message;
use crate::extraction::{
    parse_directive_lines, ExtractionResult, Extractor, InstructionKind, TaskInstruction,
};
use crate::judge::{
    context_digest, parse_score_response, render_history, JudgeError, JudgeRequest, PromptKind,
};
use crate::template::Template;

pub const DEFAULT_API_KEY_ENV: &str = "SHIELD_JUDGE_API_KEY";

const DEFAULT_EXTRACTION_PROMPT: &str = include_str!("../templates/extraction_prompt.txt");
const DEFAULT_SCORING_PROMPT: &str = include_str!("../templates/scoring_prompt.txt");

#[derive(Clone, Debug)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Credentials are
    /// never read from config files so fixtures stay shareable.
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: Vec<WireMessage<'a>>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

/// Counting gate bounding concurrent outbound requests.
struct InFlightGate {
    state: Mutex<usize>,
    cv: Condvar,
    max: usize,
}

impl InFlightGate {
    fn new(max: usize) -> Self {
        InFlightGate {
            state: Mutex::new(0),
            cv: Condvar::new(),
            max: max.max(1),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut inflight = self.state.lock().expect("gate lock");
        while *inflight >= self.max {
            inflight = self.cv.wait(inflight).expect("gate lock");
        }
        *inflight += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a InFlightGate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut inflight = self.gate.state.lock().expect("gate lock");
        *inflight -= 1;
        self.gate.cv.notify_one();
    }
}

/// Shared low-level client for judge-backed extraction and scoring.
pub struct RemoteBackend {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

impl RemoteBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, JudgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| JudgeError::Unavailable {
                reason: format!("client build failed: {e}"),
            })?;
        let gate = InFlightGate::new(config.max_in_flight);
        Ok(RemoteBackend {
            config,
            client,
            gate,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn api_key(&self) -> Result<String, JudgeError> {
        std::env::var(&self.config.api_key_env).map_err(|_| JudgeError::Auth {
            detail: format!(
                "environment variable {} is not set",
                self.config.api_key_env
            ),
        })
    }

    /// Sends the rendered prompt and returns the raw model text. Retries
    /// transient failures up to the configured budget with jittered backoff.
    pub fn complete(&self, request: &JudgeRequest) -> Result<String, JudgeError> {
        let key = self.api_key()?;
        let _slot = self.gate.acquire();
        let body = WireRequest {
            model: &self.config.model,
            temperature: 0.0,
            messages: vec![WireMessage {
                role: "user",
                content: &request.rendered_prompt,
            }],
        };

        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(backoff_delay(attempt));
            }
            let sent = self
                .client
                .post(&self.config.url)
                .bearer_auth(&key)
                .json(&body)
                .send();
            match sent {
                Err(e) => {
                    last_error = format!("transport error: {e}");
                    continue;
                }
                Ok(resp) => {
                    let status = resp.status();
                    if status.as_u16() == 401 || status.as_u16() == 403 {
                        return Err(JudgeError::Auth {
                            detail: format!("endpoint rejected credentials with {status}"),
                        });
                    }
                    if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408
                    {
                        last_error = format!("retryable status {status}");
                        continue;
                    }
                    if !status.is_success() {
                        return Err(JudgeError::Unavailable {
                            reason: format!("endpoint returned {status}"),
                        });
                    }
                    let parsed: WireResponse =
                        resp.json().map_err(|e| JudgeError::MalformedOutput {
                            detail: format!("response body is not valid completion JSON: {e}"),
                        })?;
                    return parsed
                        .choices
                        .first()
                        .and_then(|c| c.message.content.clone())
                        .ok_or_else(|| JudgeError::MalformedOutput {
                            detail: "completion has no choices/content".to_string(),
                        });
                }
            }
        }
        Err(JudgeError::Unavailable {
            reason: format!(
                "gave up after {} attempts; last error: {last_error}",
                self.config.max_retries + 1
            ),
        })
    }
}

fn backoff_delay(attempt: u32) -> Duration {
    let base = 250u64.saturating_mul(1 << attempt.min(6));
    let jitter = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos() as u64 % 100)
        .unwrap_or(0);
    Duration::from_millis(base + jitter)
}

/// Judge scoring through the remote backend and the strict `SCORE:` protocol.
pub struct RemoteJudge {
    backend: Arc<RemoteBackend>,
    scoring_prompt: Template,
}

impl RemoteJudge {
    pub fn new(backend: Arc<RemoteBackend>) -> Self {
        RemoteJudge {
            backend,
            scoring_prompt: Template::new(DEFAULT_SCORING_PROMPT),
        }
    }

    pub fn with_prompt(backend: Arc<RemoteBackend>, scoring_prompt: Template) -> Self {
        RemoteJudge {
            backend,
            scoring_prompt,
        }
    }
}

impl Judge for RemoteJudge {
    fn score(
        &self,
        instruction: &TaskInstruction,
        user_task: &TaskInstruction,
        history: &[Message],
    ) -> Result<ContributionScore, JudgeError> {
        let prompt = self.scoring_prompt.render(&[
            ("instruction", &instruction.text),
            ("user_task", &user_task.text),
            ("history", &render_history(history)),
        ]);
        let request = JudgeRequest::new(PromptKind::Score, prompt, context_digest(history));
        let raw = self.backend.complete(&request)?;
        let value = parse_score_response(&raw)?;
        Ok(ContributionScore::new(value, None))
    }
}

/// Extractor backed by the remote judge and the `- ` line protocol.
pub struct RemoteExtractor {
    backend: Arc<RemoteBackend>,
    extraction_prompt: Template,
}

impl RemoteExtractor {
    pub fn new(backend: Arc<RemoteBackend>) -> Self {
        RemoteExtractor {
            backend,
            extraction_prompt: Template::new(DEFAULT_EXTRACTION_PROMPT),
        }
    }

    pub fn with_prompt(backend: Arc<RemoteBackend>, extraction_prompt: Template) -> Self {
        RemoteExtractor {
            backend,
            extraction_prompt,
        }
    }
}

impl Extractor for RemoteExtractor {
    fn extract(&self, msg: &Message, history: &[Message]) -> Result<ExtractionResult, JudgeError> {
        let prompt = self.extraction_prompt.render(&[
            ("message_content", &msg.content),
            ("history", &render_history(history)),
            ("source_level", &msg.level.to_string()),
        ]);
        let request = JudgeRequest::new(PromptKind::Extract, prompt, context_digest(history));
        let raw = self.backend.complete(&request)?;
        let lines = parse_directive_lines(&raw)?;
        let instructions = lines
            .into_iter()
            .enumerate()
            .map(|(i, text)| {
                TaskInstruction::new(
                    format!("m{}-i{}", msg.message_id, i),
                    text,
                    msg.level,
                    msg.message_id,
                    InstructionKind::Explicit,
                )
            })
            .collect();
        Ok(ExtractionResult {
            instructions,
            raw_judge_output: raw,
        })
    }
}
