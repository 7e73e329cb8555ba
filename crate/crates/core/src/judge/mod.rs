//! Pluggable judge backends: a deterministic rule-table oracle, a remote
//! chat-completion client, and a caching wrapper. All scoring goes through
//! the [`crate::alignment::Judge`] trait; extraction through
//! [`crate::extraction::Extractor`].

mod cache;
mod oracle;
mod remote;

pub use cache::{cached, CachedJudge};
pub use oracle::{oracle_score, OracleJudge, OracleRule, OracleRuleTable};
pub use remote::{EndpointConfig, RemoteBackend, RemoteExtractor, RemoteJudge};

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment::{ContributionScore, Judge};
use crate::conversation::Message;
use crate::extraction::{ExtractionResult, Extractor, TaskInstruction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("judge unavailable: {reason}")]
    Unavailable { reason: String },
    #[error("malformed judge output: {detail}")]
    MalformedOutput { detail: String },
    #[error("judge authentication failed: {detail}")]
    Auth { detail: String },
}

/// What a judge call is for; part of the cache key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Extract,
    Score,
}

/// A fully rendered request for a judge backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub prompt_kind: PromptKind,
    pub rendered_prompt: String,
    pub context_digest: String,
}

impl JudgeRequest {
    pub fn new(prompt_kind: PromptKind, rendered_prompt: String, context_digest: String) -> Self {
        JudgeRequest {
            prompt_kind,
            rendered_prompt,
            context_digest,
        }
    }
}

/// Stable digest of a (truncated) history view, used for cache keys and
/// request bookkeeping.
pub fn context_digest(view: &[Message]) -> String {
    let mut hasher = Sha256::new();
    for msg in view {
        hasher.update(msg.message_id.to_le_bytes());
        hasher.update([msg.level as u8 as u8]);
        hasher.update(msg.content.as_bytes());
        hasher.update([0u8]);
        for call in &msg.tool_calls {
            hasher.update(call.call_id.as_str().as_bytes());
            hasher.update(call.function_name.as_bytes());
            hasher.update(call.render_arguments().as_bytes());
        }
        if let Some(id) = &msg.responding_to {
            hasher.update(id.as_str().as_bytes());
        }
        hasher.update([0xff]);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Plain-text rendering of a history view for prompt interpolation.
pub fn render_history(view: &[Message]) -> String {
    view.iter()
        .map(|m| {
            let calls = if m.tool_calls.is_empty() {
                String::new()
            } else {
                let rendered: Vec<String> = m
                    .tool_calls
                    .iter()
                    .map(|c| format!("{}({})", c.function_name, c.render_arguments()))
                    .collect();
                format!(" [calls: {}]", rendered.join(", "))
            };
            format!("{}: {}{}", m.level, m.content, calls)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn score_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^SCORE:\s*(-?\d+(?:\.\d+)?)$").expect("static regex"))
}

/// Parses the scoring protocol: the final non-empty line must be exactly
/// `SCORE: <decimal>`. Out-of-range values are the caller's to clamp;
/// anything else is malformed.
pub fn parse_score_response(raw: &str) -> Result<f64, JudgeError> {
    let last = raw
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| JudgeError::MalformedOutput {
            detail: "empty scoring response".to_string(),
        })?;
    let caps = score_line_re()
        .captures(last)
        .ok_or_else(|| JudgeError::MalformedOutput {
            detail: format!("final line is not `SCORE: <decimal>`: {last:?}"),
        })?;
    caps[1].parse::<f64>().map_err(|e| JudgeError::MalformedOutput {
        detail: format!("unparseable score: {e}"),
    })
}

/// Judge that always errors; exercises the fail-closed paths.
#[derive(Clone, Copy, Debug, Default)]
pub struct FailingJudge;

impl Judge for FailingJudge {
    fn score(
        &self,
        _instruction: &TaskInstruction,
        _user_task: &TaskInstruction,
        _history: &[Message],
    ) -> Result<ContributionScore, JudgeError> {
        Err(JudgeError::Unavailable {
            reason: "judge configured to fail".to_string(),
        })
    }
}

/// Extractor that always errors; exercises the fail-closed paths.
#[derive(Clone, Copy, Debug, Default)]
pub struct FailingExtractor;

impl Extractor for FailingExtractor {
    fn extract(&self, _msg: &Message, _history: &[Message]) -> Result<ExtractionResult, JudgeError> {
        Err(JudgeError::Unavailable {
            reason: "extractor configured to fail".to_string(),
        })
    }
}
