//! Deterministic rule-table judge: the offline, reproducible stand-in for an
//! LLM scorer. First matching rule wins; unmatched pairs score the default.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{ContributionScore, Judge};
use crate::conversation::Message;
use crate::extraction::TaskInstruction;
use crate::judge::JudgeError;

/// One scoring rule. Patterns are case-insensitive substring matchers; an
/// empty pattern matches everything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRule {
    pub instruction_pattern: String,
    pub task_pattern: String,
    pub score: f64,
}

/// Ordered rule table; order is significant because the first match wins.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleRuleTable {
    pub rules: Vec<OracleRule>,
    #[serde(default)]
    pub default_score: f64,
}

impl OracleRuleTable {
    pub fn new(rules: Vec<OracleRule>, default_score: f64) -> Self {
        OracleRuleTable {
            rules,
            default_score,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn from_file(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Index of the first rule matching the pair, if any.
    pub fn first_match(&self, instruction_text: &str, task_text: &str) -> Option<usize> {
        self.rules.iter().position(|r| {
            contains_ci(instruction_text, &r.instruction_pattern)
                && contains_ci(task_text, &r.task_pattern)
        })
    }
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return true;
    }
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// First-match rule score, else the table default. Fully deterministic.
pub fn oracle_score(
    instruction: &TaskInstruction,
    user_task: &TaskInstruction,
    table: &OracleRuleTable,
) -> ContributionScore {
    match table.first_match(&instruction.text, &user_task.text) {
        Some(i) => ContributionScore::new(
            table.rules[i].score,
            Some(format!(
                "rule {i}: instruction~{:?} task~{:?}",
                table.rules[i].instruction_pattern, table.rules[i].task_pattern
            )),
        ),
        None => ContributionScore::new(table.default_score, None),
    }
}

/// [`Judge`] implementation over a rule table. History is ignored; the table
/// alone decides, which is what makes runs replayable.
#[derive(Clone, Debug, Default)]
pub struct OracleJudge {
    table: OracleRuleTable,
}

impl OracleJudge {
    pub fn new(table: OracleRuleTable) -> Self {
        OracleJudge { table }
    }

    pub fn from_file(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(OracleJudge::new(OracleRuleTable::from_file(path)?))
    }

    pub fn table(&self) -> &OracleRuleTable {
        &self.table
    }
}

impl Judge for OracleJudge {
    fn score(
        &self,
        instruction: &TaskInstruction,
        user_task: &TaskInstruction,
        _history: &[Message],
    ) -> Result<ContributionScore, JudgeError> {
        Ok(oracle_score(instruction, user_task, &self.table))
    }
}
