//! Fuzzy contribution scoring against the user task set and the misalignment
//! check: an instruction is misaligned when its summed contribution score
//! over all user tasks does not exceed the threshold.

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::conversation::{Message, PrivilegeLevel};
use crate::extraction::TaskInstruction;
use crate::judge::JudgeError;

/// Scores how much one instruction contributes to one user task, in `[0, 1]`.
pub trait Judge: Send + Sync {
    fn score(
        &self,
        instruction: &TaskInstruction,
        user_task: &TaskInstruction,
        history: &[Message],
    ) -> Result<ContributionScore, JudgeError>;
}

/// Accumulated user-level objectives; the alignment targets for everything
/// the assistant and tools produce.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UserTaskSet {
    tasks: Vec<TaskInstruction>,
    revision: u64,
}

impl UserTaskSet {
    pub fn new() -> Self {
        UserTaskSet::default()
    }

    /// Appends a user-level task; insertion order is preserved and the
    /// revision counter bumps on every accepted update.
    pub fn push(&mut self, task: TaskInstruction) -> Result<(), AlignmentError> {
        if task.source_level != PrivilegeLevel::User {
            return Err(AlignmentError::NotUserLevel {
                instruction_id: task.instruction_id,
            });
        }
        self.tasks.push(task);
        self.revision += 1;
        Ok(())
    }

    pub fn tasks(&self) -> &[TaskInstruction] {
        &self.tasks
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// A fuzzy `ContributesTo` value, always within `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContributionScore {
    value: f64,
    rationale: Option<String>,
}

impl ContributionScore {
    /// Clamps into `[0, 1]`; non-finite input collapses to 0.
    pub fn new(raw: f64, rationale: Option<String>) -> Self {
        let value = if raw.is_finite() {
            raw.clamp(0.0, 1.0)
        } else {
            0.0
        };
        ContributionScore { value, rationale }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn rationale(&self) -> Option<&str> {
        self.rationale.as_deref()
    }
}

impl<'de> Deserialize<'de> for ContributionScore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            value: f64,
            #[serde(default)]
            rationale: Option<String>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Ok(ContributionScore::new(raw.value, raw.rationale))
    }
}

/// Per-instruction verdict within an [`AlignmentReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub instruction: TaskInstruction,
    /// `(user task instruction_id, score)`, one entry per task in T_u order.
    pub per_task: Vec<(String, ContributionScore)>,
    pub total: f64,
    pub misaligned: bool,
}

/// Outcome of checking a batch of instructions against the user task set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub entries: Vec<AlignmentEntry>,
    pub epsilon: f64,
    pub tu_revision: u64,
}

impl AlignmentReport {
    pub fn empty(epsilon: f64, tu_revision: u64) -> Self {
        AlignmentReport {
            entries: Vec::new(),
            epsilon,
            tu_revision,
        }
    }

    pub fn any_misaligned(&self) -> bool {
        self.entries.iter().any(|e| e.misaligned)
    }

    pub fn misaligned_entries(&self) -> impl Iterator<Item = &AlignmentEntry> {
        self.entries.iter().filter(|e| e.misaligned)
    }
}

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("task `{instruction_id}` is not user-level and cannot enter the user task set")]
    NotUserLevel { instruction_id: String },
    #[error("epsilon must be a finite non-negative number, got {0}")]
    InvalidEpsilon(f64),
}

/// Fuzzy `ContributesTo(e, t | history)`; the target must be a user task.
pub fn contributes_to(
    instruction: &TaskInstruction,
    user_task: &TaskInstruction,
    history: &[Message],
    judge: &dyn Judge,
) -> Result<ContributionScore, AlignmentError> {
    if user_task.source_level != PrivilegeLevel::User {
        return Err(AlignmentError::NotUserLevel {
            instruction_id: user_task.instruction_id.clone(),
        });
    }
    Ok(judge.score(instruction, user_task, history)?)
}

/// Total contribution score: the sum of `ContributesTo` over every task in
/// the user task set. An empty set sums to 0.
pub fn total_score(
    instruction: &TaskInstruction,
    tu: &UserTaskSet,
    history: &[Message],
    judge: &dyn Judge,
) -> Result<f64, AlignmentError> {
    let mut total = 0.0;
    for task in tu.tasks() {
        total += contributes_to(instruction, task, history, judge)?.value();
    }
    Ok(total)
}

/// Scores every instruction against every user task and flags those whose
/// total does not exceed `epsilon`. Entries keep input order; per-task scores
/// keep T_u order, so the report is deterministic for a deterministic judge.
pub fn check_alignment(
    instructions: &[TaskInstruction],
    tu: &UserTaskSet,
    history: &[Message],
    judge: &dyn Judge,
    epsilon: f64,
) -> Result<AlignmentReport, AlignmentError> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(AlignmentError::InvalidEpsilon(epsilon));
    }
    let mut entries = Vec::with_capacity(instructions.len());
    for instruction in instructions {
        let mut per_task = Vec::with_capacity(tu.len());
        let mut total = 0.0;
        for task in tu.tasks() {
            let score = contributes_to(instruction, task, history, judge)?;
            total += score.value();
            per_task.push((task.instruction_id.clone(), score));
        }
        entries.push(AlignmentEntry {
            instruction: instruction.clone(),
            per_task,
            total,
            misaligned: total <= epsilon,
        });
    }
    Ok(AlignmentReport {
        entries,
        epsilon,
        tu_revision: tu.revision(),
    })
}
