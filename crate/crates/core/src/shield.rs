//! Per-message processing state machine: user messages grow the user task
//! set, assistant content and tool calls are gated behind the alignment
//! check with a bounded critic loop, and tool outputs carrying misaligned
//! directives are delivered with corrective feedback appended.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{
    check_alignment, AlignmentEntry, AlignmentReport, ContributionScore, Judge, UserTaskSet,
};
use crate::conversation::{
    messages_at_level, truncate_for_judge, CallId, Conversation, ConversationError, Message,
    PrivilegeLevel, ToolCall,
};
use crate::extraction::{
    augment_tool_origin, derive_call_instructions, Extractor, InstructionKind, TaskInstruction,
};
use crate::feedback::{
    annotate_tool_output, generate_feedback, render_for_level, unverified_content_feedback,
    Feedback, FeedbackPlacement, FeedbackTemplate, FEEDBACK_DELIMITER,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailMode {
    /// Judge failure blocks tool calls and annotates tool outputs.
    FailClosed,
    /// Judge failure passes content through with a logged warning.
    FailOpen,
}

#[derive(Clone, Debug)]
pub struct ShieldConfig {
    /// Misalignment threshold: flagged when total contribution ≤ epsilon.
    pub epsilon: f64,
    /// Critic-loop bound per user turn.
    pub max_retry_rounds: usize,
    /// Message budget for the history passed to extractor and judge.
    pub judge_history_budget: usize,
    pub fail_mode: FailMode,
    /// Agent steps allowed per user turn (feedback counts as a step).
    pub step_budget: usize,
    /// Deliver a final answer that stayed misaligned after all retries with a
    /// warning appended; when false the answer is withheld instead.
    pub deliver_final_with_warning: bool,
    pub feedback_template: FeedbackTemplate,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        ShieldConfig {
            epsilon: 0.0,
            max_retry_rounds: 3,
            judge_history_budget: 40,
            fail_mode: FailMode::FailClosed,
            step_budget: 20,
            deliver_final_with_warning: true,
            feedback_template: FeedbackTemplate::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShieldAction {
    Pass,
    RetryWithFeedback,
    BlockToolCalls,
    AnnotateOutput,
}

/// What the shield decided for one processed message.
#[derive(Clone, Debug)]
pub struct ShieldDecision {
    pub action: ShieldAction,
    pub feedback: Option<Feedback>,
    pub allowed_tool_calls: Vec<ToolCall>,
    pub report: AlignmentReport,
}

/// One line of the decision audit log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditRecord {
    pub message_id: u64,
    pub action: ShieldAction,
    pub misaligned_instructions: Vec<String>,
    pub totals: Vec<f64>,
    pub epsilon: f64,
    pub retry_round: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Conversation-scoped shield state. One pipeline owns it at a time.
#[derive(Debug)]
pub struct ShieldState {
    tu: UserTaskSet,
    conversation: Conversation,
    config: ShieldConfig,
    retry_counter: usize,
    audit: Vec<AuditRecord>,
}

impl ShieldState {
    pub fn new(config: ShieldConfig) -> Self {
        ShieldState {
            tu: UserTaskSet::new(),
            conversation: Conversation::new(),
            config,
            retry_counter: 0,
            audit: Vec::new(),
        }
    }

    pub fn tu(&self) -> &UserTaskSet {
        &self.tu
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conversation
    }

    pub fn config(&self) -> &ShieldConfig {
        &self.config
    }

    pub fn retry_counter(&self) -> usize {
        self.retry_counter
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    fn judge_view(&self) -> &[Message] {
        truncate_for_judge(self.conversation.view(), self.config.judge_history_budget)
    }
}

#[derive(Debug, Error)]
pub enum ShieldError {
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error("message is {got} level, expected {expected}")]
    WrongLevel {
        expected: PrivilegeLevel,
        got: PrivilegeLevel,
    },
    #[error("tool output responds to unknown call `{0}`")]
    UnknownCall(CallId),
    #[error("no pending user message in the conversation")]
    NoPendingUser,
    #[error("step budget exceeded after {steps} agent steps")]
    StepBudgetExceeded { steps: usize },
}

/// Agent-side proposal for the next assistant message.
#[derive(Clone, Debug, Default)]
pub struct AgentProposal {
    pub content: String,
    pub tool_calls: Vec<ToolCall>,
}

/// The policy being shielded. Implementations see the full conversation view
/// (including any feedback the shield injected) and propose the next message.
pub trait AgentPolicy {
    fn step(&mut self, view: &[Message], tools: &dyn ToolExecutor) -> AgentProposal;
}

/// Executes allowed tool calls. Execution failures are returned as output
/// text, the way tool errors surface to real agents.
pub trait ToolExecutor {
    fn execute(&mut self, call: &ToolCall) -> String;
    fn available_tools(&self) -> Vec<String>;
}

/// Everything one user turn produced.
#[derive(Clone, Debug)]
pub struct TurnOutcome {
    pub final_answer: String,
    pub steps: usize,
    pub retries: usize,
    /// Tool calls excluded from execution this turn.
    pub blocked_calls: usize,
    pub blocked_call_ids: Vec<CallId>,
    /// Tool outputs delivered with feedback appended.
    pub annotations: usize,
    pub executed_call_ids: Vec<CallId>,
    /// Index into the conversation where this turn's messages start.
    pub segment_start: usize,
}

/// The task shield itself: stateless over an extractor and a judge, driving
/// a [`ShieldState`] per conversation.
pub struct Shield<'a> {
    extractor: &'a dyn Extractor,
    judge: &'a dyn Judge,
}

impl<'a> Shield<'a> {
    pub fn new(extractor: &'a dyn Extractor, judge: &'a dyn Judge) -> Self {
        Shield { extractor, judge }
    }

    /// User messages update the task set and always pass; user input is
    /// never blocked, even when extraction fails.
    pub fn process_user(
        &self,
        state: &mut ShieldState,
        msg: Message,
    ) -> Result<ShieldDecision, ShieldError> {
        if msg.level != PrivilegeLevel::User {
            return Err(ShieldError::WrongLevel {
                expected: PrivilegeLevel::User,
                got: msg.level,
            });
        }
        let mut stamped = msg;
        stamped.message_id = state.conversation.next_seq();

        let mut note = None;
        match self.extractor.extract(&stamped, state.judge_view()) {
            Ok(result) => {
                for instr in result.instructions {
                    // Extractor output is stamped with the user level; a
                    // misbehaving extractor must not poison T_u.
                    if instr.source_level == PrivilegeLevel::User {
                        state.tu.push(instr).expect("user-level task");
                    }
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "user instruction extraction failed; passing input through");
                note = Some(format!("extraction failed, user input passed through: {e}"));
            }
        }

        let id = state.conversation.append(stamped)?;
        let report = AlignmentReport::empty(state.config.epsilon, state.tu.revision());
        state.audit.push(AuditRecord {
            message_id: id,
            action: ShieldAction::Pass,
            misaligned_instructions: Vec::new(),
            totals: Vec::new(),
            epsilon: state.config.epsilon,
            retry_round: state.retry_counter,
            note,
        });
        Ok(ShieldDecision {
            action: ShieldAction::Pass,
            feedback: None,
            allowed_tool_calls: Vec::new(),
            report,
        })
    }

    /// Gates an assistant proposal: content instructions drive the critic
    /// loop, misaligned tool calls are excluded from execution outright.
    /// The proposal is not appended; [`Shield::run_turn`] owns that.
    pub fn process_assistant(&self, state: &mut ShieldState, msg: &Message) -> ShieldDecision {
        debug_assert_eq!(msg.level, PrivilegeLevel::Assistant);
        let mut stamped = msg.clone();
        stamped.message_id = state.conversation.next_seq();

        let call_instrs = derive_call_instructions(&stamped);
        let content_result = if stamped.content.is_empty() {
            Ok(Vec::new())
        } else {
            self.extractor
                .extract(&stamped, state.judge_view())
                .map(|r| r.instructions)
        };

        let decision = match content_result {
            Err(e) => self.assistant_failure(state, &stamped, &call_instrs, &e.to_string()),
            Ok(content_instrs) => {
                let mut instrs = content_instrs;
                instrs.extend(call_instrs.iter().cloned());
                match check_alignment(
                    &instrs,
                    &state.tu,
                    state.judge_view(),
                    self.judge,
                    state.config.epsilon,
                ) {
                    Err(e) => self.assistant_failure(state, &stamped, &instrs, &e.to_string()),
                    Ok(report) => self.decide_assistant(state, &stamped, report),
                }
            }
        };
        self.audit_decision(state, stamped.message_id, &decision, None);
        decision
    }

    fn decide_assistant(
        &self,
        state: &mut ShieldState,
        msg: &Message,
        report: AlignmentReport,
    ) -> ShieldDecision {
        if !report.any_misaligned() {
            return ShieldDecision {
                action: ShieldAction::Pass,
                feedback: None,
                allowed_tool_calls: msg.tool_calls.clone(),
                report,
            };
        }

        let content_misaligned = report
            .entries
            .iter()
            .any(|e| e.misaligned && e.instruction.kind != InstructionKind::ToolCallDerived);

        let feedback = generate_feedback(&report, &state.tu, &state.config.feedback_template)
            .expect("report has misaligned entries");

        if content_misaligned && state.retry_counter < state.config.max_retry_rounds {
            state.retry_counter += 1;
            return ShieldDecision {
                action: ShieldAction::RetryWithFeedback,
                feedback: Some(feedback),
                allowed_tool_calls: Vec::new(),
                report,
            };
        }

        // Retries exhausted, or only tool-call instructions are misaligned:
        // execute the aligned calls, never the flagged ones.
        let call_entries: Vec<&AlignmentEntry> = report
            .entries
            .iter()
            .filter(|e| e.instruction.kind == InstructionKind::ToolCallDerived)
            .collect();
        debug_assert_eq!(call_entries.len(), msg.tool_calls.len());
        let allowed = msg
            .tool_calls
            .iter()
            .zip(call_entries.iter())
            .filter(|(_, entry)| !entry.misaligned)
            .map(|(call, _)| call.clone())
            .collect();

        ShieldDecision {
            action: ShieldAction::BlockToolCalls,
            feedback: Some(feedback),
            allowed_tool_calls: allowed,
            report,
        }
    }

    fn assistant_failure(
        &self,
        state: &mut ShieldState,
        msg: &Message,
        instrs: &[TaskInstruction],
        why: &str,
    ) -> ShieldDecision {
        match state.config.fail_mode {
            FailMode::FailOpen => {
                tracing::warn!(why, "judge failure; fail-open passes assistant message");
                ShieldDecision {
                    action: ShieldAction::Pass,
                    feedback: None,
                    allowed_tool_calls: msg.tool_calls.clone(),
                    report: AlignmentReport::empty(state.config.epsilon, state.tu.revision()),
                }
            }
            FailMode::FailClosed => {
                let report = synthetic_failure_report(
                    instrs,
                    &state.tu,
                    state.config.epsilon,
                    why,
                );
                let feedback = unverified_content_feedback(
                    &format!("assistant message {}", msg.message_id),
                    &state.tu,
                    &state.config.feedback_template,
                );
                ShieldDecision {
                    action: ShieldAction::BlockToolCalls,
                    feedback: Some(feedback),
                    allowed_tool_calls: Vec::new(),
                    report,
                }
            }
        }
    }

    /// Checks a raw tool output and returns the message to deliver: untouched
    /// when aligned or instruction-free, otherwise the original output with
    /// feedback appended after a delimiter.
    pub fn process_tool_output(
        &self,
        state: &mut ShieldState,
        msg: Message,
    ) -> Result<(Message, ShieldDecision), ShieldError> {
        if msg.level != PrivilegeLevel::Tool {
            return Err(ShieldError::WrongLevel {
                expected: PrivilegeLevel::Tool,
                got: msg.level,
            });
        }
        let call_id = msg
            .responding_to
            .clone()
            .ok_or(ShieldError::UnknownCall(CallId::from("")))?;
        let call = state
            .conversation
            .find_call(&call_id)
            .map(|(_, c)| c.clone())
            .ok_or_else(|| ShieldError::UnknownCall(call_id.clone()))?;

        let mut stamped = msg;
        stamped.message_id = state.conversation.next_seq();

        let outcome = match self.extractor.extract(&stamped, state.judge_view()) {
            Err(e) => Err(e.to_string()),
            Ok(result) => {
                let augmented: Vec<TaskInstruction> = result
                    .instructions
                    .iter()
                    .map(|i| augment_tool_origin(i, &call).expect("fresh tool instruction"))
                    .collect();
                check_alignment(
                    &augmented,
                    &state.tu,
                    state.judge_view(),
                    self.judge,
                    state.config.epsilon,
                )
                .map_err(|e| e.to_string())
                .map(|report| (augmented, report))
            }
        };

        let (delivered, decision) = match outcome {
            Ok((_augmented, report)) => {
                if !report.any_misaligned() {
                    let decision = ShieldDecision {
                        action: ShieldAction::Pass,
                        feedback: None,
                        allowed_tool_calls: Vec::new(),
                        report,
                    };
                    (stamped, decision)
                } else {
                    let feedback =
                        generate_feedback(&report, &state.tu, &state.config.feedback_template)
                            .expect("report has misaligned entries");
                    let mut annotated = stamped;
                    annotated.content = annotate_tool_output(&annotated.content, &feedback);
                    let decision = ShieldDecision {
                        action: ShieldAction::AnnotateOutput,
                        feedback: Some(feedback),
                        allowed_tool_calls: Vec::new(),
                        report,
                    };
                    (annotated, decision)
                }
            }
            Err(why) => match state.config.fail_mode {
                FailMode::FailOpen => {
                    tracing::warn!(why, "judge failure; fail-open passes tool output");
                    let decision = ShieldDecision {
                        action: ShieldAction::Pass,
                        feedback: None,
                        allowed_tool_calls: Vec::new(),
                        report: AlignmentReport::empty(state.config.epsilon, state.tu.revision()),
                    };
                    (stamped, decision)
                }
                FailMode::FailClosed => {
                    let feedback = unverified_content_feedback(
                        &format!("output of tool [{}] (call {})", call.function_name, call_id),
                        &state.tu,
                        &state.config.feedback_template,
                    );
                    let mut annotated = stamped;
                    annotated.content = annotate_tool_output(&annotated.content, &feedback);
                    let decision = ShieldDecision {
                        action: ShieldAction::AnnotateOutput,
                        feedback: Some(feedback),
                        allowed_tool_calls: Vec::new(),
                        report: AlignmentReport::empty(state.config.epsilon, state.tu.revision()),
                    };
                    (annotated, decision)
                }
            },
        };
        self.audit_decision(state, delivered.message_id, &decision, None);
        Ok((delivered, decision))
    }

    fn audit_decision(
        &self,
        state: &mut ShieldState,
        message_id: u64,
        decision: &ShieldDecision,
        note: Option<String>,
    ) {
        state.audit.push(AuditRecord {
            message_id,
            action: decision.action,
            misaligned_instructions: decision
                .report
                .misaligned_entries()
                .map(|e| e.instruction.text.clone())
                .collect(),
            totals: decision.report.entries.iter().map(|e| e.total).collect(),
            epsilon: state.config.epsilon,
            retry_round: state.retry_counter,
            note,
        });
    }

    /// Drives one full user turn: agent proposal → shield gate → (critic
    /// loop) → execution of allowed calls only → tool-output checks → until
    /// the agent emits a final answer or the step budget runs out.
    ///
    /// The pending user message must already be in the conversation (via
    /// [`Shield::process_user`]).
    pub fn run_turn(
        &self,
        state: &mut ShieldState,
        agent: &mut dyn AgentPolicy,
        tools: &mut dyn ToolExecutor,
    ) -> Result<TurnOutcome, ShieldError> {
        if messages_at_level(state.conversation.view(), PrivilegeLevel::User).is_empty() {
            return Err(ShieldError::NoPendingUser);
        }
        state.retry_counter = 0;
        let segment_start = state.conversation.len();
        let mut steps = 0usize;
        let mut outcome = TurnOutcome {
            final_answer: String::new(),
            steps: 0,
            retries: 0,
            blocked_calls: 0,
            blocked_call_ids: Vec::new(),
            annotations: 0,
            executed_call_ids: Vec::new(),
            segment_start,
        };

        loop {
            if steps >= state.config.step_budget {
                return Err(ShieldError::StepBudgetExceeded { steps });
            }
            let proposal = agent.step(state.conversation.view(), &*tools);
            steps += 1;

            let msg = Message::assistant_with_calls(proposal.content, proposal.tool_calls);
            let decision = self.process_assistant(state, &msg);
            let has_calls = !msg.tool_calls.is_empty();
            let all_calls = msg.tool_calls.clone();
            let content = msg.content.clone();
            state.conversation.append(msg)?;

            match decision.action {
                ShieldAction::RetryWithFeedback => {
                    outcome.retries += 1;
                    steps += 1; // feedback consumes an agent step
                    let feedback = decision.feedback.expect("retry carries feedback");
                    let critic =
                        render_for_level(&feedback, FeedbackPlacement::AssistantRetry);
                    // Shield-authored: appended directly, never through
                    // process_user, so it cannot grow T_u and never outranks
                    // genuine user instructions.
                    state.conversation.append(Message::user(critic))?;
                    continue;
                }
                ShieldAction::Pass | ShieldAction::BlockToolCalls => {
                    if has_calls {
                        let allowed: Vec<CallId> = decision
                            .allowed_tool_calls
                            .iter()
                            .map(|c| c.call_id.clone())
                            .collect();
                        for call in &all_calls {
                            if allowed.contains(&call.call_id) {
                                let output = tools.execute(call);
                                outcome.executed_call_ids.push(call.call_id.clone());
                                let tool_msg = Message::tool(call.call_id.clone(), output);
                                let (delivered, tool_decision) =
                                    self.process_tool_output(state, tool_msg)?;
                                if tool_decision.action == ShieldAction::AnnotateOutput {
                                    outcome.annotations += 1;
                                }
                                state.conversation.append(delivered)?;
                            } else {
                                outcome.blocked_calls += 1;
                                outcome.blocked_call_ids.push(call.call_id.clone());
                                let notice = blocked_call_notice(call, decision.feedback.as_ref());
                                state.conversation.append(Message::tool(
                                    call.call_id.clone(),
                                    notice,
                                ))?;
                            }
                        }
                        continue;
                    }

                    // Final natural-language answer.
                    let answer = if decision.action == ShieldAction::BlockToolCalls {
                        let feedback = decision.feedback.expect("block carries feedback");
                        if state.config.deliver_final_with_warning {
                            format!("{content}\n{FEEDBACK_DELIMITER}\n{}", feedback.rendered)
                        } else {
                            format!(
                                "Response withheld: it remained misaligned with the user \
objectives after {} revision requests.\n{}",
                                state.config.max_retry_rounds, feedback.rendered
                            )
                        }
                    } else {
                        content
                    };
                    outcome.final_answer = answer;
                    outcome.steps = steps;
                    return Ok(outcome);
                }
                ShieldAction::AnnotateOutput => unreachable!("assistant decisions never annotate"),
            }
        }
    }
}

fn blocked_call_notice(call: &ToolCall, feedback: Option<&Feedback>) -> String {
    let mut notice = format!(
        "Tool call {} ({}) was blocked by the task shield: it does not contribute to any \
current user objective and was not executed.",
        call.call_id, call.function_name
    );
    if let Some(fb) = feedback {
        notice.push('\n');
        notice.push_str(&fb.rendered);
    }
    notice
}

/// Report standing in for scores the judge could not produce: every
/// instruction is treated as contributing nothing, hence misaligned.
fn synthetic_failure_report(
    instrs: &[TaskInstruction],
    tu: &UserTaskSet,
    epsilon: f64,
    why: &str,
) -> AlignmentReport {
    let entries = instrs
        .iter()
        .map(|instruction| AlignmentEntry {
            instruction: instruction.clone(),
            per_task: tu
                .tasks()
                .iter()
                .map(|t| {
                    (
                        t.instruction_id.clone(),
                        ContributionScore::new(0.0, Some(format!("unverified: {why}"))),
                    )
                })
                .collect(),
            total: 0.0,
            misaligned: true,
        })
        .collect();
    AlignmentReport {
        entries,
        epsilon,
        tu_revision: tu.revision(),
    }
}
