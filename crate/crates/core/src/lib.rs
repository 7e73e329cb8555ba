//! Task-alignment enforcement for tool-calling conversational agents.
//!
//! Every actionable instruction the assistant or its tools produce is scored
//! against the user's stated objectives; instructions that contribute to
//! none of them are flagged, their tool calls are blocked, and corrective
//! feedback is fed back into the conversation.

pub mod alignment;
pub mod conversation;
pub mod extraction;
pub mod feedback;
pub mod judge;
pub mod shield;
pub mod template;

pub use alignment::{
    check_alignment, contributes_to, total_score, AlignmentEntry, AlignmentError, AlignmentReport,
    ContributionScore, Judge, UserTaskSet,
};
pub use conversation::{
    messages_at_level, parse_transcript, truncate_for_judge, write_transcript, CallId,
    Conversation, ConversationError, Message, PrivilegeLevel, ToolCall,
};
pub use extraction::{
    augment_tool_origin, derive_call_instructions, extract_instructions, pattern_extract,
    ExtractionError, ExtractionResult, Extractor, InstructionKind, PatternExtractor,
    TaskInstruction,
};
pub use feedback::{
    annotate_tool_output, generate_feedback, render_for_level, Feedback, FeedbackError,
    FeedbackPlacement, FeedbackTemplate, FEEDBACK_DELIMITER,
};
pub use judge::{
    cached, CachedJudge, EndpointConfig, FailingExtractor, FailingJudge, JudgeError, JudgeRequest,
    OracleJudge, OracleRule, OracleRuleTable, PromptKind, RemoteBackend, RemoteExtractor,
    RemoteJudge,
};
pub use shield::{
    AgentPolicy, AgentProposal, AuditRecord, FailMode, Shield, ShieldAction, ShieldConfig,
    ShieldDecision, ShieldError, ShieldState, ToolExecutor, TurnOutcome,
};
pub use template::Template;
