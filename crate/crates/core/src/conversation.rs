//! Dialogue data model: privilege levels, tool calls, messages, and the
//! append-only conversation with the history views the rest of the pipeline
//! works on.

use std::fmt;
use std::io::{self, BufRead, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Role-based rank of a message. Precedence is total:
/// `System > User > Assistant > Tool`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivilegeLevel {
    System,
    User,
    Assistant,
    Tool,
}

impl PrivilegeLevel {
    /// All four levels, highest precedence first.
    pub const ALL: [PrivilegeLevel; 4] = [
        PrivilegeLevel::System,
        PrivilegeLevel::User,
        PrivilegeLevel::Assistant,
        PrivilegeLevel::Tool,
    ];

    fn rank(self) -> u8 {
        match self {
            PrivilegeLevel::System => 3,
            PrivilegeLevel::User => 2,
            PrivilegeLevel::Assistant => 1,
            PrivilegeLevel::Tool => 0,
        }
    }

    /// True when `self` takes precedence over `other`.
    pub fn outranks(self, other: PrivilegeLevel) -> bool {
        self.rank() > other.rank()
    }
}

impl PartialOrd for PrivilegeLevel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PrivilegeLevel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl fmt::Display for PrivilegeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PrivilegeLevel::System => "system",
            PrivilegeLevel::User => "user",
            PrivilegeLevel::Assistant => "assistant",
            PrivilegeLevel::Tool => "tool",
        };
        f.write_str(s)
    }
}

/// Opaque identifier of a tool call, unique within a conversation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CallId(pub String);

impl CallId {
    pub fn new(id: impl Into<String>) -> Self {
        CallId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CallId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CallId {
    fn from(s: &str) -> Self {
        CallId(s.to_string())
    }
}

/// A function invocation proposed by the assistant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: CallId,
    pub function_name: String,
    /// Argument map in the order the caller supplied it.
    pub arguments: IndexMap<String, serde_json::Value>,
}

impl ToolCall {
    pub fn new(
        call_id: impl Into<CallId>,
        function_name: impl Into<String>,
        arguments: IndexMap<String, serde_json::Value>,
    ) -> Self {
        ToolCall {
            call_id: call_id.into(),
            function_name: function_name.into(),
            arguments,
        }
    }

    /// Canonical rendering of the arguments: compact JSON object with keys
    /// sorted lexicographically at every level, so the same argument map
    /// always renders to the same bytes.
    pub fn render_arguments(&self) -> String {
        render_arguments(&self.arguments)
    }
}

impl From<String> for CallId {
    fn from(s: String) -> Self {
        CallId(s)
    }
}

/// Canonical key-sorted compact JSON rendering of an argument map.
pub fn render_arguments(arguments: &IndexMap<String, serde_json::Value>) -> String {
    // serde_json::Map is backed by a BTreeMap, so inserting re-sorts keys and
    // nested objects deserialized through serde_json are already sorted.
    let map: serde_json::Map<String, serde_json::Value> = arguments
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    serde_json::Value::Object(map).to_string()
}

/// One dialogue turn. `message_id` is assigned by [`Conversation::append`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: u64,
    pub level: PrivilegeLevel,
    pub content: String,
    pub tool_calls: Vec<ToolCall>,
    pub responding_to: Option<CallId>,
}

impl Message {
    fn new(level: PrivilegeLevel, content: impl Into<String>) -> Self {
        Message {
            message_id: 0,
            level,
            content: content.into(),
            tool_calls: Vec::new(),
            responding_to: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message::new(PrivilegeLevel::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message::new(PrivilegeLevel::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message::new(PrivilegeLevel::Assistant, content)
    }

    pub fn assistant_with_calls(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        let mut msg = Message::new(PrivilegeLevel::Assistant, content);
        msg.tool_calls = tool_calls;
        msg
    }

    pub fn tool(responding_to: impl Into<CallId>, content: impl Into<String>) -> Self {
        let mut msg = Message::new(PrivilegeLevel::Tool, content);
        msg.responding_to = Some(responding_to.into());
        msg
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConversationError {
    #[error("tool message responds to unknown call id `{0}`")]
    UnknownToolCall(CallId),
    #[error("call id `{0}` was already answered")]
    DuplicateToolResponse(CallId),
    #[error("duplicate call id `{0}` in conversation")]
    DuplicateCallId(CallId),
    #[error("tool message is missing responding_to")]
    MissingRespondingTo,
    #[error("{0} message must not carry responding_to")]
    UnexpectedRespondingTo(PrivilegeLevel),
    #[error("{0} message must not carry tool calls")]
    UnexpectedToolCalls(PrivilegeLevel),
    #[error("assistant message needs content or at least one tool call")]
    EmptyAssistantMessage,
    #[error("tool call has an empty function name")]
    EmptyFunctionName,
}

/// Ordered message log with a monotone sequence counter. Messages are
/// immutable once appended; ids are gap-free starting at 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    messages: Vec<Message>,
    next_seq: u64,
}

impl Conversation {
    pub fn new() -> Self {
        Conversation::default()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// The whole conversation as a view.
    pub fn view(&self) -> &[Message] {
        &self.messages
    }

    /// Prefix of messages with `message_id < idx` (the history `H_idx`).
    pub fn history_before(&self, idx: u64) -> &[Message] {
        let end = (idx.min(self.next_seq)) as usize;
        &self.messages[..end]
    }

    /// Validates `msg` against the current state, stamps the next sequence
    /// number on it, and appends. Returns the assigned id.
    pub fn append(&mut self, mut msg: Message) -> Result<u64, ConversationError> {
        self.validate(&msg)?;
        let id = self.next_seq;
        msg.message_id = id;
        self.messages.push(msg);
        self.next_seq += 1;
        Ok(id)
    }

    fn validate(&self, msg: &Message) -> Result<(), ConversationError> {
        if msg.level != PrivilegeLevel::Assistant && !msg.tool_calls.is_empty() {
            return Err(ConversationError::UnexpectedToolCalls(msg.level));
        }
        if msg.level != PrivilegeLevel::Tool && msg.responding_to.is_some() {
            return Err(ConversationError::UnexpectedRespondingTo(msg.level));
        }
        match msg.level {
            PrivilegeLevel::Assistant => {
                if msg.content.is_empty() && msg.tool_calls.is_empty() {
                    return Err(ConversationError::EmptyAssistantMessage);
                }
                for call in &msg.tool_calls {
                    if call.function_name.is_empty() {
                        return Err(ConversationError::EmptyFunctionName);
                    }
                    if self.find_call(&call.call_id).is_some()
                        || msg
                            .tool_calls
                            .iter()
                            .filter(|c| c.call_id == call.call_id)
                            .count()
                            > 1
                    {
                        return Err(ConversationError::DuplicateCallId(call.call_id.clone()));
                    }
                }
            }
            PrivilegeLevel::Tool => {
                let call_id = msg
                    .responding_to
                    .as_ref()
                    .ok_or(ConversationError::MissingRespondingTo)?;
                if self.find_call(call_id).is_none() {
                    return Err(ConversationError::UnknownToolCall(call_id.clone()));
                }
                let answered = self
                    .messages
                    .iter()
                    .any(|m| m.responding_to.as_ref() == Some(call_id));
                if answered {
                    return Err(ConversationError::DuplicateToolResponse(call_id.clone()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Locates the tool call with the given id in any earlier assistant
    /// message, together with the message that carries it.
    pub fn find_call(&self, call_id: &CallId) -> Option<(&Message, &ToolCall)> {
        find_call_in(&self.messages, call_id)
    }
}

fn find_call_in<'a>(view: &'a [Message], call_id: &CallId) -> Option<(&'a Message, &'a ToolCall)> {
    view.iter().find_map(|m| {
        m.tool_calls
            .iter()
            .find(|c| &c.call_id == call_id)
            .map(|c| (m, c))
    })
}

/// Messages in `view` at the given level, original order preserved.
pub fn messages_at_level(view: &[Message], level: PrivilegeLevel) -> Vec<&Message> {
    view.iter().filter(|m| m.level == level).collect()
}

/// Suffix of `view` holding roughly the last `budget` messages, extended
/// backward as far as needed so that no retained tool message is cut off
/// from the assistant message that issued its call. Returns the whole view
/// when it already fits.
pub fn truncate_for_judge(view: &[Message], budget: usize) -> &[Message] {
    if view.len() <= budget {
        return view;
    }
    let mut start = view.len() - budget;
    while start > 0 && has_orphaned_tool(&view[start..]) {
        start -= 1;
    }
    &view[start..]
}

fn has_orphaned_tool(slice: &[Message]) -> bool {
    slice.iter().any(|m| {
        m.level == PrivilegeLevel::Tool
            && m.responding_to
                .as_ref()
                .is_some_and(|id| find_call_in(slice, id).is_none())
    })
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Writes one JSON record per message.
pub fn write_transcript<W: Write>(mut w: W, messages: &[Message]) -> Result<(), TranscriptError> {
    for msg in messages {
        let line = serde_json::to_string(msg).map_err(|source| TranscriptError::Parse {
            line: msg.message_id as usize,
            source,
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parses a line-delimited transcript back into messages.
pub fn parse_transcript<R: BufRead>(r: R) -> Result<Vec<Message>, TranscriptError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = serde_json::from_str(&line)
            .map_err(|source| TranscriptError::Parse { line: i + 1, source })?;
        out.push(msg);
    }
    Ok(out)
}
