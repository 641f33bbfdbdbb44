//! Conversation turns and the pluggable agent client.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::SessionError;
use crate::tools::{parse_call, ToolCall, ToolSchema};

/// Instructions injected as the first turn of every session.
pub const SYSTEM_INSTRUCTIONS: &str = include_str!("../assets/system_instructions.md");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Developer,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TurnContent {
    Text {
        text: String,
    },
    /// Structured payload, e.g. a tool call with its outcome.
    Tool {
        name: String,
        payload: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: TurnContent,
    pub at_ms: u64,
}

impl Turn {
    pub fn text(role: Role, text: impl Into<String>, at_ms: u64) -> Self {
        Turn { role, content: TurnContent::Text { text: text.into() }, at_ms }
    }

    /// Text as it would be shown to a chat model.
    pub fn render(&self) -> String {
        match &self.content {
            TurnContent::Text { text } => text.clone(),
            TurnContent::Tool { name, payload } => format!("[{name}] {payload}"),
        }
    }
}

pub struct AgentRequest<'a> {
    pub turns: &'a [Turn],
    pub tools: Vec<&'static ToolSchema>,
}

impl AgentRequest<'_> {
    /// Assistant replies already in the conversation.
    pub fn reply_index(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::Assistant).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentReply {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub calls: Vec<ToolCall>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct AgentError(pub String);

pub trait AgentClient: Send {
    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<AgentReply, AgentError>;
}

impl<A: AgentClient + ?Sized> AgentClient for Box<A> {
    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<AgentReply, AgentError> {
        (**self).respond(request)
    }
}

/// Agent that is never reachable; interpretation falls back to local verdicts.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineAgent;

impl AgentClient for OfflineAgent {
    fn respond(&mut self, _: &AgentRequest<'_>) -> Result<AgentReply, AgentError> {
        Err(AgentError("no agent configured".into()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapeEntry {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub calls: Vec<ToolCall>,
    /// When set, the agent fails with this reason instead of replying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TapeError {
    #[error("tape is not valid yaml: {0}")]
    Malformed(String),
    #[error("reply {index}, call {call}: {source}")]
    Call { index: usize, call: usize, source: SessionError },
}

impl TapeError {
    pub fn code(&self) -> &'static str {
        match self {
            TapeError::Malformed(_) => "malformed_tape",
            TapeError::Call { source, .. } => source.code(),
        }
    }
}

/// Pre-authored replies keyed by how many assistant replies precede them.
///
/// ```yaml
/// replies:
///   0:
///     text: "Here is a test for the divider."
///     calls:
///       - name: create_voltage_test
///         arguments: {probe_pin: A0, probe_rows: [12], expected_mv: [2300, 2700]}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tape {
    pub replies: BTreeMap<usize, TapeEntry>,
}

impl Tape {
    pub fn from_yaml(text: &str) -> Result<Self, TapeError> {
        // Round-trip through JSON so tool arguments become plain JSON values.
        let yaml: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| TapeError::Malformed(e.to_string()))?;
        let json = serde_json::to_value(yaml).map_err(|e| TapeError::Malformed(e.to_string()))?;
        serde_json::from_value(json).map_err(|e| TapeError::Malformed(e.to_string()))
    }

    pub fn with_reply(mut self, index: usize, entry: TapeEntry) -> Self {
        self.replies.insert(index, entry);
        self
    }

    /// Checks every call names a known tool with in-bounds arguments.
    pub fn check(&self) -> Result<(), TapeError> {
        for (index, entry) in &self.replies {
            for (call, c) in entry.calls.iter().enumerate() {
                parse_call(c).map_err(|source| TapeError::Call { index: *index, call, source })?;
            }
        }
        Ok(())
    }
}

/// Deterministic agent playing a [`Tape`].
///
/// The reply is chosen by counting assistant turns in the request, so a
/// session rebuilt from its log picks up the tape where it left off.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAgent {
    tape: Tape,
    seen: Vec<Vec<Turn>>,
}

impl ScriptedAgent {
    pub fn new(tape: Tape) -> Self {
        ScriptedAgent { tape, seen: Vec::new() }
    }

    /// Conversations received so far, oldest first.
    pub fn requests(&self) -> &[Vec<Turn>] {
        &self.seen
    }
}

impl AgentClient for ScriptedAgent {
    fn respond(&mut self, request: &AgentRequest<'_>) -> Result<AgentReply, AgentError> {
        self.seen.push(request.turns.to_vec());
        let index = request.reply_index();
        let entry = self.tape.replies.get(&index).ok_or_else(|| AgentError(format!("tape has no reply {index}")))?;
        if let Some(reason) = &entry.fail {
            return Err(AgentError(reason.clone()));
        }
        Ok(AgentReply { text: entry.text.clone(), calls: entry.calls.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn tape_yaml_and_check() {
        let tape = Tape::from_yaml(
            "replies:\n  0:\n    text: hi\n    calls:\n      - name: highlight_rows\n        arguments: {rows: [4, 7], pattern: blink}\n  1:\n    fail: offline\n",
        )
        .unwrap();
        assert_eq!(tape.replies[&0].calls[0].arguments, json!({"rows": [4, 7], "pattern": "blink"}));
        assert_eq!(tape.replies[&1].fail.as_deref(), Some("offline"));
        tape.check().unwrap();

        let bad = Tape::from_yaml("replies:\n  0:\n    calls:\n      - name: launch\n").unwrap();
        let err = bad.check().unwrap_err();
        assert_eq!(err.code(), "unknown_tool");
        assert!(matches!(Tape::from_yaml("replies: [1"), Err(TapeError::Malformed(_))));
    }

    #[test]
    fn scripted_agent_indexes_by_assistant_turns() {
        let tape = Tape::default()
            .with_reply(0, TapeEntry { text: "first".into(), ..Default::default() })
            .with_reply(1, TapeEntry { text: "second".into(), ..Default::default() });
        let mut agent = ScriptedAgent::new(tape);
        let mut turns = vec![Turn::text(Role::User, "q", 0)];
        let r = agent.respond(&AgentRequest { turns: &turns, tools: vec![] }).unwrap();
        assert_eq!(r.text, "first");
        // same conversation again replays the same entry
        let r = agent.respond(&AgentRequest { turns: &turns, tools: vec![] }).unwrap();
        assert_eq!(r.text, "first");
        turns.push(Turn::text(Role::Assistant, "first", 1));
        let r = agent.respond(&AgentRequest { turns: &turns, tools: vec![] }).unwrap();
        assert_eq!(r.text, "second");
        turns.push(Turn::text(Role::Assistant, "second", 2));
        assert!(agent.respond(&AgentRequest { turns: &turns, tools: vec![] }).is_err());
        assert_eq!(agent.requests().len(), 4);
    }
}
