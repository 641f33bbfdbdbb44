//! Conversation session: mode, schematic context, selections, turns, and
//! artifacts, all derived from an append-only stream of [`SessionEvent`]s.
//!
//! Every mutation goes through [`Session::emit`], which writes the record to
//! the log sink before applying it, so a log prefix always replays to a state
//! the live session actually passed through.

use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{AgentClient, AgentRequest, Role, Turn, TurnContent, SYSTEM_INSTRUCTIONS};
use crate::device::{Device, DeviceError, Disconnected};
use crate::error::SessionError;
use crate::log::{replay, LogSink, ReplayError, SessionLogRecord};
use crate::netlist::{
    emit_yaml, extract_component_context, parse_netlist_xml, rows_for_component, CanonicalNetlist,
    ComponentContextEntry, RowId,
};
use crate::protocol::{validate_command, BoardCommand, BoardResponse, LedPattern};
use crate::test_engine::{Lifecycle, Suggestion, TestGroup, TestItem};
use crate::tools::{parse_call, tools_for_mode, ToolCall, ToolKind, ToolRequest};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Ask,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StatusEvent {
    Thinking,
    AddingTests,
    Responded,
    Failed { reason: String },
}

impl StatusEvent {
    pub fn is_terminal(&self) -> bool {
        matches!(self, StatusEvent::Responded | StatusEvent::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchematicSnapshot {
    pub netlist: CanonicalNetlist,
    pub yaml: String,
}

impl SchematicSnapshot {
    pub fn new(netlist: CanonicalNetlist) -> Self {
        let yaml = emit_yaml(&netlist);
        SchematicSnapshot { netlist, yaml }
    }
}

/// An artifact as first created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "artifact", rename_all = "snake_case")]
pub enum Artifact {
    Test { test: TestItem, group_title: String },
    Suggestion { suggestion: Suggestion },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "artifact", rename_all = "snake_case")]
pub enum ArtifactChange {
    Test {
        id: String,
        state: crate::test_engine::Lifecycle,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<crate::test_engine::TestResult>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict: Option<crate::test_engine::Verdict>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interpretation: Option<String>,
    },
    Suggestion {
        id: String,
        state: crate::test_engine::SuggestionState,
    },
}

/// Why an agent cycle was started.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cycle", rename_all = "snake_case")]
pub enum CycleKind {
    Query,
    Interpret { test_id: String },
}

/// The agent's answer, logged before any of its calls run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReplyRecord {
    pub cycle: CycleKind,
    pub text: String,
    pub calls: Vec<ToolCall>,
}

/// Progress through a logged reply, used to finish it after a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingReply {
    pub reply: AgentReplyRecord,
    /// Calls whose Tool turn has been logged.
    pub done: usize,
    /// Artifact created by call `.0` before its Tool turn was logged.
    pub created: Option<(usize, String)>,
    pub adding_tests: bool,
    pub answered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum SessionEvent {
    TurnAppended(Turn),
    AgentReplied(AgentReplyRecord),
    ModeChanged(Mode),
    SchematicSynced(SchematicSnapshot),
    ContextSelected(Vec<ComponentContextEntry>),
    ArtifactCreated(Artifact),
    ArtifactStateChanged(ArtifactChange),
    DeviceCommand(BoardCommand),
    Status(StatusEvent),
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            SessionEvent::TurnAppended(_) => "turn_appended",
            SessionEvent::AgentReplied(_) => "agent_replied",
            SessionEvent::ModeChanged(_) => "mode_changed",
            SessionEvent::SchematicSynced(_) => "schematic_synced",
            SessionEvent::ContextSelected(_) => "context_selected",
            SessionEvent::ArtifactCreated(_) => "artifact_created",
            SessionEvent::ArtifactStateChanged(_) => "artifact_state_changed",
            SessionEvent::DeviceCommand(_) => "device_command",
            SessionEvent::Status(_) => "status",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub turns: Vec<Turn>,
    pub mode: Mode,
    pub schematic: Option<SchematicSnapshot>,
    pub selected_context: Vec<ComponentContextEntry>,
    pub tests: Vec<TestItem>,
    pub groups: Vec<TestGroup>,
    pub suggestions: Vec<Suggestion>,
    pub last_status: Option<StatusEvent>,
    /// An agent cycle has started and not yet reached a terminal status.
    pub cycle_open: bool,
    pub pending_reply: Option<PendingReply>,
}

impl SessionState {
    pub fn test(&self, id: &str) -> Option<&TestItem> {
        self.tests.iter().find(|t| t.id == id)
    }

    pub fn suggestion(&self, id: &str) -> Option<&Suggestion> {
        self.suggestions.iter().find(|s| s.id == id)
    }

    /// Tests not yet interpreted and suggestions not yet completed.
    pub fn pending_artifacts(&self) -> Vec<String> {
        use crate::test_engine::{Lifecycle, SuggestionState};
        self.tests
            .iter()
            .filter(|t| t.state != Lifecycle::Interpreted)
            .map(|t| t.id.clone())
            .chain(self.suggestions.iter().filter(|s| s.state != SuggestionState::Completed).map(|s| s.id.clone()))
            .collect()
    }

    fn note_created(&mut self, id: &str) {
        if let Some(p) = self.pending_reply.as_mut().filter(|p| !p.answered) {
            p.created = Some((p.done, id.to_string()));
        }
    }

    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), String> {
        match event {
            SessionEvent::TurnAppended(turn) => {
                if let Some(p) = self.pending_reply.as_mut().filter(|p| !p.answered) {
                    match turn.role {
                        Role::Tool => p.done += 1,
                        Role::Assistant => p.answered = true,
                        _ => {}
                    }
                }
                self.turns.push(turn.clone());
            }
            SessionEvent::AgentReplied(reply) => {
                if !self.cycle_open {
                    return Err("agent reply outside a cycle".into());
                }
                self.pending_reply = Some(PendingReply {
                    reply: reply.clone(),
                    done: 0,
                    created: None,
                    adding_tests: false,
                    answered: false,
                });
            }
            SessionEvent::ModeChanged(mode) => self.mode = *mode,
            SessionEvent::SchematicSynced(snapshot) => {
                // keep selections that still resolve, refreshed against the new netlist
                let ids: Vec<String> = self
                    .selected_context
                    .iter()
                    .filter(|e| snapshot.netlist.component(&e.id).is_some())
                    .map(|e| e.id.clone())
                    .collect();
                self.selected_context =
                    extract_component_context(&snapshot.netlist, &ids).map_err(|e| e.to_string())?;
                self.schematic = Some(snapshot.clone());
            }
            SessionEvent::ContextSelected(entries) => self.selected_context = entries.clone(),
            SessionEvent::ArtifactCreated(Artifact::Test { test, group_title }) => {
                if self.test(&test.id).is_some() {
                    return Err(format!("test {} created twice", test.id));
                }
                match self.groups.iter_mut().find(|g| g.id == test.group_id) {
                    Some(group) => group.test_ids.push(test.id.clone()),
                    None => self.groups.push(TestGroup {
                        id: test.group_id.clone(),
                        title: group_title.clone(),
                        test_ids: vec![test.id.clone()],
                    }),
                }
                self.tests.push(test.clone());
                self.note_created(&test.id);
            }
            SessionEvent::ArtifactCreated(Artifact::Suggestion { suggestion }) => {
                if self.suggestion(&suggestion.id).is_some() {
                    return Err(format!("suggestion {} created twice", suggestion.id));
                }
                self.suggestions.push(suggestion.clone());
                self.note_created(&suggestion.id);
            }
            SessionEvent::ArtifactStateChanged(ArtifactChange::Test { id, state, result, verdict, interpretation }) => {
                let test = self.tests.iter_mut().find(|t| &t.id == id).ok_or_else(|| format!("unknown test {id}"))?;
                if *state < test.state {
                    return Err(format!("test {id} moved backward from {:?} to {state:?}", test.state));
                }
                if let Some(result) = result {
                    if !test.kind.accepts(result) {
                        return Err(format!("test {id} cannot hold a {} result", result.label()));
                    }
                    test.result = Some(result.clone());
                }
                if verdict.is_some() {
                    test.verdict = *verdict;
                }
                if interpretation.is_some() {
                    test.interpretation = interpretation.clone();
                }
                test.state = *state;
            }
            SessionEvent::ArtifactStateChanged(ArtifactChange::Suggestion { id, state }) => {
                let s = self
                    .suggestions
                    .iter_mut()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| format!("unknown suggestion {id}"))?;
                if *state < s.state {
                    return Err(format!("suggestion {id} moved backward"));
                }
                s.state = *state;
            }
            SessionEvent::DeviceCommand(_) => {}
            SessionEvent::Status(status) => {
                match status {
                    StatusEvent::Thinking => self.cycle_open = true,
                    StatusEvent::AddingTests => {
                        if let Some(p) = self.pending_reply.as_mut() {
                            p.adding_tests = true;
                        }
                    }
                    _ => {
                        self.cycle_open = false;
                        self.pending_reply = None;
                    }
                }
                self.last_status = Some(status.clone());
            }
        }
        Ok(())
    }
}

/// Effect of an executed tool call, reported back to the UI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Highlighted { rows: Vec<RowId>, pattern: LedPattern },
    TestCreated { id: String },
    SuggestionCreated { id: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub text: String,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutcome {
    pub output: Value,
    pub action: Option<Action>,
}

pub trait Clock: Send {
    fn now_ms(&mut self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&mut self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }
}

/// Clock that ticks by a fixed step on every read.
#[derive(Debug, Clone, Copy)]
pub struct SteppingClock {
    next: u64,
    step: u64,
}

impl SteppingClock {
    pub fn new(start: u64, step: u64) -> Self {
        SteppingClock { next: start, step }
    }
}

impl Clock for SteppingClock {
    fn now_ms(&mut self) -> u64 {
        let now = self.next;
        self.next += self.step;
        now
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOptions {
    /// Sampling interval for signal-pattern tests.
    pub sample_interval_ms: u32,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { sample_interval_ms: 10 }
    }
}

type Listener = Box<dyn FnMut(&SessionLogRecord) + Send>;

pub struct SessionBuilder {
    id: String,
    agent: Box<dyn AgentClient>,
    device: Box<dyn Device>,
    sink: Option<Box<dyn LogSink>>,
    clock: Box<dyn Clock>,
    options: SessionOptions,
}

impl SessionBuilder {
    pub fn agent(mut self, agent: impl AgentClient + 'static) -> Self {
        self.agent = Box::new(agent);
        self
    }

    pub fn device(mut self, device: impl Device + 'static) -> Self {
        self.device = Box::new(device);
        self
    }

    pub fn sink(mut self, sink: impl LogSink + 'static) -> Self {
        self.sink = Some(Box::new(sink));
        self
    }

    pub fn clock(mut self, clock: impl Clock + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn options(mut self, options: SessionOptions) -> Self {
        self.options = options;
        self
    }

    fn build(self, records: Vec<SessionLogRecord>, state: SessionState) -> Session {
        Session {
            id: self.id,
            state,
            records,
            agent: self.agent,
            device: self.device,
            sink: self.sink,
            clock: self.clock,
            options: self.options,
            listeners: Vec::new(),
        }
    }

    /// Starts a fresh session, logging the system instructions as its first turn.
    pub fn start(self) -> Result<Session, SessionError> {
        let mut session = self.build(Vec::new(), SessionState::default());
        session.append_text(Role::System, SYSTEM_INSTRUCTIONS)?;
        Ok(session)
    }

    /// Rebuilds a session from its log and continues it.
    ///
    /// The sink is expected to already hold `records`; only new records are
    /// written. Held outputs and LED patterns are re-issued to the device. An
    /// agent cycle cut off after its reply was logged is carried to the end;
    /// one cut off earlier is closed with a `Failed` status.
    pub fn resume(self, records: Vec<SessionLogRecord>) -> Result<Session, ResumeError> {
        let state = replay(&records)?;
        let mut session = self.build(records, state);
        if session.state.turns.is_empty() {
            session.append_text(Role::System, SYSTEM_INSTRUCTIONS)?;
        }
        let restore = held_device_state(&session.records);
        session.device_op(|d| {
            for cmd in &restore {
                d.execute(cmd)?;
            }
            Ok(())
        })?;
        if session.state.cycle_open {
            match session.state.pending_reply.clone() {
                // the reply was logged, so finish acting on it
                Some(pending) => {
                    let outcome = session.finish_reply()?;
                    if let CycleKind::Interpret { test_id } = &pending.reply.cycle {
                        if session.state.test(test_id).is_some_and(|t| t.state == Lifecycle::Submitted) {
                            session.record_interpretation(test_id, outcome.text)?;
                        }
                    }
                    session.emit_status(StatusEvent::Responded)?;
                }
                None => session.emit_status(StatusEvent::Failed { reason: "interrupted".into() })?,
            }
        }
        Ok(session)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResumeError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Commands that reproduce the steady device state recorded in a log:
/// the last LED pattern per row and the last untimed output per pin.
fn held_device_state(records: &[SessionLogRecord]) -> Vec<BoardCommand> {
    use std::collections::BTreeMap;
    let mut leds = BTreeMap::new();
    let mut outputs = BTreeMap::new();
    for r in records {
        if let SessionEvent::DeviceCommand(cmd) = &r.event {
            match *cmd {
                BoardCommand::Led { row, .. } => {
                    leds.insert(row, cmd.clone());
                }
                BoardCommand::OutputVoltage { pin, duration_ms, .. }
                | BoardCommand::OutputPwm { pin, duration_ms, .. } => {
                    outputs.insert(pin, duration_ms.is_none().then(|| cmd.clone()));
                }
                BoardCommand::ReadAnalog { .. } => {}
            }
        }
    }
    leds.into_values()
        .filter(|c| !matches!(c, BoardCommand::Led { pattern: LedPattern::Off, .. }))
        .chain(outputs.into_values().flatten())
        .collect()
}

pub struct Session {
    id: String,
    state: SessionState,
    records: Vec<SessionLogRecord>,
    agent: Box<dyn AgentClient>,
    device: Box<dyn Device>,
    sink: Option<Box<dyn LogSink>>,
    clock: Box<dyn Clock>,
    pub(crate) options: SessionOptions,
    listeners: Vec<Listener>,
}

impl Session {
    /// Defaults: offline agent, no device, no log file, wall clock.
    pub fn builder(id: impl Into<String>) -> SessionBuilder {
        SessionBuilder {
            id: id.into(),
            agent: Box::new(crate::agent::OfflineAgent),
            device: Box::new(Disconnected),
            sink: None,
            clock: Box::new(SystemClock),
            options: SessionOptions::default(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn records(&self) -> &[SessionLogRecord] {
        &self.records
    }

    /// Calls `listener` with every record appended from now on.
    pub fn subscribe(&mut self, listener: impl FnMut(&SessionLogRecord) + Send + 'static) {
        self.listeners.push(Box::new(listener));
    }

    /// Swaps in another device, returning the previous one.
    pub fn replace_device(&mut self, device: Box<dyn Device>) -> Box<dyn Device> {
        std::mem::replace(&mut self.device, device)
    }

    pub(crate) fn emit(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        let record = SessionLogRecord { seq: self.records.len() as u64 + 1, at_ms: self.clock.now_ms(), event };
        let mut next = self.state.clone();
        next.apply(&record.event).map_err(|e| SessionError::Log(format!("refusing inconsistent event: {e}")))?;
        if let Some(sink) = self.sink.as_mut() {
            sink.append(&record).map_err(|e| SessionError::Log(e.to_string()))?;
        }
        self.state = next;
        for listener in &mut self.listeners {
            listener(&record);
        }
        self.records.push(record);
        Ok(())
    }

    pub(crate) fn append_turn(&mut self, role: Role, content: TurnContent) -> Result<(), SessionError> {
        let at_ms = self.clock.now_ms();
        self.emit(SessionEvent::TurnAppended(Turn { role, content, at_ms }))
    }

    pub(crate) fn append_text(&mut self, role: Role, text: impl Into<String>) -> Result<(), SessionError> {
        self.append_turn(role, TurnContent::Text { text: text.into() })
    }

    pub(crate) fn emit_status(&mut self, status: StatusEvent) -> Result<(), SessionError> {
        self.emit(SessionEvent::Status(status))
    }

    /// Runs `op` against the device and logs every frame it sent, even on failure.
    pub(crate) fn device_op<T>(
        &mut self,
        op: impl FnOnce(&mut dyn Device) -> Result<T, DeviceError>,
    ) -> Result<T, SessionError> {
        let result = op(self.device.as_mut());
        for frame in self.device.drain_frames() {
            self.emit(SessionEvent::DeviceCommand(frame))?;
        }
        Ok(result?)
    }

    pub(crate) fn schematic(&self) -> Result<&SchematicSnapshot, SessionError> {
        self.state.schematic.as_ref().ok_or(SessionError::NoSchematic)
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<(), SessionError> {
        self.emit(SessionEvent::ModeChanged(mode))?;
        let note = match mode {
            Mode::Ask => "Mode changed to Ask: answer and guide; suggestions allowed, tests not.",
            Mode::Test => "Mode changed to Test: create in-situ tests; suggestions not allowed.",
        };
        self.append_text(Role::Developer, note)
    }

    /// Replaces the schematic context; the snapshot's revision is one past the previous one.
    pub fn sync_schematic(&mut self, netlist: CanonicalNetlist) -> Result<u64, SessionError> {
        let revision = self.state.schematic.as_ref().map_or(0, |s| s.netlist.revision()) + 1;
        let snapshot = SchematicSnapshot::new(netlist.with_revision(revision));
        let note = format!("Schematic updated (revision {revision}):\n{}", snapshot.yaml);
        self.emit(SessionEvent::SchematicSynced(snapshot))?;
        self.append_text(Role::Developer, note)?;
        Ok(revision)
    }

    pub fn sync_schematic_xml(&mut self, xml: &[u8]) -> Result<u64, SessionError> {
        let netlist = parse_netlist_xml(xml)?;
        self.sync_schematic(netlist)
    }

    pub fn select_context(&mut self, ids: &[String]) -> Result<(), SessionError> {
        let entries = extract_component_context(&self.schematic()?.netlist, ids)?;
        let note = if entries.is_empty() {
            "Component selection cleared.".to_string()
        } else {
            format!(
                "Selected components (\"this\"/\"it\" refers to these):\n{}",
                serde_json::to_string_pretty(&entries).expect("context serializes")
            )
        };
        self.emit(SessionEvent::ContextSelected(entries))?;
        self.append_text(Role::Developer, note)
    }

    pub fn submit_query(&mut self, text: &str) -> Result<AgentOutcome, SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyQuery);
        }
        self.emit_status(StatusEvent::Thinking)?;
        self.append_text(Role::User, text)?;
        let outcome = self.run_cycle(CycleKind::Query)?;
        self.emit_status(StatusEvent::Responded)?;
        Ok(outcome)
    }

    /// Asks the agent for a reply and executes its tool calls in order.
    ///
    /// On agent failure a `Failed` status is emitted; on success the caller
    /// emits the terminal `Responded`.
    pub(crate) fn run_cycle(&mut self, cycle: CycleKind) -> Result<AgentOutcome, SessionError> {
        let reply =
            self.agent.respond(&AgentRequest { turns: &self.state.turns, tools: tools_for_mode(self.state.mode) });
        let reply = match reply {
            Ok(reply) => reply,
            Err(e) => {
                self.emit_status(StatusEvent::Failed { reason: e.0.clone() })?;
                return Err(SessionError::AgentUnavailable(e.0));
            }
        };
        self.emit(SessionEvent::AgentReplied(AgentReplyRecord { cycle, text: reply.text, calls: reply.calls }))?;
        self.finish_reply()
    }

    /// Runs the not yet executed calls of the logged reply, then appends the
    /// Assistant turn.
    fn finish_reply(&mut self) -> Result<AgentOutcome, SessionError> {
        let mut actions = Vec::new();
        loop {
            let pending = self.state.pending_reply.clone().expect("a reply is pending");
            let Some(call) = pending.reply.calls.get(pending.done).cloned() else {
                if !pending.answered {
                    self.append_text(Role::Assistant, pending.reply.text.clone())?;
                }
                return Ok(AgentOutcome { text: pending.reply.text, actions });
            };
            let payload = match pending.created.filter(|(i, _)| *i == pending.done) {
                // the artifact exists; only its Tool turn was lost
                Some((_, id)) => json!({"call": call, "ok": true, "result": {"id": id}}),
                None => {
                    let allowed_test = ToolKind::from_name(&call.name)
                        .is_some_and(|k| k.creates_test() && k.available_in(self.state.mode));
                    if allowed_test && !pending.adding_tests {
                        self.emit_status(StatusEvent::AddingTests)?;
                    }
                    match self.dispatch_tool_call(&call) {
                        Ok(outcome) => {
                            actions.extend(outcome.action);
                            json!({"call": call, "ok": true, "result": outcome.output})
                        }
                        Err(e @ SessionError::Log(_)) => return Err(e),
                        Err(e) => json!({
                            "call": call,
                            "ok": false,
                            "error": {"code": e.code(), "message": e.to_string()}
                        }),
                    }
                }
            };
            self.append_turn(Role::Tool, TurnContent::Tool { name: call.name.clone(), payload })?;
        }
    }

    /// Validates and executes one tool call.
    ///
    /// Mode gating happens here regardless of which schemas were offered.
    pub fn dispatch_tool_call(&mut self, call: &ToolCall) -> Result<ToolOutcome, SessionError> {
        let kind = ToolKind::from_name(&call.name).ok_or_else(|| SessionError::UnknownTool(call.name.clone()))?;
        if !kind.available_in(self.state.mode) {
            return Err(SessionError::ModeViolation { tool: call.name.clone(), mode: self.state.mode });
        }
        let request = parse_call(call)?;
        match request {
            ToolRequest::HighlightRows { rows, pattern } => {
                let rows = self.highlight_rows(&rows, pattern)?;
                Ok(ToolOutcome { output: json!({"rows": rows}), action: Some(Action::Highlighted { rows, pattern }) })
            }
            ToolRequest::GetSchematic => {
                Ok(ToolOutcome { output: Value::String(self.schematic()?.yaml.clone()), action: None })
            }
            other => {
                let action = self.create_from_tool_call(&other)?;
                let id = match &action {
                    Action::TestCreated { id } | Action::SuggestionCreated { id } => id.clone(),
                    Action::Highlighted { .. } => unreachable!("creation yields artifacts"),
                };
                Ok(ToolOutcome { output: json!({"id": id}), action: Some(action) })
            }
        }
    }

    /// Lights `rows` with `pattern`, one frame per row in ascending order.
    pub fn highlight_rows(&mut self, rows: &BTreeSet<RowId>, pattern: LedPattern) -> Result<Vec<RowId>, SessionError> {
        let commands: Vec<BoardCommand> = rows.iter().map(|r| BoardCommand::led(r.get(), pattern)).collect();
        for cmd in &commands {
            validate_command(cmd)?;
        }
        self.device_op(|d| {
            for cmd in &commands {
                d.execute(cmd)?;
            }
            Ok(())
        })?;
        Ok(rows.iter().copied().collect())
    }

    /// Blinks the rows a component occupies in the current schematic.
    pub fn highlight_component(&mut self, component_id: &str, pattern: LedPattern) -> Result<Vec<RowId>, SessionError> {
        let rows = rows_for_component(&self.schematic()?.netlist, component_id)?;
        self.highlight_rows(&rows, pattern)
    }

    /// Sends one manual command to the board.
    pub fn device_command(&mut self, cmd: &BoardCommand) -> Result<BoardResponse, SessionError> {
        validate_command(cmd)?;
        self.device_op(|d| d.execute(cmd))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{ScriptedAgent, Tape, TapeEntry};
    use crate::device::{DeviceHandle, SimDevice, VirtualFixture};

    const XML: &[u8] = br#"<netlist>
        <component id="D1" label="LED1" kind="LED"><pin name="anode"/><pin name="cathode"/></component>
        <component id="R1" label="R1" kind="resistor" value="220"><pin name="1"/><pin name="2"/></component>
        <net id="N1"><member component="D1" pin="cathode"/><member component="R1" pin="1"/></net>
        <assignment component="D1" pin="anode" row="4"/>
        <assignment component="D1" pin="cathode" row="5"/>
        <assignment component="R1" pin="1" row="5"/>
        <assignment component="R1" pin="2" row="9"/>
    </netlist>"#;

    fn session(tape: Tape) -> (Session, DeviceHandle<SimDevice>) {
        let dev = DeviceHandle::new(SimDevice::open(&VirtualFixture::new()).unwrap());
        let s = Session::builder("t")
            .agent(ScriptedAgent::new(tape))
            .device(dev.clone())
            .clock(SteppingClock::new(0, 1))
            .start()
            .unwrap();
        (s, dev)
    }

    fn reply(text: &str, calls: Vec<ToolCall>) -> TapeEntry {
        TapeEntry { text: text.into(), calls, fail: None }
    }

    #[test]
    fn new_session_is_ask_with_system_turn() {
        let (s, _) = session(Tape::default());
        assert_eq!(s.mode(), Mode::Ask);
        assert_eq!(s.state().turns.len(), 1);
        assert_eq!(s.state().turns[0].role, Role::System);
        assert_eq!(s.records()[0].seq, 1);
    }

    #[test]
    fn redundant_mode_changes_still_log_turns() {
        let (mut s, _) = session(Tape::default());
        s.set_mode(Mode::Test).unwrap();
        s.set_mode(Mode::Test).unwrap();
        let dev_turns = s.state().turns.iter().filter(|t| t.role == Role::Developer).count();
        assert_eq!(dev_turns, 2);
    }

    #[test]
    fn sync_bumps_revision_each_time() {
        let (mut s, _) = session(Tape::default());
        assert_eq!(s.sync_schematic_xml(XML).unwrap(), 1);
        assert_eq!(s.sync_schematic_xml(XML).unwrap(), 2);
        assert_eq!(s.state().schematic.as_ref().unwrap().netlist.revision(), 2);
        let last = s.state().turns.last().unwrap();
        assert_eq!(last.role, Role::Developer);
        assert!(last.render().contains("components:"));
    }

    #[test]
    fn context_requires_schematic_and_known_ids() {
        let (mut s, _) = session(Tape::default());
        assert_eq!(s.select_context(&["D1".into()]), Err(SessionError::NoSchematic));
        s.sync_schematic_xml(XML).unwrap();
        assert!(matches!(s.select_context(&["Q9".into()]), Err(SessionError::Netlist(_))));
        s.select_context(&["D1".into()]).unwrap();
        assert_eq!(s.state().selected_context.len(), 1);
        s.select_context(&[]).unwrap();
        assert!(s.state().selected_context.is_empty());
    }

    #[test]
    fn text_only_reply() {
        let (mut s, _) = session(Tape::default().with_reply(0, reply("Looks fine.", vec![])));
        let statuses = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink = statuses.clone();
        s.subscribe(move |r| {
            if let SessionEvent::Status(st) = &r.event {
                sink.lock().unwrap().push(st.clone());
            }
        });
        let out = s.submit_query("Is it properly connected?").unwrap();
        assert_eq!(out, AgentOutcome { text: "Looks fine.".into(), actions: vec![] });
        assert_eq!(*statuses.lock().unwrap(), vec![StatusEvent::Thinking, StatusEvent::Responded]);
        assert_eq!(s.submit_query("  "), Err(SessionError::EmptyQuery));
    }

    #[test]
    fn agent_failure_keeps_user_turn() {
        let (mut s, _) = session(Tape::default());
        let err = s.submit_query("hello").unwrap_err();
        assert!(matches!(err, SessionError::AgentUnavailable(_)));
        assert_eq!(s.state().turns.last().unwrap().role, Role::User);
        assert!(matches!(s.state().last_status, Some(StatusEvent::Failed { .. })));
        assert!(!s.state().cycle_open);
    }

    #[test]
    fn highlight_in_ask_mode_drives_leds() {
        let call = ToolCall::new("highlight_rows", json!({"rows": [4, 7], "pattern": "blink"}));
        let (mut s, dev) = session(Tape::default().with_reply(0, reply("Here.", vec![call])));
        let out = s.submit_query("where does it go?").unwrap();
        let rows = vec![RowId::new(4).unwrap(), RowId::new(7).unwrap()];
        assert_eq!(out.actions, vec![Action::Highlighted { rows, pattern: LedPattern::Blink }]);
        assert_eq!(dev.lock().led(4), LedPattern::Blink);
        assert_eq!(dev.lock().led(7), LedPattern::Blink);
    }

    #[test]
    fn out_of_bounds_highlight_never_reaches_device() {
        let (mut s, dev) = session(Tape::default());
        let err = s
            .dispatch_tool_call(&ToolCall::new("highlight_rows", json!({"rows": [3, 51], "pattern": "on"})))
            .unwrap_err();
        assert!(matches!(err, SessionError::ParamOutOfBounds { .. }));
        assert!(dev.lock().history().is_empty());
    }

    #[test]
    fn test_tool_in_ask_mode_is_rejected() {
        let call = ToolCall::new("create_voltage_test", json!({"probe_pin": "A0", "probe_rows": [12]}));
        let (mut s, _) = session(Tape::default().with_reply(0, reply("ok", vec![call])));
        let out = s.submit_query("test it").unwrap();
        assert!(out.actions.is_empty());
        assert!(s.state().tests.is_empty());
        let tool_turn = s.state().turns.iter().find(|t| t.role == Role::Tool).unwrap();
        match &tool_turn.content {
            TurnContent::Tool { payload, .. } => assert_eq!(payload["error"]["code"], "mode_violation"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(!s.records().iter().any(|r| matches!(r.event, SessionEvent::Status(StatusEvent::AddingTests))));
    }

    #[test]
    fn get_schematic_returns_yaml() {
        let (mut s, _) = session(Tape::default());
        let call = ToolCall::new("get_schematic", json!({}));
        assert_eq!(s.dispatch_tool_call(&call), Err(SessionError::NoSchematic));
        s.sync_schematic_xml(XML).unwrap();
        let out = s.dispatch_tool_call(&call).unwrap();
        assert_eq!(out.output, Value::String(s.state().schematic.as_ref().unwrap().yaml.clone()));
        assert_eq!(
            s.dispatch_tool_call(&ToolCall::new("nope", json!({}))),
            Err(SessionError::UnknownTool("nope".into()))
        );
    }

    #[test]
    fn highlight_component_uses_current_rows() {
        let (mut s, dev) = session(Tape::default());
        s.sync_schematic_xml(XML).unwrap();
        let rows = s.highlight_component("R1", LedPattern::Blink).unwrap();
        assert_eq!(rows.iter().map(|r| r.get()).collect::<Vec<_>>(), [5, 9]);
        assert_eq!(dev.lock().history().len(), 2);
    }

    #[test]
    fn held_state_restores_last_writer() {
        let rec = |seq, cmd| SessionLogRecord { seq, at_ms: 0, event: SessionEvent::DeviceCommand(cmd) };
        let records = vec![
            rec(1, BoardCommand::led(3, LedPattern::On)),
            rec(2, BoardCommand::led(3, LedPattern::Off)),
            rec(3, BoardCommand::led(4, LedPattern::Blink)),
            rec(4, BoardCommand::output_voltage(crate::PinId::D0, 5000, None)),
            rec(5, BoardCommand::output_voltage(crate::PinId::D1, 5000, None)),
            rec(6, BoardCommand::output_voltage(crate::PinId::D1, 100, Some(20))),
        ];
        assert_eq!(
            held_device_state(&records),
            vec![BoardCommand::led(4, LedPattern::Blink), BoardCommand::output_voltage(crate::PinId::D0, 5000, None)]
        );
    }
}
