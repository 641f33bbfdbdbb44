//! In-situ tests and suggestions: kinds, lifecycle, verdicts, and the
//! session operations that move them forward.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{Role, TurnContent};
use crate::device::{sequence_duration, SequenceStep, TimeSeries};
use crate::error::SessionError;
use crate::netlist::{rows_for_component, RowId};
use crate::protocol::{LedPattern, PinId};
use crate::session::{Action, Artifact, ArtifactChange, CycleKind, Session, SessionEvent, StatusEvent};
use crate::tools::ToolRequest;

/// Inclusive millivolt range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MvRange {
    pub low: u32,
    pub high: u32,
}

impl MvRange {
    pub fn contains(&self, mv: u32) -> bool {
        self.low <= mv && mv <= self.high
    }
}

impl fmt::Display for MvRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.low, self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    Pin(PinId),
    /// Observed by the user rather than sampled.
    Component(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestKind {
    VoltageMeasurement {
        probe_pin: PinId,
        probe_rows: BTreeSet<RowId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_mv: Option<MvRange>,
    },
    SignalPattern {
        drive_pin: PinId,
        steps: Vec<SequenceStep>,
        observe: ProbeTarget,
    },
    VisualInspection {
        instruction: String,
        prompt: String,
    },
}

impl TestKind {
    pub fn is_inspection(&self) -> bool {
        matches!(self, TestKind::VisualInspection { .. })
    }

    /// Whether `result` is the kind of result this test produces.
    pub fn accepts(&self, result: &TestResult) -> bool {
        matches!(
            (self, result),
            (TestKind::VoltageMeasurement { .. }, TestResult::Reading { .. })
                | (TestKind::SignalPattern { .. }, TestResult::Series { .. })
                | (TestKind::VisualInspection { .. }, TestResult::Observation { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Created,
    ProbesHighlighted,
    Running,
    ResultCaptured,
    Submitted,
    Interpreted,
}

impl fmt::Display for Lifecycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOp {
    HighlightProbes,
    Run,
    Submit,
    Interpret,
}

impl TestOp {
    pub const ALL: [TestOp; 4] = [TestOp::HighlightProbes, TestOp::Run, TestOp::Submit, TestOp::Interpret];
}

impl fmt::Display for TestOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

/// State a test ends in after `op`, or `None` if `op` is not allowed.
///
/// Running is accepted as a start state for `Run` so that a run cut short by
/// a crash can be retried.
pub fn next_state(kind: &TestKind, state: Lifecycle, op: TestOp) -> Option<Lifecycle> {
    use Lifecycle::*;
    let inspection = kind.is_inspection();
    match (op, state) {
        (TestOp::HighlightProbes, Created | ProbesHighlighted) if !inspection => Some(ProbesHighlighted),
        (TestOp::Run, Created | ProbesHighlighted | Running) if !inspection => Some(ResultCaptured),
        (TestOp::Submit, ResultCaptured) => Some(Submitted),
        (TestOp::Submit, Created) if inspection => Some(Submitted),
        (TestOp::Interpret, Submitted) => Some(Interpreted),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TestResult {
    Series {
        series: TimeSeries,
    },
    Reading {
        value_mv: u32,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        floating: bool,
    },
    Observation {
        text: String,
    },
}

impl TestResult {
    pub fn label(&self) -> &'static str {
        match self {
            TestResult::Series { .. } => "series",
            TestResult::Reading { .. } => "reading",
            TestResult::Observation { .. } => "observation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Pass or fail only for a driven reading checked against an expected range.
pub fn verdict(kind: &TestKind, result: &TestResult) -> Verdict {
    match (kind, result) {
        (
            TestKind::VoltageMeasurement { expected_mv: Some(range), .. },
            TestResult::Reading { value_mv, floating: false },
        ) => {
            if range.contains(*value_mv) {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        _ => Verdict::Inconclusive,
    }
}

/// Interpretation used when the agent cannot be reached.
pub fn fallback_interpretation(kind: &TestKind, result: &TestResult) -> String {
    match (kind, result) {
        (_, TestResult::Reading { floating: true, .. }) => {
            "measured 0 mV on a floating input: inconclusive".to_string()
        }
        (TestKind::VoltageMeasurement { expected_mv: Some(range), .. }, TestResult::Reading { value_mv, .. }) => {
            if range.contains(*value_mv) {
                format!("measured {value_mv} mV within {range}: pass")
            } else {
                format!("measured {value_mv} mV outside {range}: fail")
            }
        }
        (_, TestResult::Reading { value_mv, .. }) => {
            format!("measured {value_mv} mV with no expected range: inconclusive")
        }
        (_, TestResult::Series { series }) => {
            match (series.samples.iter().map(|s| s.value_mv).min(), series.samples.iter().map(|s| s.value_mv).max()) {
                (Some(lo), Some(hi)) => format!(
                    "captured {} samples on {} every {} ms, {lo} to {hi} mV: inconclusive",
                    series.samples.len(),
                    series.pin,
                    series.interval_ms
                ),
                _ => "no samples captured: inconclusive".to_string(),
            }
        }
        (_, TestResult::Observation { text }) => format!("observation recorded ({text}): inconclusive"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestItem {
    pub id: String,
    pub title: String,
    pub group_id: String,
    #[serde(flatten)]
    pub kind: TestKind,
    pub state: Lifecycle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TestResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestGroup {
    pub id: String,
    pub title: String,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuggestionKind {
    Connection { from_row: RowId, to_row: RowId, description: String },
    Component { component_kind: String, rows: BTreeSet<RowId>, description: String },
}

impl SuggestionKind {
    pub fn rows(&self) -> BTreeSet<RowId> {
        match self {
            SuggestionKind::Connection { from_row, to_row, .. } => [*from_row, *to_row].into(),
            SuggestionKind::Component { rows, .. } => rows.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionState {
    Open,
    HighlightShown,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub id: String,
    #[serde(flatten)]
    pub kind: SuggestionKind,
    pub state: SuggestionState,
}

const DEFAULT_GROUP: &str = "Tests";

fn invalid(id: &str, state: impl fmt::Display, op: impl fmt::Display) -> SessionError {
    SessionError::InvalidState { id: id.to_string(), state: state.to_string(), op: op.to_string() }
}

impl Session {
    pub fn test(&self, id: &str) -> Result<&TestItem, SessionError> {
        self.state().test(id).ok_or_else(|| SessionError::UnknownTest(id.to_string()))
    }

    pub fn suggestion(&self, id: &str) -> Result<&Suggestion, SessionError> {
        self.state().suggestion(id).ok_or_else(|| SessionError::UnknownSuggestion(id.to_string()))
    }

    fn change_test(&mut self, id: &str, state: Lifecycle) -> ArtifactChange {
        ArtifactChange::Test { id: id.to_string(), state, result: None, verdict: None, interpretation: None }
    }

    /// Creates the artifact a creation tool call describes.
    pub(crate) fn create_from_tool_call(&mut self, request: &ToolRequest) -> Result<Action, SessionError> {
        let kind = request.kind();
        if !kind.available_in(self.mode()) {
            return Err(SessionError::ModeViolation { tool: kind.name().to_string(), mode: self.mode() });
        }
        let (title, group, test_kind) = match request.clone() {
            ToolRequest::CreateVoltageTest { title, group, probe_pin, probe_rows, expected_mv } => {
                let default = format!("Voltage on {probe_pin}");
                (title.unwrap_or(default), group, TestKind::VoltageMeasurement { probe_pin, probe_rows, expected_mv })
            }
            ToolRequest::CreateSignalTest { title, group, drive_pin, steps, observe } => {
                if let ProbeTarget::Component(c) = &observe {
                    if self.schematic()?.netlist.component(c).is_none() {
                        return Err(crate::netlist::NetlistError::UnknownComponent(c.clone()).into());
                    }
                }
                let default = format!("Signal pattern on {drive_pin}");
                (title.unwrap_or(default), group, TestKind::SignalPattern { drive_pin, steps, observe })
            }
            ToolRequest::CreateInspectionTest { title, group, instruction, prompt } => {
                let default = "Visual inspection".to_string();
                (title.unwrap_or(default), group, TestKind::VisualInspection { instruction, prompt })
            }
            ToolRequest::CreateConnectionSuggestion { from_row, to_row, description } => {
                return self.create_suggestion(SuggestionKind::Connection { from_row, to_row, description });
            }
            ToolRequest::CreateComponentSuggestion { component_kind, rows, description } => {
                return self.create_suggestion(SuggestionKind::Component { component_kind, rows, description });
            }
            ToolRequest::HighlightRows { .. } | ToolRequest::GetSchematic => {
                unreachable!("not a creation tool")
            }
        };
        let group_title = group.filter(|g| !g.trim().is_empty()).unwrap_or_else(|| DEFAULT_GROUP.to_string());
        let state = self.state();
        let group_id = match state.groups.iter().find(|g| g.title == group_title) {
            Some(g) => g.id.clone(),
            None => format!("{}-g{}", self.id(), state.groups.len() + 1),
        };
        let id = format!("{}-t{}", self.id(), state.tests.len() + 1);
        let test = TestItem {
            id: id.clone(),
            title,
            group_id,
            kind: test_kind,
            state: Lifecycle::Created,
            result: None,
            verdict: None,
            interpretation: None,
        };
        self.emit(SessionEvent::ArtifactCreated(Artifact::Test { test, group_title }))?;
        Ok(Action::TestCreated { id })
    }

    fn create_suggestion(&mut self, kind: SuggestionKind) -> Result<Action, SessionError> {
        let id = format!("{}-s{}", self.id(), self.state().suggestions.len() + 1);
        let suggestion = Suggestion { id: id.clone(), kind, state: SuggestionState::Open };
        self.emit(SessionEvent::ArtifactCreated(Artifact::Suggestion { suggestion }))?;
        Ok(Action::SuggestionCreated { id })
    }

    /// Blinks the probe rows; repeating re-sends the frames.
    pub fn highlight_probes(&mut self, id: &str) -> Result<Vec<RowId>, SessionError> {
        let test = self.test(id)?.clone();
        let next = next_state(&test.kind, test.state, TestOp::HighlightProbes)
            .ok_or_else(|| invalid(id, test.state, TestOp::HighlightProbes))?;
        let rows = match &test.kind {
            TestKind::VoltageMeasurement { probe_rows, .. } => probe_rows.clone(),
            TestKind::SignalPattern { observe: ProbeTarget::Component(c), .. } => {
                rows_for_component(&self.schematic()?.netlist, c)?
            }
            _ => BTreeSet::new(),
        };
        let rows = self.highlight_rows(&rows, LedPattern::Blink)?;
        if test.state != next {
            let change = self.change_test(id, next);
            self.emit(SessionEvent::ArtifactStateChanged(change))?;
        }
        Ok(rows)
    }

    /// Performs the measurement and captures its result.
    pub fn run_test(&mut self, id: &str) -> Result<TestResult, SessionError> {
        let test = self.test(id)?.clone();
        let next =
            next_state(&test.kind, test.state, TestOp::Run).ok_or_else(|| invalid(id, test.state, TestOp::Run))?;
        if test.state != Lifecycle::Running {
            let change = self.change_test(id, Lifecycle::Running);
            self.emit(SessionEvent::ArtifactStateChanged(change))?;
        }
        let result = match &test.kind {
            TestKind::VoltageMeasurement { probe_pin, .. } => {
                let pin = *probe_pin;
                let r = self.device_op(|d| d.read_analog(pin))?;
                TestResult::Reading { value_mv: r.mv, floating: r.floating }
            }
            TestKind::SignalPattern { drive_pin, steps, observe } => {
                let total = sequence_duration(steps) as u32;
                let interval = self.options.sample_interval_ms.clamp(1, total.max(1));
                let (drive, observe) = (*drive_pin, observe.clone());
                let series = self.device_op(|d| {
                    d.play_sequence(drive, steps)?;
                    match observe {
                        ProbeTarget::Pin(pin) => {
                            let series = d.sample_series(pin, interval, total)?;
                            let last = series.samples.last().map_or(0, |s| s.t_ms);
                            // let the sequence finish so the pin is free again
                            d.wait_ms(total as u64 - last)?;
                            Ok(series)
                        }
                        ProbeTarget::Component(_) => {
                            d.wait_ms(total as u64)?;
                            Ok(TimeSeries { pin: drive, interval_ms: interval, samples: Vec::new() })
                        }
                    }
                })?;
                TestResult::Series { series }
            }
            TestKind::VisualInspection { .. } => unreachable!("rejected by next_state"),
        };
        self.emit(SessionEvent::ArtifactStateChanged(ArtifactChange::Test {
            id: id.to_string(),
            state: next,
            result: Some(result.clone()),
            verdict: None,
            interpretation: None,
        }))?;
        Ok(result)
    }

    /// Interrupts a running signal pattern.
    pub fn stop_test(&mut self, id: &str) -> Result<(), SessionError> {
        let test = self.test(id)?.clone();
        match test.kind {
            TestKind::SignalPattern { drive_pin, .. } => self.device_op(|d| d.stop(drive_pin)),
            _ => Err(invalid(id, test.state, "stop")),
        }
    }

    /// Attaches the result to the conversation and fixes the verdict.
    ///
    /// Visual inspections take the user's observation here.
    pub fn submit_result(&mut self, id: &str, observation: Option<&str>) -> Result<Verdict, SessionError> {
        let test = self.test(id)?.clone();
        let next = next_state(&test.kind, test.state, TestOp::Submit)
            .ok_or_else(|| invalid(id, test.state, TestOp::Submit))?;
        let observation = observation.map(str::trim).filter(|o| !o.is_empty());
        let result = match (&test.kind, observation) {
            (TestKind::VisualInspection { .. }, Some(text)) => {
                let result = TestResult::Observation { text: text.to_string() };
                self.emit(SessionEvent::ArtifactStateChanged(ArtifactChange::Test {
                    id: id.to_string(),
                    state: Lifecycle::ResultCaptured,
                    result: Some(result.clone()),
                    verdict: None,
                    interpretation: None,
                }))?;
                result
            }
            (TestKind::VisualInspection { .. }, None) if test.result.is_none() => {
                return Err(SessionError::MissingObservation(id.to_string()))
            }
            _ => test.result.clone().expect("captured results are present"),
        };
        let verdict = verdict(&test.kind, &result);
        let payload = json!({
            "test_id": id,
            "title": test.title,
            "test": test.kind,
            "result": result,
            "verdict": verdict,
        });
        self.append_turn(Role::Tool, TurnContent::Tool { name: "submit_result".into(), payload })?;
        self.emit(SessionEvent::ArtifactStateChanged(ArtifactChange::Test {
            id: id.to_string(),
            state: next,
            result: None,
            verdict: Some(verdict),
            interpretation: None,
        }))?;
        Ok(verdict)
    }

    /// Asks the agent to explain a submitted result.
    ///
    /// If the agent is unreachable the test is still interpreted, with a
    /// locally generated explanation, and the error is returned.
    pub fn interpret(&mut self, id: &str) -> Result<String, SessionError> {
        let test = self.test(id)?.clone();
        next_state(&test.kind, test.state, TestOp::Interpret)
            .ok_or_else(|| invalid(id, test.state, TestOp::Interpret))?;
        let result = test.result.clone().expect("submitted tests have results");
        let verdict = test.verdict.unwrap_or_else(|| verdict(&test.kind, &result));
        self.emit_status(StatusEvent::Thinking)?;
        let request = json!({"test_id": id, "title": test.title, "result": result, "verdict": verdict});
        self.append_text(Role::Developer, format!("Interpret this submitted test result for the user:\n{request}"))?;
        match self.run_cycle(CycleKind::Interpret { test_id: id.to_string() }) {
            Ok(outcome) => {
                self.record_interpretation(id, outcome.text.clone())?;
                self.emit_status(StatusEvent::Responded)?;
                Ok(outcome.text)
            }
            Err(e @ SessionError::AgentUnavailable(_)) => {
                self.record_interpretation(id, fallback_interpretation(&test.kind, &result))?;
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    /// Stores the explanation of a submitted test.
    pub(crate) fn record_interpretation(&mut self, id: &str, text: String) -> Result<(), SessionError> {
        let test = self.test(id)?;
        let next = next_state(&test.kind, test.state, TestOp::Interpret)
            .ok_or_else(|| invalid(id, test.state, TestOp::Interpret))?;
        self.emit(SessionEvent::ArtifactStateChanged(ArtifactChange::Test {
            id: id.to_string(),
            state: next,
            result: None,
            verdict: None,
            interpretation: Some(text),
        }))
    }

    pub fn highlight_suggestion(&mut self, id: &str) -> Result<Vec<RowId>, SessionError> {
        let s = self.suggestion(id)?.clone();
        if s.state == SuggestionState::Completed {
            return Err(invalid(id, "completed", "highlight"));
        }
        let rows = self.highlight_rows(&s.kind.rows(), LedPattern::Blink)?;
        if s.state != SuggestionState::HighlightShown {
            self.emit(SessionEvent::ArtifactStateChanged(ArtifactChange::Suggestion {
                id: id.to_string(),
                state: SuggestionState::HighlightShown,
            }))?;
        }
        Ok(rows)
    }

    pub fn complete_suggestion(&mut self, id: &str) -> Result<(), SessionError> {
        let s = self.suggestion(id)?.clone();
        if s.state == SuggestionState::Completed {
            return Err(invalid(id, "completed", "complete"));
        }
        self.emit(SessionEvent::ArtifactStateChanged(ArtifactChange::Suggestion {
            id: id.to_string(),
            state: SuggestionState::Completed,
        }))
    }
}
