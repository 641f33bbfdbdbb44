//! Tool schemas offered to the agent and typed parsing of its calls.
//!
//! Every bound the board enforces (rows 1..50, 0..5000 mV, 1..60000 ms) is
//! written into the JSON schema sent to the agent and checked again here
//! before anything reaches the device.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::device::SequenceStep;
use crate::error::SessionError;
use crate::netlist::RowId;
use crate::protocol::{LedPattern, PinId, DURATION_MAX_MS, DURATION_MIN_MS, MV_MAX};
use crate::session::Mode;
use crate::test_engine::{MvRange, ProbeTarget};

/// Upper bound on steps in one signal pattern.
pub const MAX_SEQUENCE_STEPS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ToolKind {
    HighlightRows,
    GetSchematic,
    CreateVoltageTest,
    CreateSignalTest,
    CreateInspectionTest,
    CreateConnectionSuggestion,
    CreateComponentSuggestion,
}

impl ToolKind {
    pub const ALL: [ToolKind; 7] = [
        ToolKind::HighlightRows,
        ToolKind::GetSchematic,
        ToolKind::CreateVoltageTest,
        ToolKind::CreateSignalTest,
        ToolKind::CreateInspectionTest,
        ToolKind::CreateConnectionSuggestion,
        ToolKind::CreateComponentSuggestion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToolKind::HighlightRows => "highlight_rows",
            ToolKind::GetSchematic => "get_schematic",
            ToolKind::CreateVoltageTest => "create_voltage_test",
            ToolKind::CreateSignalTest => "create_signal_test",
            ToolKind::CreateInspectionTest => "create_inspection_test",
            ToolKind::CreateConnectionSuggestion => "create_connection_suggestion",
            ToolKind::CreateComponentSuggestion => "create_component_suggestion",
        }
    }

    pub fn from_name(name: &str) -> Option<ToolKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn creates_test(self) -> bool {
        matches!(self, ToolKind::CreateVoltageTest | ToolKind::CreateSignalTest | ToolKind::CreateInspectionTest)
    }

    pub fn creates_suggestion(self) -> bool {
        matches!(self, ToolKind::CreateConnectionSuggestion | ToolKind::CreateComponentSuggestion)
    }

    /// Tests belong to Test mode, suggestions to Ask mode; the rest work anywhere.
    pub fn available_in(self, mode: Mode) -> bool {
        if self.creates_test() {
            mode == Mode::Test
        } else if self.creates_suggestion() {
            mode == Mode::Ask
        } else {
            true
        }
    }

    pub fn schema(self) -> &'static ToolSchema {
        &REGISTRY[self as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSchema {
    pub name: &'static str,
    pub description: &'static str,
    /// JSON schema for the arguments object.
    pub parameters: Value,
    pub modes: Vec<Mode>,
}

static REGISTRY: LazyLock<Vec<ToolSchema>> = LazyLock::new(|| ToolKind::ALL.into_iter().map(build_schema).collect());

pub fn registry() -> &'static [ToolSchema] {
    &REGISTRY
}

/// Schemas offered to the agent in `mode`.
pub fn tools_for_mode(mode: Mode) -> Vec<&'static ToolSchema> {
    ToolKind::ALL.into_iter().filter(|k| k.available_in(mode)).map(ToolKind::schema).collect()
}

fn row_schema() -> Value {
    json!({"type": "integer", "minimum": 1, "maximum": 50})
}

fn rows_schema() -> Value {
    json!({"type": "array", "items": row_schema(), "minItems": 1, "maxItems": 50})
}

fn group_props() -> Value {
    json!({
        "title": {"type": "string", "description": "Short name shown in the test manager."},
        "group": {"type": "string", "description": "Group title; tests sharing a title are grouped together."}
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

fn object(properties: Value, required: &[&str]) -> Value {
    json!({
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": false
    })
}

fn build_schema(kind: ToolKind) -> ToolSchema {
    let analog_pin = json!({"type": "string", "enum": ["A0", "A1", "A2", "A3"]});
    let output_pin = json!({"type": "string", "enum": ["D0", "D1", "D2", "D3"]});
    let mv = json!({"type": "integer", "minimum": 0, "maximum": MV_MAX});
    let ms = json!({"type": "integer", "minimum": DURATION_MIN_MS, "maximum": DURATION_MAX_MS, "description": "milliseconds"});

    let (description, parameters) = match kind {
        ToolKind::HighlightRows => (
            "Light the indicator LEDs of breadboard rows to show the user where to look or connect.",
            object(
                json!({
                    "rows": rows_schema(),
                    "pattern": {"type": "string", "enum": ["on", "off", "blink", "blink_slow"]}
                }),
                &["rows"],
            ),
        ),
        ToolKind::GetSchematic => ("Return the current schematic netlist as YAML.", object(json!({}), &[])),
        ToolKind::CreateVoltageTest => (
            "Create a test that reads the voltage at probed breadboard rows through an analog input pin.",
            object(
                merge(
                    group_props(),
                    json!({
                        "probe_pin": analog_pin,
                        "probe_rows": rows_schema(),
                        "expected_mv": {"type": "array", "items": mv, "minItems": 2, "maxItems": 2,
                                        "description": "inclusive [low, high] range in millivolts"}
                    }),
                ),
                &["probe_pin", "probe_rows"],
            ),
        ),
        ToolKind::CreateSignalTest => (
            "Create a test that drives a high/low voltage pattern on an output pin and records the response over time.",
            object(
                merge(
                    group_props(),
                    json!({
                        "drive_pin": output_pin,
                        "steps": {
                            "type": "array",
                            "minItems": 1,
                            "maxItems": MAX_SEQUENCE_STEPS,
                            "items": object(json!({"mv": mv, "duration_ms": ms}), &["mv", "duration_ms"])
                        },
                        "observe": {
                            "type": "object",
                            "description": "Either {\"pin\": analog pin} to sample, or {\"component\": id} to watch.",
                            "properties": {"pin": analog_pin, "component": {"type": "string"}},
                            "additionalProperties": false
                        }
                    }),
                ),
                &["drive_pin", "steps", "observe"],
            ),
        ),
        ToolKind::CreateInspectionTest => (
            "Create a test that asks the user to look at the circuit and report what they see.",
            object(
                merge(
                    group_props(),
                    json!({
                        "instruction": {"type": "string"},
                        "prompt": {"type": "string", "description": "Question the user answers in the observation field."}
                    }),
                ),
                &["instruction", "prompt"],
            ),
        ),
        ToolKind::CreateConnectionSuggestion => (
            "Suggest connecting two breadboard rows to correct a wiring mistake.",
            object(
                json!({"from_row": row_schema(), "to_row": row_schema(), "description": {"type": "string"}}),
                &["from_row", "to_row", "description"],
            ),
        ),
        ToolKind::CreateComponentSuggestion => (
            "Suggest adding a missing component across the given breadboard rows.",
            object(
                json!({"component_kind": {"type": "string"}, "rows": rows_schema(), "description": {"type": "string"}}),
                &["component_kind", "rows", "description"],
            ),
        ),
    };
    ToolSchema {
        name: kind.name(),
        description,
        parameters,
        modes: [Mode::Ask, Mode::Test].into_iter().filter(|m| kind.available_in(*m)).collect(),
    }
}

/// A tool invocation requested by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

impl ToolCall {
    pub fn new(name: &str, arguments: Value) -> Self {
        ToolCall { id: None, name: name.to_string(), arguments }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolRequest {
    HighlightRows {
        rows: BTreeSet<RowId>,
        pattern: LedPattern,
    },
    GetSchematic,
    CreateVoltageTest {
        title: Option<String>,
        group: Option<String>,
        probe_pin: PinId,
        probe_rows: BTreeSet<RowId>,
        expected_mv: Option<MvRange>,
    },
    CreateSignalTest {
        title: Option<String>,
        group: Option<String>,
        drive_pin: PinId,
        steps: Vec<SequenceStep>,
        observe: ProbeTarget,
    },
    CreateInspectionTest {
        title: Option<String>,
        group: Option<String>,
        instruction: String,
        prompt: String,
    },
    CreateConnectionSuggestion {
        from_row: RowId,
        to_row: RowId,
        description: String,
    },
    CreateComponentSuggestion {
        component_kind: String,
        rows: BTreeSet<RowId>,
        description: String,
    },
}

impl ToolRequest {
    pub fn kind(&self) -> ToolKind {
        match self {
            ToolRequest::HighlightRows { .. } => ToolKind::HighlightRows,
            ToolRequest::GetSchematic => ToolKind::GetSchematic,
            ToolRequest::CreateVoltageTest { .. } => ToolKind::CreateVoltageTest,
            ToolRequest::CreateSignalTest { .. } => ToolKind::CreateSignalTest,
            ToolRequest::CreateInspectionTest { .. } => ToolKind::CreateInspectionTest,
            ToolRequest::CreateConnectionSuggestion { .. } => ToolKind::CreateConnectionSuggestion,
            ToolRequest::CreateComponentSuggestion { .. } => ToolKind::CreateComponentSuggestion,
        }
    }
}

// Wire shapes keep numbers wide so out-of-range values are reported as
// bounds errors instead of type errors.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HighlightArgs {
    rows: Vec<i64>,
    #[serde(default)]
    pattern: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct NoArgs {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VoltageArgs {
    title: Option<String>,
    group: Option<String>,
    probe_pin: String,
    probe_rows: Vec<i64>,
    expected_mv: Option<Vec<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepArgs {
    mv: i64,
    duration_ms: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObserveArgs {
    pin: Option<String>,
    component: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalArgs {
    title: Option<String>,
    group: Option<String>,
    drive_pin: String,
    steps: Vec<StepArgs>,
    observe: ObserveArgs,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InspectionArgs {
    title: Option<String>,
    group: Option<String>,
    instruction: String,
    prompt: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConnectionArgs {
    from_row: i64,
    to_row: i64,
    description: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentArgs {
    component_kind: String,
    rows: Vec<i64>,
    description: String,
}

fn args<T: for<'de> Deserialize<'de>>(value: &Value) -> Result<T, SessionError> {
    let value = if value.is_null() { json!({}) } else { value.clone() };
    serde_json::from_value(value).map_err(|e| SessionError::InvalidParams(e.to_string()))
}

fn row(param: &str, value: i64) -> Result<RowId, SessionError> {
    RowId::new(value).map_err(|_| SessionError::out_of_bounds(param, format!("row {value} is outside 1..=50")))
}

fn rows(param: &str, values: &[i64]) -> Result<BTreeSet<RowId>, SessionError> {
    if values.is_empty() {
        return Err(SessionError::out_of_bounds(param, "at least one row is required"));
    }
    values.iter().map(|v| row(param, *v)).collect()
}

fn millivolts(param: &str, value: i64) -> Result<u32, SessionError> {
    if (0..=MV_MAX as i64).contains(&value) {
        Ok(value as u32)
    } else {
        Err(SessionError::out_of_bounds(param, format!("{value} mV is outside 0..=5000")))
    }
}

fn duration(param: &str, value: i64) -> Result<u32, SessionError> {
    if (DURATION_MIN_MS as i64..=DURATION_MAX_MS as i64).contains(&value) {
        Ok(value as u32)
    } else {
        Err(SessionError::out_of_bounds(param, format!("{value} ms is outside 1..=60000")))
    }
}

fn pin(param: &str, name: &str, analog: bool) -> Result<PinId, SessionError> {
    let bank = if analog { "analog-in (A0..A3)" } else { "signal-out (D0..D3)" };
    match name.parse::<PinId>() {
        Ok(p) if p.is_analog() == analog => Ok(p),
        _ => Err(SessionError::out_of_bounds(param, format!("{name:?} is not a {bank} pin"))),
    }
}

fn pattern(name: Option<&str>) -> Result<LedPattern, SessionError> {
    match name {
        None => Ok(LedPattern::Blink),
        Some(p) => serde_json::from_value(Value::String(p.to_string()))
            .map_err(|_| SessionError::out_of_bounds("pattern", format!("{p:?} is not on/off/blink/blink_slow"))),
    }
}

/// Resolves and bounds-checks a call without looking at the session mode.
pub fn parse_call(call: &ToolCall) -> Result<ToolRequest, SessionError> {
    let kind = ToolKind::from_name(&call.name).ok_or_else(|| SessionError::UnknownTool(call.name.clone()))?;
    parse_args(kind, &call.arguments)
}

pub fn parse_args(kind: ToolKind, value: &Value) -> Result<ToolRequest, SessionError> {
    Ok(match kind {
        ToolKind::HighlightRows => {
            let a: HighlightArgs = args(value)?;
            ToolRequest::HighlightRows { rows: rows("rows", &a.rows)?, pattern: pattern(a.pattern.as_deref())? }
        }
        ToolKind::GetSchematic => {
            let _: NoArgs = args(value)?;
            ToolRequest::GetSchematic
        }
        ToolKind::CreateVoltageTest => {
            let a: VoltageArgs = args(value)?;
            let expected_mv = match a.expected_mv.as_deref() {
                None => None,
                Some([lo, hi]) => {
                    let (lo, hi) = (millivolts("expected_mv", *lo)?, millivolts("expected_mv", *hi)?);
                    if lo > hi {
                        return Err(SessionError::out_of_bounds("expected_mv", format!("low {lo} exceeds high {hi}")));
                    }
                    Some(MvRange { low: lo, high: hi })
                }
                Some(other) => {
                    return Err(SessionError::InvalidParams(format!(
                        "expected_mv needs exactly two values, got {}",
                        other.len()
                    )))
                }
            };
            ToolRequest::CreateVoltageTest {
                title: a.title,
                group: a.group,
                probe_pin: pin("probe_pin", &a.probe_pin, true)?,
                probe_rows: rows("probe_rows", &a.probe_rows)?,
                expected_mv,
            }
        }
        ToolKind::CreateSignalTest => {
            let a: SignalArgs = args(value)?;
            if a.steps.is_empty() || a.steps.len() > MAX_SEQUENCE_STEPS {
                return Err(SessionError::out_of_bounds(
                    "steps",
                    format!("{} steps; between 1 and {MAX_SEQUENCE_STEPS} are allowed", a.steps.len()),
                ));
            }
            let steps = a
                .steps
                .iter()
                .map(|s| {
                    Ok(SequenceStep::new(millivolts("steps.mv", s.mv)?, duration("steps.duration_ms", s.duration_ms)?))
                })
                .collect::<Result<Vec<_>, SessionError>>()?;
            let observe = match (a.observe.pin, a.observe.component) {
                (Some(p), None) => ProbeTarget::Pin(pin("observe.pin", &p, true)?),
                (None, Some(c)) if !c.is_empty() => ProbeTarget::Component(c),
                _ => return Err(SessionError::InvalidParams("observe needs exactly one of pin or component".into())),
            };
            ToolRequest::CreateSignalTest {
                title: a.title,
                group: a.group,
                drive_pin: pin("drive_pin", &a.drive_pin, false)?,
                steps,
                observe,
            }
        }
        ToolKind::CreateInspectionTest => {
            let a: InspectionArgs = args(value)?;
            ToolRequest::CreateInspectionTest {
                title: a.title,
                group: a.group,
                instruction: a.instruction,
                prompt: a.prompt,
            }
        }
        ToolKind::CreateConnectionSuggestion => {
            let a: ConnectionArgs = args(value)?;
            ToolRequest::CreateConnectionSuggestion {
                from_row: row("from_row", a.from_row)?,
                to_row: row("to_row", a.to_row)?,
                description: a.description,
            }
        }
        ToolKind::CreateComponentSuggestion => {
            let a: ComponentArgs = args(value)?;
            ToolRequest::CreateComponentSuggestion {
                component_kind: a.component_kind,
                rows: rows("rows", &a.rows)?,
                description: a.description,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_indexed_by_kind() {
        for kind in ToolKind::ALL {
            assert_eq!(kind.schema().name, kind.name());
            assert_eq!(ToolKind::from_name(kind.name()), Some(kind));
        }
    }

    #[test]
    fn test_tools_only_in_test_mode() {
        for schema in registry() {
            let kind = ToolKind::from_name(schema.name).unwrap();
            if kind.creates_test() {
                assert_eq!(schema.modes, vec![Mode::Test]);
            }
        }
        let ask: Vec<_> = tools_for_mode(Mode::Ask).iter().map(|s| s.name).collect();
        assert_eq!(
            ask,
            ["highlight_rows", "get_schematic", "create_connection_suggestion", "create_component_suggestion"]
        );
    }

    #[test]
    fn row_bounds() {
        let call = ToolCall::new("highlight_rows", json!({"rows": [51], "pattern": "on"}));
        assert!(matches!(parse_call(&call), Err(SessionError::ParamOutOfBounds { .. })));
        let call = ToolCall::new("highlight_rows", json!({"rows": [1, 50, 50]}));
        assert_eq!(
            parse_call(&call),
            Ok(ToolRequest::HighlightRows {
                rows: [RowId::new(1).unwrap(), RowId::new(50).unwrap()].into(),
                pattern: LedPattern::Blink
            })
        );
        let call = ToolCall::new("highlight_rows", json!({"rows": []}));
        assert!(matches!(parse_call(&call), Err(SessionError::ParamOutOfBounds { .. })));
    }

    #[test]
    fn signal_steps_bounds() {
        let ok = json!({"drive_pin": "D0", "steps": [{"mv": 5000, "duration_ms": 60000}], "observe": {"pin": "A0"}});
        assert!(parse_args(ToolKind::CreateSignalTest, &ok).is_ok());
        for bad in [
            json!({"drive_pin": "D0", "steps": [{"mv": 5001, "duration_ms": 1}], "observe": {"pin": "A0"}}),
            json!({"drive_pin": "D0", "steps": [{"mv": 0, "duration_ms": 0}], "observe": {"pin": "A0"}}),
            json!({"drive_pin": "A0", "steps": [{"mv": 0, "duration_ms": 1}], "observe": {"pin": "A0"}}),
            json!({"drive_pin": "D0", "steps": [], "observe": {"pin": "A0"}}),
            json!({"drive_pin": "D0", "steps": [{"mv": 0, "duration_ms": 1}], "observe": {"pin": "D1"}}),
        ] {
            assert!(
                matches!(parse_args(ToolKind::CreateSignalTest, &bad), Err(SessionError::ParamOutOfBounds { .. })),
                "{bad}"
            );
        }
    }

    #[test]
    fn malformed_args() {
        let call = ToolCall::new("create_voltage_test", json!({"probe_pin": "A0", "probe_rows": [3], "bogus": 1}));
        assert!(matches!(parse_call(&call), Err(SessionError::InvalidParams(_))));
        let call =
            ToolCall::new("create_voltage_test", json!({"probe_pin": "A0", "probe_rows": [3], "expected_mv": [1]}));
        assert!(matches!(parse_call(&call), Err(SessionError::InvalidParams(_))));
        let call =
            ToolCall::new("create_voltage_test", json!({"probe_pin": "A0", "probe_rows": [3], "expected_mv": [9, 1]}));
        assert!(matches!(parse_call(&call), Err(SessionError::ParamOutOfBounds { .. })));
        assert_eq!(parse_call(&ToolCall::new("get_schematic", Value::Null)), Ok(ToolRequest::GetSchematic));
        assert_eq!(
            parse_call(&ToolCall::new("format_disk", json!({}))),
            Err(SessionError::UnknownTool("format_disk".into()))
        );
    }
}
