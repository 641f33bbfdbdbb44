//! Line-framed JSON wire format for the augmented breadboard.
//!
//! Commands:
//!
//! ```text
//! {"cmd":"led","row":<1..50>,"pattern":"on"|"off"|"blink"|"blink_slow"}
//! {"cmd":"out_v","pin":"D0".."D3","mv":<0..5000>[,"ms":<1..60000>]}
//! {"cmd":"out_pwm","pin":"D0".."D3","duty":<0..255>[,"ms":<1..60000>]}
//! {"cmd":"read","pin":"A0".."A3"}
//! ```
//!
//! Responses are `{"ok":true[,"mv":<0..5000>]}` or `{"ok":false,"error":"<code>"}`.
//! Every frame is minified and terminated by a single LF.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{ROW_MAX, ROW_MIN};

pub const MV_MAX: u32 = 5000;
pub const DUTY_MAX: u32 = 255;
pub const DURATION_MIN_MS: u32 = 1;
pub const DURATION_MAX_MS: u32 = 60_000;
pub const ANALOG_PIN_COUNT: u8 = 4;
pub const OUTPUT_PIN_COUNT: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("row {0} is outside 1..=50")]
    RowOutOfRange(i64),
    #[error("{0} mV is outside 0..=5000")]
    MillivoltsOutOfRange(i64),
    #[error("duty {0} is outside 0..=255")]
    DutyOutOfRange(i64),
    #[error("duration {0} ms is outside 1..=60000")]
    DurationOutOfRange(i64),
    #[error("unknown pin {0:?}")]
    UnknownPin(String),
    #[error("malformed frame: {0}")]
    FrameMalformed(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::RowOutOfRange(_) => "row_out_of_range",
            ProtocolError::MillivoltsOutOfRange(_) => "millivolts_out_of_range",
            ProtocolError::DutyOutOfRange(_) => "duty_out_of_range",
            ProtocolError::DurationOutOfRange(_) => "duration_out_of_range",
            ProtocolError::UnknownPin(_) => "unknown_pin",
            ProtocolError::FrameMalformed(_) => "frame_malformed",
            ProtocolError::ContractViolation(_) => "contract_violation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedPattern {
    On,
    Off,
    Blink,
    BlinkSlow,
}

impl LedPattern {
    pub const ALL: [LedPattern; 4] = [LedPattern::On, LedPattern::Off, LedPattern::Blink, LedPattern::BlinkSlow];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PinBank {
    /// Analog input, `A0..A3`.
    Analog,
    /// Signal output (DAC or PWM), `D0..D3`.
    Output,
}

/// A board I/O pin from the fixed `A0..A3` / `D0..D3` namespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PinId {
    bank: PinBank,
    index: u8,
}

impl PinId {
    pub const A0: PinId = PinId { bank: PinBank::Analog, index: 0 };
    pub const A1: PinId = PinId { bank: PinBank::Analog, index: 1 };
    pub const A2: PinId = PinId { bank: PinBank::Analog, index: 2 };
    pub const A3: PinId = PinId { bank: PinBank::Analog, index: 3 };
    pub const D0: PinId = PinId { bank: PinBank::Output, index: 0 };
    pub const D1: PinId = PinId { bank: PinBank::Output, index: 1 };
    pub const D2: PinId = PinId { bank: PinBank::Output, index: 2 };
    pub const D3: PinId = PinId { bank: PinBank::Output, index: 3 };

    pub fn bank(self) -> PinBank {
        self.bank
    }

    pub fn is_analog(self) -> bool {
        self.bank == PinBank::Analog
    }

    pub fn is_output(self) -> bool {
        self.bank == PinBank::Output
    }

    pub fn analog() -> impl Iterator<Item = PinId> {
        (0..ANALOG_PIN_COUNT).map(|index| PinId { bank: PinBank::Analog, index })
    }

    pub fn outputs() -> impl Iterator<Item = PinId> {
        (0..OUTPUT_PIN_COUNT).map(|index| PinId { bank: PinBank::Output, index })
    }

    pub fn all() -> impl Iterator<Item = PinId> {
        Self::analog().chain(Self::outputs())
    }
}

impl fmt::Display for PinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.bank {
            PinBank::Analog => 'A',
            PinBank::Output => 'D',
        };
        write!(f, "{prefix}{}", self.index)
    }
}

impl FromStr for PinId {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ProtocolError::UnknownPin(s.to_string());
        let mut chars = s.chars();
        let (bank, count) = match chars.next() {
            Some('A') => (PinBank::Analog, ANALOG_PIN_COUNT),
            Some('D') => (PinBank::Output, OUTPUT_PIN_COUNT),
            _ => return Err(unknown()),
        };
        let rest = chars.as_str();
        if rest.len() != 1 {
            return Err(unknown());
        }
        let index = rest.parse::<u8>().map_err(|_| unknown())?;
        if index >= count {
            return Err(unknown());
        }
        Ok(PinId { bank, index })
    }
}

impl Serialize for PinId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PinId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A command to the board. Numeric fields are unchecked until [`validate_command`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd")]
pub enum BoardCommand {
    #[serde(rename = "led")]
    Led { row: u32, pattern: LedPattern },
    #[serde(rename = "out_v")]
    OutputVoltage {
        pin: PinId,
        #[serde(rename = "mv")]
        millivolts: u32,
        #[serde(rename = "ms", default, skip_serializing_if = "Option::is_none")]
        duration_ms: Option<u32>,
    },
    #[serde(rename = "out_pwm")]
    OutputPwm {
        pin: PinId,
        duty: u32,
        #[serde(rename = "ms", default, skip_serializing_if = "Option::is_none")]
        duration_ms: Option<u32>,
    },
    #[serde(rename = "read")]
    ReadAnalog { pin: PinId },
}

impl BoardCommand {
    pub fn led(row: u32, pattern: LedPattern) -> Self {
        BoardCommand::Led { row, pattern }
    }

    pub fn output_voltage(pin: PinId, millivolts: u32, duration_ms: Option<u32>) -> Self {
        BoardCommand::OutputVoltage { pin, millivolts, duration_ms }
    }

    pub fn read(pin: PinId) -> Self {
        BoardCommand::ReadAnalog { pin }
    }

    pub fn is_read(&self) -> bool {
        matches!(self, BoardCommand::ReadAnalog { .. })
    }
}

/// Checks every bounded field of `cmd`.
pub fn validate_command(cmd: &BoardCommand) -> Result<(), ProtocolError> {
    let duration = |ms: Option<u32>| match ms {
        Some(ms) if !(DURATION_MIN_MS..=DURATION_MAX_MS).contains(&ms) => {
            Err(ProtocolError::DurationOutOfRange(ms.into()))
        }
        _ => Ok(()),
    };
    let output_pin = |pin: PinId| {
        if pin.is_output() {
            Ok(())
        } else {
            Err(ProtocolError::UnknownPin(pin.to_string()))
        }
    };
    match *cmd {
        BoardCommand::Led { row, .. } => {
            if !(ROW_MIN..=ROW_MAX).contains(&row) {
                return Err(ProtocolError::RowOutOfRange(row.into()));
            }
        }
        BoardCommand::OutputVoltage { pin, millivolts, duration_ms } => {
            output_pin(pin)?;
            if millivolts > MV_MAX {
                return Err(ProtocolError::MillivoltsOutOfRange(millivolts.into()));
            }
            duration(duration_ms)?;
        }
        BoardCommand::OutputPwm { pin, duty, duration_ms } => {
            output_pin(pin)?;
            if duty > DUTY_MAX {
                return Err(ProtocolError::DutyOutOfRange(duty.into()));
            }
            duration(duration_ms)?;
        }
        BoardCommand::ReadAnalog { pin } => {
            if !pin.is_analog() {
                return Err(ProtocolError::UnknownPin(pin.to_string()));
            }
        }
    }
    Ok(())
}

/// Encodes a validated command as one LF-terminated frame.
pub fn encode_command(cmd: &BoardCommand) -> Vec<u8> {
    let mut out = serde_json::to_vec(cmd).expect("commands always serialize");
    out.push(b'\n');
    out
}

/// Decodes one command frame and validates it.
pub fn decode_command(line: &[u8]) -> Result<BoardCommand, ProtocolError> {
    let body = frame_body(line)?;
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| ProtocolError::FrameMalformed(e.to_string()))?;
    if let Some(pin) = value.get("pin").and_then(|p| p.as_str()) {
        pin.parse::<PinId>()?;
    }
    // Report integers that do not fit the field type as range errors.
    let wide = |key: &str| value.get(key).and_then(|v| v.as_i64()).filter(|n| u32::try_from(*n).is_err());
    if let Some(n) = wide("row") {
        return Err(ProtocolError::RowOutOfRange(n));
    }
    if let Some(n) = wide("mv") {
        return Err(ProtocolError::MillivoltsOutOfRange(n));
    }
    if let Some(n) = wide("duty") {
        return Err(ProtocolError::DutyOutOfRange(n));
    }
    if let Some(n) = wide("ms") {
        return Err(ProtocolError::DurationOutOfRange(n));
    }
    let cmd: BoardCommand = serde_json::from_value(value).map_err(|e| ProtocolError::FrameMalformed(e.to_string()))?;
    validate_command(&cmd)?;
    Ok(cmd)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardResponse {
    pub ok: bool,
    #[serde(rename = "mv", default, skip_serializing_if = "Option::is_none")]
    pub value_mv: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BoardResponse {
    pub fn ok() -> Self {
        BoardResponse { ok: true, value_mv: None, error: None }
    }

    pub fn reading(mv: u32) -> Self {
        BoardResponse { ok: true, value_mv: Some(mv), error: None }
    }

    pub fn error(code: impl Into<String>) -> Self {
        BoardResponse { ok: false, value_mv: None, error: Some(code.into()) }
    }

    fn check(&self) -> Result<(), ProtocolError> {
        let violation = |m: &str| Err(ProtocolError::ContractViolation(m.to_string()));
        match (self.ok, &self.error, self.value_mv) {
            (true, Some(_), _) => violation("ok response carries an error"),
            (false, None, _) => violation("failed response carries no error code"),
            (false, Some(_), Some(_)) => violation("failed response carries a reading"),
            (_, _, Some(mv)) if mv > MV_MAX => violation("reading above 5000 mV"),
            _ => Ok(()),
        }
    }

    /// Checks that a successful response has the shape `cmd` calls for:
    /// reads carry `mv`, everything else does not.
    pub fn check_for(&self, cmd: &BoardCommand) -> Result<(), ProtocolError> {
        self.check()?;
        if self.ok && cmd.is_read() != self.value_mv.is_some() {
            return Err(ProtocolError::ContractViolation(if cmd.is_read() {
                "read response without a reading".into()
            } else {
                "non-read response carries a reading".into()
            }));
        }
        Ok(())
    }
}

pub fn encode_response(resp: &BoardResponse) -> Vec<u8> {
    let mut out = serde_json::to_vec(resp).expect("responses always serialize");
    out.push(b'\n');
    out
}

/// Decodes one response frame. Unknown keys are ignored.
pub fn decode_response(line: &[u8]) -> Result<BoardResponse, ProtocolError> {
    let body = frame_body(line)?;
    let resp: BoardResponse = serde_json::from_slice(body).map_err(|e| ProtocolError::FrameMalformed(e.to_string()))?;
    resp.check()?;
    Ok(resp)
}

fn frame_body(line: &[u8]) -> Result<&[u8], ProtocolError> {
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    let body = body.strip_suffix(b"\r").unwrap_or(body);
    if body.contains(&b'\n') {
        return Err(ProtocolError::FrameMalformed("more than one frame".into()));
    }
    if body.is_empty() {
        return Err(ProtocolError::FrameMalformed("empty frame".into()));
    }
    Ok(body)
}
