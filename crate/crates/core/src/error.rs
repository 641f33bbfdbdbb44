use thiserror::Error;

use crate::device::DeviceError;
use crate::netlist::NetlistError;
use crate::protocol::ProtocolError;
use crate::session::Mode;

/// Coarse class of a failure, used to pick a transport status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorClass {
    /// Bad input; the request can be fixed by the caller.
    Validation,
    /// The target exists but is in the wrong state for the operation.
    Lifecycle,
    NotFound,
    Agent,
    Device,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("{tool} is not available in {mode:?} mode")]
    ModeViolation { tool: String, mode: Mode },
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("parameter {param} out of bounds: {detail}")]
    ParamOutOfBounds { param: String, detail: String },
    #[error("invalid tool parameters: {0}")]
    InvalidParams(String),
    #[error("no schematic has been synced")]
    NoSchematic,
    #[error("query text is empty")]
    EmptyQuery,
    #[error("agent unavailable: {0}")]
    AgentUnavailable(String),
    #[error("unknown test {0:?}")]
    UnknownTest(String),
    #[error("unknown suggestion {0:?}")]
    UnknownSuggestion(String),
    #[error("{id} cannot {op} while {state}")]
    InvalidState { id: String, state: String, op: String },
    #[error("visual inspection {0} needs an observation")]
    MissingObservation(String),
    #[error("session log write failed: {0}")]
    Log(String),
}

impl From<ProtocolError> for SessionError {
    fn from(e: ProtocolError) -> Self {
        SessionError::Device(DeviceError::Protocol(e))
    }
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Netlist(e) => e.code(),
            SessionError::Device(e) => e.code(),
            SessionError::ModeViolation { .. } => "mode_violation",
            SessionError::UnknownTool(_) => "unknown_tool",
            SessionError::ParamOutOfBounds { .. } => "param_out_of_bounds",
            SessionError::InvalidParams(_) => "invalid_params",
            SessionError::NoSchematic => "no_schematic",
            SessionError::EmptyQuery => "empty_query",
            SessionError::AgentUnavailable(_) => "agent_unavailable",
            SessionError::UnknownTest(_) => "unknown_test",
            SessionError::UnknownSuggestion(_) => "unknown_suggestion",
            SessionError::InvalidState { .. } => "invalid_state",
            SessionError::MissingObservation(_) => "missing_observation",
            SessionError::Log(_) => "log_write_failed",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            SessionError::Netlist(_) => ErrorClass::Validation,
            SessionError::Device(e) => match e {
                DeviceError::DeviceGone | DeviceError::Transport(_) | DeviceError::Rejected(_) => ErrorClass::Device,
                DeviceError::PinBusy(_) => ErrorClass::Lifecycle,
                DeviceError::Protocol(_) | DeviceError::InvalidFixture(_) | DeviceError::InvalidSampling(_) => {
                    ErrorClass::Validation
                }
            },
            SessionError::ModeViolation { .. } | SessionError::NoSchematic | SessionError::InvalidState { .. } => {
                ErrorClass::Lifecycle
            }
            SessionError::UnknownTool(_)
            | SessionError::ParamOutOfBounds { .. }
            | SessionError::InvalidParams(_)
            | SessionError::EmptyQuery
            | SessionError::MissingObservation(_) => ErrorClass::Validation,
            SessionError::AgentUnavailable(_) => ErrorClass::Agent,
            SessionError::UnknownTest(_) | SessionError::UnknownSuggestion(_) => ErrorClass::NotFound,
            SessionError::Log(_) => ErrorClass::Internal,
        }
    }

    pub(crate) fn out_of_bounds(param: &str, detail: impl Into<String>) -> Self {
        SessionError::ParamOutOfBounds { param: param.to_string(), detail: detail.into() }
    }
}
