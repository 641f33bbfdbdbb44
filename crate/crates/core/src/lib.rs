//! Breadboard assistant core: netlists, the board wire protocol, device
//! backends, tool dispatch, tests, and event-sourced sessions.

pub mod agent;
pub mod device;
pub mod error;
pub mod log;
pub mod netlist;
pub mod protocol;
pub mod session;
pub mod test_engine;
pub mod tools;

pub use agent::{AgentClient, AgentReply, AgentRequest, Role, ScriptedAgent, Tape, Turn, TurnContent};
pub use device::{Device, DeviceError, DeviceHandle, SimDevice, TimeSeries, TransferModel, VirtualFixture};
pub use error::{ErrorClass, SessionError};
pub use log::{replay, JsonlLog, MemoryLog, ReplayError, SessionLogRecord};
pub use netlist::{CanonicalNetlist, NetlistError, RowId};
pub use protocol::{BoardCommand, BoardResponse, LedPattern, PinId, ProtocolError};
pub use session::{Action, AgentOutcome, CycleKind, Mode, Session, SessionEvent, SessionState, StatusEvent};
pub use test_engine::{Lifecycle, MvRange, TestItem, TestKind, TestResult, Verdict};
pub use tools::{ToolCall, ToolKind};
