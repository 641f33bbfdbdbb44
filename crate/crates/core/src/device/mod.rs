//! Executing board commands.
//!
//! [`Device`] is the uniform interface; [`SimDevice`] answers from a
//! [`VirtualFixture`] on a virtual clock and [`SerialDevice`] speaks the wire
//! format over any byte stream.

mod fixture;
mod serial;
mod sim;

use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{BoardCommand, BoardResponse, PinId, ProtocolError};

pub use fixture::{TransferModel, VirtualFixture};
pub use serial::SerialDevice;
pub use sim::{SimDevice, SimOptions};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("device is gone")]
    DeviceGone,
    #[error("pin {0} is busy with a timed output")]
    PinBusy(PinId),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
    #[error("invalid sampling request: {0}")]
    InvalidSampling(String),
    #[error("board rejected command: {0}")]
    Rejected(String),
    #[error("transport error: {0}")]
    Transport(String),
}

impl DeviceError {
    pub fn code(&self) -> &'static str {
        match self {
            DeviceError::DeviceGone => "device_gone",
            DeviceError::PinBusy(_) => "pin_busy",
            DeviceError::Protocol(e) => e.code(),
            DeviceError::InvalidFixture(_) => "invalid_fixture",
            DeviceError::InvalidSampling(_) => "invalid_sampling",
            DeviceError::Rejected(_) => "board_rejected",
            DeviceError::Transport(_) => "transport_error",
        }
    }
}

/// One analog reading on the 1 mV grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reading {
    pub mv: u32,
    /// Nothing drives the pin; `mv` is reported as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub floating: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub t_ms: u64,
    pub value_mv: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub pin: PinId,
    pub interval_ms: u32,
    pub samples: Vec<Sample>,
}

impl TimeSeries {
    /// `t_ms,value_mv` with a header row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t_ms", "value_mv"]).expect("in-memory write");
        for s in &self.samples {
            w.write_record([s.t_ms.to_string(), s.value_mv.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceStep {
    pub mv: u32,
    pub duration_ms: u32,
}

impl SequenceStep {
    pub fn new(mv: u32, duration_ms: u32) -> Self {
        SequenceStep { mv, duration_ms }
    }

    pub fn as_command(&self, pin: PinId) -> BoardCommand {
        BoardCommand::output_voltage(pin, self.mv, Some(self.duration_ms))
    }
}

pub fn sequence_duration(steps: &[SequenceStep]) -> u64 {
    steps.iter().map(|s| s.duration_ms as u64).sum()
}

pub trait Device: Send {
    /// Runs one validated command.
    fn execute(&mut self, cmd: &BoardCommand) -> Result<BoardResponse, DeviceError>;

    /// Reads an analog pin, keeping the floating flag the wire format drops.
    fn read_analog(&mut self, pin: PinId) -> Result<Reading, DeviceError>;

    /// Starts driving `pin` through `steps` without blocking; the pin returns
    /// to 0 mV after the last step.
    fn play_sequence(&mut self, pin: PinId, steps: &[SequenceStep]) -> Result<(), DeviceError>;

    /// Interrupts any timed output on `pin` and drives it to 0 mV.
    fn stop(&mut self, pin: PinId) -> Result<(), DeviceError>;

    /// Lets `ms` of device time pass.
    fn wait_ms(&mut self, ms: u64) -> Result<(), DeviceError>;

    /// Milliseconds since the device was opened.
    fn now_ms(&self) -> u64;

    /// Frames sent to the board since the previous call.
    fn drain_frames(&mut self) -> Vec<BoardCommand>;

    /// Samples `pin` every `interval_ms` for `duration_ms`, inclusive of both ends.
    fn sample_series(&mut self, pin: PinId, interval_ms: u32, duration_ms: u32) -> Result<TimeSeries, DeviceError> {
        if !pin.is_analog() {
            return Err(ProtocolError::UnknownPin(pin.to_string()).into());
        }
        if interval_ms == 0 {
            return Err(DeviceError::InvalidSampling("interval must be at least 1 ms".into()));
        }
        if duration_ms < interval_ms {
            return Err(DeviceError::InvalidSampling(format!(
                "duration {duration_ms} ms is shorter than the interval {interval_ms} ms"
            )));
        }
        let count = duration_ms / interval_ms + 1;
        let mut samples = Vec::with_capacity(count as usize);
        for k in 0..count {
            if k > 0 {
                self.wait_ms(interval_ms as u64)?;
            }
            let reading = self.read_analog(pin)?;
            samples.push(Sample { t_ms: k as u64 * interval_ms as u64, value_mv: reading.mv });
        }
        Ok(TimeSeries { pin, interval_ms, samples })
    }
}

impl<D: Device + ?Sized> Device for Box<D> {
    fn execute(&mut self, cmd: &BoardCommand) -> Result<BoardResponse, DeviceError> {
        (**self).execute(cmd)
    }
    fn read_analog(&mut self, pin: PinId) -> Result<Reading, DeviceError> {
        (**self).read_analog(pin)
    }
    fn play_sequence(&mut self, pin: PinId, steps: &[SequenceStep]) -> Result<(), DeviceError> {
        (**self).play_sequence(pin, steps)
    }
    fn stop(&mut self, pin: PinId) -> Result<(), DeviceError> {
        (**self).stop(pin)
    }
    fn wait_ms(&mut self, ms: u64) -> Result<(), DeviceError> {
        (**self).wait_ms(ms)
    }
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }
    fn drain_frames(&mut self) -> Vec<BoardCommand> {
        (**self).drain_frames()
    }
    fn sample_series(&mut self, pin: PinId, interval_ms: u32, duration_ms: u32) -> Result<TimeSeries, DeviceError> {
        (**self).sample_series(pin, interval_ms, duration_ms)
    }
}

/// Cloneable handle that serializes every call through one lock.
///
/// All clones address the same device, so a test can keep a clone to inspect
/// simulator state while a session owns another.
#[derive(Debug)]
pub struct DeviceHandle<D> {
    inner: Arc<Mutex<D>>,
}

impl<D> Clone for DeviceHandle<D> {
    fn clone(&self) -> Self {
        DeviceHandle { inner: Arc::clone(&self.inner) }
    }
}

impl<D: Device> DeviceHandle<D> {
    pub fn new(device: D) -> Self {
        DeviceHandle { inner: Arc::new(Mutex::new(device)) }
    }

    pub fn lock(&self) -> MutexGuard<'_, D> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl<D: Device> Device for DeviceHandle<D> {
    fn execute(&mut self, cmd: &BoardCommand) -> Result<BoardResponse, DeviceError> {
        self.lock().execute(cmd)
    }
    fn read_analog(&mut self, pin: PinId) -> Result<Reading, DeviceError> {
        self.lock().read_analog(pin)
    }
    fn play_sequence(&mut self, pin: PinId, steps: &[SequenceStep]) -> Result<(), DeviceError> {
        self.lock().play_sequence(pin, steps)
    }
    fn stop(&mut self, pin: PinId) -> Result<(), DeviceError> {
        self.lock().stop(pin)
    }
    fn wait_ms(&mut self, ms: u64) -> Result<(), DeviceError> {
        self.lock().wait_ms(ms)
    }
    fn now_ms(&self) -> u64 {
        self.lock().now_ms()
    }
    fn drain_frames(&mut self) -> Vec<BoardCommand> {
        self.lock().drain_frames()
    }
    fn sample_series(&mut self, pin: PinId, interval_ms: u32, duration_ms: u32) -> Result<TimeSeries, DeviceError> {
        self.lock().sample_series(pin, interval_ms, duration_ms)
    }
}

/// Stand-in for a device that has been unplugged or handed to another session.
#[derive(Debug, Default, Clone, Copy)]
pub struct Disconnected;

impl Device for Disconnected {
    fn execute(&mut self, _: &BoardCommand) -> Result<BoardResponse, DeviceError> {
        Err(DeviceError::DeviceGone)
    }
    fn read_analog(&mut self, _: PinId) -> Result<Reading, DeviceError> {
        Err(DeviceError::DeviceGone)
    }
    fn play_sequence(&mut self, _: PinId, _: &[SequenceStep]) -> Result<(), DeviceError> {
        Err(DeviceError::DeviceGone)
    }
    fn stop(&mut self, _: PinId) -> Result<(), DeviceError> {
        Err(DeviceError::DeviceGone)
    }
    fn wait_ms(&mut self, _: u64) -> Result<(), DeviceError> {
        Err(DeviceError::DeviceGone)
    }
    fn now_ms(&self) -> u64 {
        0
    }
    fn drain_frames(&mut self) -> Vec<BoardCommand> {
        Vec::new()
    }
}
