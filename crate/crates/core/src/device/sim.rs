use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sequence_duration, Device, DeviceError, Reading, SequenceStep, TransferModel, VirtualFixture};
use crate::protocol::{
    validate_command, BoardCommand, BoardResponse, LedPattern, PinId, ProtocolError, DUTY_MAX, MV_MAX,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Virtual time charged to every executed frame.
    pub latency_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Drive {
    Hold(u32),
    Timed { mv: u32, until: u64 },
    Sequence { start: u64, steps: Vec<SequenceStep> },
}

impl Drive {
    fn level_at(&self, t: u64) -> u32 {
        match self {
            Drive::Hold(mv) => *mv,
            Drive::Timed { mv, until } => {
                if t < *until {
                    *mv
                } else {
                    0
                }
            }
            Drive::Sequence { start, steps } => {
                if t < *start {
                    return 0;
                }
                let mut edge = *start;
                for step in steps {
                    edge += step.duration_ms as u64;
                    if t < edge {
                        return step.mv;
                    }
                }
                0
            }
        }
    }

    fn busy_at(&self, t: u64) -> bool {
        match self {
            Drive::Hold(_) => false,
            Drive::Timed { until, .. } => t < *until,
            Drive::Sequence { start, steps } => t < start + sequence_duration(steps),
        }
    }
}

/// Simulated breadboard on a virtual millisecond clock.
///
/// The clock only moves when a frame is charged latency or when a caller
/// waits, so identical command schedules give identical readings.
#[derive(Debug, Clone)]
pub struct SimDevice {
    models: BTreeMap<PinId, TransferModel>,
    drives: BTreeMap<PinId, Drive>,
    led_rows: BTreeMap<u32, LedPattern>,
    clock_ms: u64,
    options: SimOptions,
    frames: Vec<BoardCommand>,
    drained: usize,
    connected: bool,
}

impl SimDevice {
    pub fn open(fixture: &VirtualFixture) -> Result<Self, DeviceError> {
        Self::open_with(fixture, SimOptions::default())
    }

    pub fn open_with(fixture: &VirtualFixture, options: SimOptions) -> Result<Self, DeviceError> {
        Ok(SimDevice {
            models: fixture.resolve()?,
            drives: BTreeMap::new(),
            led_rows: BTreeMap::new(),
            clock_ms: 0,
            options,
            frames: Vec::new(),
            drained: 0,
            connected: true,
        })
    }

    /// Current pattern per row; rows never written are `Off`.
    pub fn led(&self, row: u32) -> LedPattern {
        self.led_rows.get(&row).copied().unwrap_or(LedPattern::Off)
    }

    pub fn led_rows(&self) -> &BTreeMap<u32, LedPattern> {
        &self.led_rows
    }

    /// Every frame sent since the device opened.
    pub fn history(&self) -> &[BoardCommand] {
        &self.frames
    }

    /// Level currently driven on an output pin.
    pub fn output_mv(&self, pin: PinId) -> u32 {
        self.drive_level(pin, self.clock_ms)
    }

    pub fn disconnect(&mut self) {
        self.connected = false;
    }

    fn ensure_connected(&self) -> Result<(), DeviceError> {
        if self.connected {
            Ok(())
        } else {
            Err(DeviceError::DeviceGone)
        }
    }

    fn drive_level(&self, pin: PinId, t: u64) -> u32 {
        self.drives.get(&pin).map_or(0, |d| d.level_at(t))
    }

    fn ensure_idle(&self, pin: PinId) -> Result<(), DeviceError> {
        match self.drives.get(&pin) {
            Some(d) if d.busy_at(self.clock_ms) => Err(DeviceError::PinBusy(pin)),
            _ => Ok(()),
        }
    }

    fn evaluate(&self, model: &TransferModel, t: u64) -> Reading {
        match model {
            TransferModel::Constant(mv) => Reading { mv: *mv, floating: false },
            TransferModel::Divider { source, ratio } => {
                let v = self.drive_level(*source, t) as u64;
                let (n, d) = (*ratio.numer() as u64, *ratio.denom() as u64);
                // round half up on the 1 mV grid
                let mv = (2 * n * v + d) / (2 * d);
                Reading { mv: mv as u32, floating: false }
            }
            TransferModel::Noisy { base, amplitude_mv, seed } => {
                let inner = self.evaluate(base, t);
                let amp = *amplitude_mv as i64;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(t);
                let noise = rng.gen_range(-amp..=amp);
                let mv = (inner.mv as i64 + noise).clamp(0, MV_MAX as i64) as u32;
                Reading { mv, floating: inner.floating }
            }
            TransferModel::Open => Reading { mv: 0, floating: true },
        }
    }

    fn charge_latency(&mut self) {
        self.clock_ms += self.options.latency_ms as u64;
    }
}

impl Device for SimDevice {
    fn execute(&mut self, cmd: &BoardCommand) -> Result<BoardResponse, DeviceError> {
        self.ensure_connected()?;
        validate_command(cmd)?;
        let response = match *cmd {
            BoardCommand::Led { row, pattern } => {
                self.frames.push(cmd.clone());
                self.led_rows.insert(row, pattern);
                BoardResponse::ok()
            }
            BoardCommand::OutputVoltage { pin, millivolts, duration_ms } => {
                self.ensure_idle(pin)?;
                self.frames.push(cmd.clone());
                self.set_drive(pin, millivolts, duration_ms);
                BoardResponse::ok()
            }
            BoardCommand::OutputPwm { pin, duty, duration_ms } => {
                self.ensure_idle(pin)?;
                self.frames.push(cmd.clone());
                let mean = (2 * duty * MV_MAX + DUTY_MAX) / (2 * DUTY_MAX);
                self.set_drive(pin, mean, duration_ms);
                BoardResponse::ok()
            }
            BoardCommand::ReadAnalog { pin } => {
                return self.read_analog(pin).map(|r| BoardResponse::reading(r.mv));
            }
        };
        self.charge_latency();
        Ok(response)
    }

    fn read_analog(&mut self, pin: PinId) -> Result<Reading, DeviceError> {
        self.ensure_connected()?;
        let cmd = BoardCommand::read(pin);
        validate_command(&cmd)?;
        self.frames.push(cmd);
        let model = &self.models[&pin];
        let reading = self.evaluate(model, self.clock_ms);
        self.charge_latency();
        Ok(reading)
    }

    fn play_sequence(&mut self, pin: PinId, steps: &[SequenceStep]) -> Result<(), DeviceError> {
        self.ensure_connected()?;
        if !pin.is_output() {
            return Err(ProtocolError::UnknownPin(pin.to_string()).into());
        }
        for step in steps {
            validate_command(&step.as_command(pin))?;
        }
        if steps.is_empty() {
            return Ok(());
        }
        self.ensure_idle(pin)?;
        self.frames.extend(steps.iter().map(|s| s.as_command(pin)));
        self.drives.insert(pin, Drive::Sequence { start: self.clock_ms, steps: steps.to_vec() });
        Ok(())
    }

    fn stop(&mut self, pin: PinId) -> Result<(), DeviceError> {
        self.ensure_connected()?;
        let cmd = BoardCommand::output_voltage(pin, 0, None);
        validate_command(&cmd)?;
        self.frames.push(cmd);
        self.drives.insert(pin, Drive::Hold(0));
        self.charge_latency();
        Ok(())
    }

    fn wait_ms(&mut self, ms: u64) -> Result<(), DeviceError> {
        self.ensure_connected()?;
        self.clock_ms += ms;
        Ok(())
    }

    fn now_ms(&self) -> u64 {
        self.clock_ms
    }

    fn drain_frames(&mut self) -> Vec<BoardCommand> {
        let out = self.frames[self.drained..].to_vec();
        self.drained = self.frames.len();
        out
    }
}

impl SimDevice {
    fn set_drive(&mut self, pin: PinId, mv: u32, duration_ms: Option<u32>) {
        let drive = match duration_ms {
            None => Drive::Hold(mv),
            Some(ms) => Drive::Timed { mv, until: self.clock_ms + ms as u64 },
        };
        self.drives.insert(pin, drive);
    }
}
