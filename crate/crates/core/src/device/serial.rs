use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{sequence_duration, Device, DeviceError, Reading, SequenceStep};
use crate::protocol::{
    decode_response, encode_command, validate_command, BoardCommand, BoardResponse, PinId, ProtocolError,
};

struct Link {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    gone: bool,
}

impl Link {
    fn transact(&mut self, cmd: &BoardCommand) -> Result<BoardResponse, DeviceError> {
        if self.gone {
            return Err(DeviceError::DeviceGone);
        }
        let frame = encode_command(cmd);
        if let Err(e) = self.writer.write_all(&frame).and_then(|_| self.writer.flush()) {
            self.gone = true;
            return Err(DeviceError::Transport(e.to_string()));
        }
        let mut line = Vec::new();
        match self.reader.read_until(b'\n', &mut line) {
            Ok(0) => {
                self.gone = true;
                return Err(DeviceError::DeviceGone);
            }
            Ok(_) => {}
            Err(e) => {
                self.gone = true;
                return Err(DeviceError::Transport(e.to_string()));
            }
        }
        let resp = decode_response(&line)?;
        resp.check_for(cmd)?;
        match resp.error.as_deref() {
            None => Ok(resp),
            Some("pin_busy") => Err(DeviceError::PinBusy(command_pin(cmd).unwrap_or(PinId::D0))),
            Some(code) => Err(DeviceError::Rejected(code.to_string())),
        }
    }
}

fn command_pin(cmd: &BoardCommand) -> Option<PinId> {
    match *cmd {
        BoardCommand::OutputVoltage { pin, .. }
        | BoardCommand::OutputPwm { pin, .. }
        | BoardCommand::ReadAnalog { pin } => Some(pin),
        BoardCommand::Led { .. } => None,
    }
}

struct Busy {
    until: Instant,
    cancel: Option<Arc<AtomicBool>>,
}

#[derive(Clone)]
struct Shared {
    link: Arc<Mutex<Link>>,
    frames: Arc<Mutex<Vec<BoardCommand>>>,
}

impl Shared {
    fn send(&self, cmd: &BoardCommand) -> Result<BoardResponse, DeviceError> {
        let mut link = self.link.lock().unwrap_or_else(|p| p.into_inner());
        if link.gone {
            return Err(DeviceError::DeviceGone);
        }
        self.frames.lock().unwrap_or_else(|p| p.into_inner()).push(cmd.clone());
        link.transact(cmd)
    }
}

/// Board reached over a byte stream (serial port, TCP bridge, pipe).
///
/// Frames from every caller, including background sequence playback, are
/// serialized through one request/response link.
pub struct SerialDevice {
    shared: Shared,
    busy: BTreeMap<PinId, Busy>,
    opened: Instant,
}

impl SerialDevice {
    pub fn new<R, W>(reader: R, writer: W) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        SerialDevice {
            shared: Shared {
                link: Arc::new(Mutex::new(Link {
                    reader: Box::new(BufReader::new(reader)),
                    writer: Box::new(writer),
                    gone: false,
                })),
                frames: Arc::new(Mutex::new(Vec::new())),
            },
            busy: BTreeMap::new(),
            opened: Instant::now(),
        }
    }

    /// Opens a serial device node (or any file-like endpoint) read/write.
    pub fn open_path(path: impl AsRef<Path>) -> Result<Self, DeviceError> {
        let file =
            OpenOptions::new().read(true).write(true).open(path).map_err(|e| DeviceError::Transport(e.to_string()))?;
        let reader = file.try_clone().map_err(|e| DeviceError::Transport(e.to_string()))?;
        Ok(Self::new(reader, file))
    }

    pub fn connect_tcp(addr: &str) -> Result<Self, DeviceError> {
        let stream = TcpStream::connect(addr).map_err(|e| DeviceError::Transport(e.to_string()))?;
        let reader = stream.try_clone().map_err(|e| DeviceError::Transport(e.to_string()))?;
        Ok(Self::new(reader, stream))
    }

    fn ensure_idle(&mut self, pin: PinId) -> Result<(), DeviceError> {
        let now = Instant::now();
        self.busy.retain(|_, b| b.until > now);
        if self.busy.contains_key(&pin) {
            Err(DeviceError::PinBusy(pin))
        } else {
            Ok(())
        }
    }
}

impl Device for SerialDevice {
    fn execute(&mut self, cmd: &BoardCommand) -> Result<BoardResponse, DeviceError> {
        validate_command(cmd)?;
        let timed = match *cmd {
            BoardCommand::OutputVoltage { pin, duration_ms, .. } | BoardCommand::OutputPwm { pin, duration_ms, .. } => {
                self.ensure_idle(pin)?;
                duration_ms.map(|ms| (pin, ms))
            }
            _ => None,
        };
        let resp = self.shared.send(cmd)?;
        if let Some((pin, ms)) = timed {
            self.busy.insert(pin, Busy { until: Instant::now() + Duration::from_millis(ms as u64), cancel: None });
        }
        Ok(resp)
    }

    fn read_analog(&mut self, pin: PinId) -> Result<Reading, DeviceError> {
        let resp = self.execute(&BoardCommand::read(pin))?;
        Ok(Reading { mv: resp.value_mv.unwrap_or(0), floating: false })
    }

    fn play_sequence(&mut self, pin: PinId, steps: &[SequenceStep]) -> Result<(), DeviceError> {
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
        if self.shared.link.lock().unwrap_or_else(|p| p.into_inner()).gone {
            return Err(DeviceError::DeviceGone);
        }
        let cancel = Arc::new(AtomicBool::new(false));
        self.busy.insert(
            pin,
            Busy {
                until: Instant::now() + Duration::from_millis(sequence_duration(steps)),
                cancel: Some(Arc::clone(&cancel)),
            },
        );
        let shared = self.shared.clone();
        let steps = steps.to_vec();
        thread::spawn(move || {
            let start = Instant::now();
            let mut edge = Duration::ZERO;
            for step in steps {
                if cancel.load(Ordering::Acquire) {
                    return;
                }
                if shared.send(&step.as_command(pin)).is_err() {
                    return;
                }
                edge += Duration::from_millis(step.duration_ms as u64);
                while start.elapsed() < edge {
                    if cancel.load(Ordering::Acquire) {
                        return;
                    }
                    thread::sleep((edge - start.elapsed()).min(Duration::from_millis(5)));
                }
            }
        });
        Ok(())
    }

    fn stop(&mut self, pin: PinId) -> Result<(), DeviceError> {
        if let Some(Busy { cancel: Some(flag), .. }) = self.busy.remove(&pin) {
            flag.store(true, Ordering::Release);
        }
        self.busy.remove(&pin);
        self.execute(&BoardCommand::output_voltage(pin, 0, None)).map(|_| ())
    }

    fn wait_ms(&mut self, ms: u64) -> Result<(), DeviceError> {
        thread::sleep(Duration::from_millis(ms));
        Ok(())
    }

    fn now_ms(&self) -> u64 {
        self.opened.elapsed().as_millis() as u64
    }

    fn drain_frames(&mut self) -> Vec<BoardCommand> {
        std::mem::take(&mut *self.shared.frames.lock().unwrap_or_else(|p| p.into_inner()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{decode_command, encode_response, LedPattern};
    use std::os::unix::net::UnixStream;

    /// Board stand-in on the far end of a socket pair: records frames, answers reads with 1234 mV.
    fn fake_board() -> (SerialDevice, thread::JoinHandle<Vec<Vec<u8>>>) {
        let (near, far) = UnixStream::pair().unwrap();
        let reader = near.try_clone().unwrap();
        let handle = thread::spawn(move || {
            let mut seen = Vec::new();
            let mut writer = far.try_clone().unwrap();
            let mut reader = BufReader::new(far);
            loop {
                let mut line = Vec::new();
                if reader.read_until(b'\n', &mut line).unwrap() == 0 {
                    return seen;
                }
                let resp = match decode_command(&line) {
                    Ok(BoardCommand::ReadAnalog { .. }) => BoardResponse::reading(1234),
                    Ok(_) => BoardResponse::ok(),
                    Err(e) => BoardResponse::error(e.code()),
                };
                seen.push(line);
                writer.write_all(&encode_response(&resp)).unwrap();
            }
        });
        (SerialDevice::new(reader, near), handle)
    }

    #[test]
    fn frames_on_the_wire() {
        let (mut dev, board) = fake_board();
        dev.execute(&BoardCommand::led(3, LedPattern::Blink)).unwrap();
        assert_eq!(dev.read_analog(PinId::A0).unwrap().mv, 1234);
        assert_eq!(dev.drain_frames().len(), 2);
        drop(dev);
        let seen = board.join().unwrap();
        assert_eq!(seen[0], b"{\"cmd\":\"led\",\"row\":3,\"pattern\":\"blink\"}\n");
        assert_eq!(seen[1], b"{\"cmd\":\"read\",\"pin\":\"A0\"}\n");
    }

    #[test]
    fn sequence_plays_in_background() {
        let (mut dev, _board) = fake_board();
        dev.play_sequence(PinId::D1, &[SequenceStep::new(5000, 20), SequenceStep::new(0, 20)]).unwrap();
        assert_eq!(
            dev.execute(&BoardCommand::output_voltage(PinId::D1, 1, None)),
            Err(DeviceError::PinBusy(PinId::D1))
        );
        let ts = dev.sample_series(PinId::A0, 10, 50).unwrap();
        assert_eq!(ts.samples.len(), 6);
        let frames = dev.drain_frames();
        assert_eq!(frames.iter().filter(|f| !f.is_read()).count(), 2);
        assert_eq!(frames.iter().filter(|f| f.is_read()).count(), 6);
    }

    #[test]
    fn closed_stream_is_gone() {
        let (near, far) = UnixStream::pair().unwrap();
        drop(far);
        let mut dev = SerialDevice::new(near.try_clone().unwrap(), near);
        let err = dev.execute(&BoardCommand::led(1, LedPattern::On)).unwrap_err();
        assert!(matches!(err, DeviceError::DeviceGone | DeviceError::Transport(_)));
        assert_eq!(dev.execute(&BoardCommand::led(1, LedPattern::On)), Err(DeviceError::DeviceGone));
    }
}
