//! Line-oriented console for a board.

use std::io::{self, BufRead, Write};

use rowlight_core::device::{Device, SequenceStep};
use rowlight_core::protocol::{decode_command, encode_response};
use rowlight_core::{DeviceError, PinId};

pub const HELP: &str = "\
commands:
  {\"cmd\":...}                 send one protocol frame, print the response frame
  read <pin>                    read an analog pin in mV
  play <pin> <mv>:<ms> ...      start a timed output sequence
  stop <pin>                    cancel a sequence
  wait <ms>                     advance time
  sample <pin> <every> <for>    sample a pin, print CSV
  time                          board time in ms
  help | quit";

#[derive(Debug, thiserror::Error)]
enum ReplError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

impl ReplError {
    fn code(&self) -> &'static str {
        match self {
            ReplError::Usage(_) => "usage",
            ReplError::Device(e) => e.code(),
        }
    }
}

fn pin(arg: Option<&str>) -> Result<PinId, ReplError> {
    let arg = arg.ok_or_else(|| ReplError::Usage("missing pin".into()))?;
    arg.parse().map_err(|e| ReplError::Device(DeviceError::Protocol(e)))
}

fn number<T: std::str::FromStr>(arg: Option<&str>, what: &str) -> Result<T, ReplError> {
    arg.and_then(|a| a.parse().ok()).ok_or_else(|| ReplError::Usage(format!("expected {what}")))
}

fn step(arg: &str) -> Result<SequenceStep, ReplError> {
    let (mv, ms) = arg.split_once(':').ok_or_else(|| ReplError::Usage(format!("expected <mv>:<ms>, got {arg}")))?;
    Ok(SequenceStep::new(number(Some(mv), "millivolts")?, number(Some(ms), "milliseconds")?))
}

fn eval(device: &mut dyn Device, line: &str) -> Result<String, ReplError> {
    if line.starts_with('{') {
        let mut frame = line.as_bytes().to_vec();
        frame.push(b'\n');
        let cmd = decode_command(&frame).map_err(DeviceError::Protocol)?;
        let resp = device.execute(&cmd)?;
        return Ok(String::from_utf8_lossy(&encode_response(&resp)).trim_end().to_string());
    }
    let mut words = line.split_whitespace();
    let Some(verb) = words.next() else { return Ok(String::new()) };
    match verb {
        "read" => {
            let r = device.read_analog(pin(words.next())?)?;
            Ok(if r.floating { format!("{} (floating)", r.mv) } else { r.mv.to_string() })
        }
        "play" => {
            let pin = pin(words.next())?;
            let steps = words.map(step).collect::<Result<Vec<_>, _>>()?;
            device.play_sequence(pin, &steps)?;
            Ok("ok".into())
        }
        "stop" => {
            device.stop(pin(words.next())?)?;
            Ok("ok".into())
        }
        "wait" => {
            device.wait_ms(number(words.next(), "milliseconds")?)?;
            Ok(device.now_ms().to_string())
        }
        "sample" => {
            let pin = pin(words.next())?;
            let every = number(words.next(), "interval in ms")?;
            let span = number(words.next(), "duration in ms")?;
            Ok(device.sample_series(pin, every, span)?.to_csv().trim_end().to_string())
        }
        "time" => Ok(device.now_ms().to_string()),
        "help" => Ok(HELP.to_string()),
        other => Err(ReplError::Usage(format!("unknown command {other:?}, try help"))),
    }
}

/// Runs commands from `input` until EOF or `quit`; returns the number of failed commands.
pub fn run(
    device: &mut dyn Device,
    input: impl BufRead,
    mut out: impl Write,
    mut err: impl Write,
) -> io::Result<usize> {
    let mut failures = 0;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line == "quit" || line == "exit" {
            break;
        }
        match eval(device, line) {
            Ok(text) if text.is_empty() => {}
            Ok(text) => writeln!(out, "{text}")?,
            Err(e) => {
                failures += 1;
                writeln!(err, "error {}: {e}", e.code())?;
            }
        }
        out.flush()?;
    }
    Ok(failures)
}
