//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rowlight_core::agent::{ScriptedAgent, Tape};
use rowlight_core::netlist::{Component, Netlist, PinRef, RawAssignment, RawNet};
use rowlight_core::protocol::{decode_command, BoardResponse, LedPattern, ProtocolError};
use rowlight_core::session::{SessionBuilder, SteppingClock};
use rowlight_core::{
    BoardCommand, DeviceHandle, Lifecycle, MemoryLog, Mode, PinId, Session, SessionError, SessionEvent, SimDevice,
    VirtualFixture,
};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn sim_fixture(name: &str) -> VirtualFixture {
    VirtualFixture::from_yaml(&fixture_text(name)).unwrap()
}

pub fn tape(name: &str) -> Tape {
    Tape::from_yaml(&fixture_text(&format!("tapes/{name}"))).unwrap()
}

pub struct Rig {
    pub session: Session,
    pub device: DeviceHandle<SimDevice>,
    pub log: MemoryLog,
}

/// Session on a simulator with a scripted agent, a memory log and a stepping clock.
pub fn rig(fixture: &str, tape_name: Option<&str>) -> Rig {
    let device = DeviceHandle::new(SimDevice::open(&sim_fixture(fixture)).unwrap());
    let log = MemoryLog::new();
    let tape = tape_name.map(tape).unwrap_or_default();
    let session = Session::builder("s1")
        .agent(ScriptedAgent::new(tape))
        .device(device.clone())
        .sink(log.clone())
        .clock(SteppingClock::new(1_000, 1))
        .start()
        .unwrap();
    Rig { session, device, log }
}

const KINDS: [&str; 6] = ["LED", "resistor", "capacitor", "IC", "source", "switch"];
const PIN_NAMES: [&str; 8] = ["1", "2", "3", "anode", "cathode", "+", "-", "gnd"];

/// Random valid netlist with unique net ids and no repeated members.
pub fn random_clean_netlist(rng: &mut ChaCha8Rng) -> Netlist {
    let n_components = rng.gen_range(0..8);
    let mut components = Vec::new();
    for i in 0..n_components {
        let mut pins: Vec<String> = PIN_NAMES.iter().map(|s| s.to_string()).collect();
        pins.shuffle(rng);
        pins.truncate(rng.gen_range(1..=5));
        components.push(Component {
            id: format!("C{i}"),
            label: format!("part \"{i}\" <{}>", rng.gen_range(0..100)),
            kind: KINDS[rng.gen_range(0..KINDS.len())].to_string(),
            value: rng.gen_bool(0.5).then(|| format!("{} ohm", rng.gen_range(1..1000))),
            pins,
        });
    }
    let all_pins: Vec<PinRef> =
        components.iter().flat_map(|c| c.pins.iter().map(move |p| PinRef::new(&c.id, p))).collect();
    let mut nets = Vec::new();
    if !all_pins.is_empty() {
        for i in 0..rng.gen_range(0..6) {
            let mut members = all_pins.clone();
            members.shuffle(rng);
            members.truncate(rng.gen_range(2..=5).min(all_pins.len()));
            if members.len() >= 2 {
                nets.push(RawNet { id: format!("N{i}"), members });
            }
        }
    }
    let mut assignments = Vec::new();
    for p in &all_pins {
        if rng.gen_bool(0.7) {
            assignments.push(RawAssignment { pin: p.clone(), row: rng.gen_range(1..=50) });
        }
    }
    Netlist { components, nets, assignments, revision: 0 }
}

/// Same circuit with repeated members, empty nets and single-member nets added.
pub fn add_redundancy(clean: &Netlist, rng: &mut ChaCha8Rng) -> Netlist {
    let mut dirty = clean.clone();
    for net in &mut dirty.nets {
        for _ in 0..rng.gen_range(0..3) {
            let m = net.members[rng.gen_range(0..net.members.len())].clone();
            net.members.push(m);
        }
    }
    for i in 0..rng.gen_range(1..3) {
        dirty.nets.push(RawNet { id: format!("EMPTY{i}"), members: vec![] });
    }
    if let Some(c) = dirty.components.first() {
        let pin = PinRef::new(&c.id, &c.pins[0]);
        dirty.nets.push(RawNet { id: "LONE".into(), members: vec![pin.clone(), pin] });
    }
    dirty
}

/// Shuffles every list whose order carries no meaning.
pub fn permute(raw: &Netlist, rng: &mut ChaCha8Rng) -> Netlist {
    let mut p = raw.clone();
    p.components.shuffle(rng);
    p.nets.shuffle(rng);
    for n in &mut p.nets {
        n.members.shuffle(rng);
    }
    p.assignments.shuffle(rng);
    p
}

fn attr(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes a raw netlist in the XML input schema.
pub fn to_xml(raw: &Netlist) -> String {
    let mut out = String::from("<netlist>\n");
    for c in &raw.components {
        out += &format!("  <component id=\"{}\" label=\"{}\" kind=\"{}\"", attr(&c.id), attr(&c.label), attr(&c.kind));
        if let Some(v) = &c.value {
            out += &format!(" value=\"{}\"", attr(v));
        }
        out += ">\n";
        for p in &c.pins {
            out += &format!("    <pin name=\"{}\"/>\n", attr(p));
        }
        out += "  </component>\n";
    }
    for n in &raw.nets {
        out += &format!("  <net id=\"{}\">\n", attr(&n.id));
        for m in &n.members {
            out += &format!("    <member component=\"{}\" pin=\"{}\"/>\n", attr(&m.component), attr(&m.pin));
        }
        out += "  </net>\n";
    }
    for a in &raw.assignments {
        out += &format!(
            "  <assignment component=\"{}\" pin=\"{}\" row=\"{}\"/>\n",
            attr(&a.pin.component),
            attr(&a.pin.pin),
            a.row
        );
    }
    out + "</netlist>\n"
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const DIVIDER_QUERY: &str = "Is my voltage divider wired correctly?";

fn drives_d0(session: &Session) -> bool {
    session.records().iter().any(|r| {
        matches!(
            &r.event,
            SessionEvent::DeviceCommand(BoardCommand::OutputVoltage {
                pin: PinId::D0,
                millivolts: 5000,
                duration_ms: None
            })
        )
    })
}

/// Drives the divider check from whatever state the session is in until the
/// first test is interpreted.
pub fn finish_divider_scenario(session: &mut Session) -> Result<(), SessionError> {
    if session.state().schematic.is_none() {
        session.sync_schematic_xml(fixture_text("divider.xml").as_bytes())?;
    }
    if session.mode() != Mode::Test {
        session.set_mode(Mode::Test)?;
    }
    if !drives_d0(session) {
        session.device_command(&BoardCommand::output_voltage(PinId::D0, 5000, None))?;
    }
    if session.state().tests.is_empty() {
        session.submit_query(DIVIDER_QUERY)?;
    }
    let id = session.state().tests.first().expect("the tape creates a test").id.clone();
    loop {
        match session.test(&id)?.state {
            Lifecycle::Created => {
                session.highlight_probes(&id)?;
            }
            Lifecycle::ProbesHighlighted | Lifecycle::Running => {
                session.run_test(&id)?;
            }
            Lifecycle::ResultCaptured => {
                session.submit_result(&id, None)?;
            }
            Lifecycle::Submitted => {
                session.interpret(&id)?;
            }
            Lifecycle::Interpreted => return Ok(()),
        }
    }
}

pub fn divider_builder(device: DeviceHandle<SimDevice>, log: MemoryLog) -> SessionBuilder {
    Session::builder("s1")
        .agent(ScriptedAgent::new(tape("divider-check.yaml")))
        .device(device)
        .sink(log)
        .clock(SteppingClock::new(1_000, 1))
}

pub fn equal_divider() -> DeviceHandle<SimDevice> {
    DeviceHandle::new(SimDevice::open(&sim_fixture("equal-divider.yaml")).unwrap())
}

pub fn golden(name: &str) -> Vec<u8> {
    fixture_text(&format!("protocol/{name}.jsonl")).into_bytes()
}

pub fn command_goldens() -> Vec<(&'static str, BoardCommand)> {
    vec![
        ("led_on", BoardCommand::led(1, LedPattern::On)),
        ("led_off", BoardCommand::led(50, LedPattern::Off)),
        ("led_blink", BoardCommand::led(3, LedPattern::Blink)),
        ("led_blink_slow", BoardCommand::led(12, LedPattern::BlinkSlow)),
        ("out_v_hold", BoardCommand::output_voltage(PinId::D0, 2500, None)),
        ("out_v_timed", BoardCommand::output_voltage(PinId::D3, 5000, Some(60000))),
        ("out_pwm_hold", BoardCommand::OutputPwm { pin: PinId::D1, duty: 128, duration_ms: None }),
        ("out_pwm_timed", BoardCommand::OutputPwm { pin: PinId::D2, duty: 255, duration_ms: Some(1) }),
        ("read", BoardCommand::read(PinId::A0)),
    ]
}

pub fn response_goldens() -> Vec<(&'static str, BoardResponse)> {
    vec![
        ("resp_ok", BoardResponse::ok()),
        ("resp_reading", BoardResponse::reading(2500)),
        ("resp_error", BoardResponse::error("pin_busy")),
    ]
}

/// Device frames logged from record `from` onward.
pub fn frames_since(session: &Session, from: usize) -> Vec<BoardCommand> {
    session.records()[from..]
        .iter()
        .filter_map(|rec| match &rec.event {
            SessionEvent::DeviceCommand(c) => Some(c.clone()),
            _ => None,
        })
        .collect()
}

/// Decodes a frame built from a template with `value` substituted.
pub fn wire(template: &str, value: i64) -> Result<BoardCommand, ProtocolError> {
    let mut frame = template.replace("{}", &value.to_string());
    frame.push('\n');
    decode_command(frame.as_bytes())
}

pub struct BoundaryField {
    pub template: &'static str,
    pub min: i64,
    pub max: i64,
    pub reject: fn(i64) -> ProtocolError,
}

/// Every bounded integer field of the command set.
pub fn boundary_fields() -> [BoundaryField; 5] {
    [
        BoundaryField {
            template: r#"{"cmd":"led","row":{},"pattern":"on"}"#,
            min: 1,
            max: 50,
            reject: ProtocolError::RowOutOfRange,
        },
        BoundaryField {
            template: r#"{"cmd":"out_v","pin":"D0","mv":{}}"#,
            min: 0,
            max: 5000,
            reject: ProtocolError::MillivoltsOutOfRange,
        },
        BoundaryField {
            template: r#"{"cmd":"out_pwm","pin":"D0","duty":{}}"#,
            min: 0,
            max: 255,
            reject: ProtocolError::DutyOutOfRange,
        },
        BoundaryField {
            template: r#"{"cmd":"out_v","pin":"D0","mv":0,"ms":{}}"#,
            min: 1,
            max: 60000,
            reject: ProtocolError::DurationOutOfRange,
        },
        BoundaryField {
            template: r#"{"cmd":"out_pwm","pin":"D0","duty":0,"ms":{}}"#,
            min: 1,
            max: 60000,
            reject: ProtocolError::DurationOutOfRange,
        },
    ]
}
