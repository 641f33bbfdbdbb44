//! Inputs shared by the benchmarks.

use rowlight_core::agent::{ScriptedAgent, Tape};
use rowlight_core::device::{SimDevice, VirtualFixture};
use rowlight_core::netlist::{Component, Netlist, PinRef, RawAssignment, RawNet};
use rowlight_core::session::SteppingClock;
use rowlight_core::{BoardCommand, MemoryLog, Mode, PinId, Session, SessionLogRecord};

/// Chain of `n` two-pin resistors, each sharing a net with the next, with
/// every net listed twice and members repeated.
pub fn resistor_chain(n: usize) -> Netlist {
    let components: Vec<Component> = (0..n)
        .map(|i| Component {
            id: format!("R{i}"),
            label: format!("R{i}"),
            kind: "resistor".into(),
            value: Some("1k".into()),
            pins: vec!["1".into(), "2".into()],
        })
        .collect();
    let mut nets = Vec::new();
    for i in 1..n {
        let members = vec![PinRef::new(format!("R{}", i - 1), "2"), PinRef::new(format!("R{i}"), "1")];
        let mut repeated = members.clone();
        repeated.extend(members.iter().cloned());
        nets.push(RawNet { id: format!("N{i}"), members: repeated });
        nets.push(RawNet { id: format!("M{i}"), members });
    }
    let assignments = (0..n)
        .flat_map(|i| {
            let row = (i % 49) as i64 + 1;
            [
                RawAssignment { pin: PinRef::new(format!("R{i}"), "1"), row },
                RawAssignment { pin: PinRef::new(format!("R{i}"), "2"), row: row + 1 },
            ]
        })
        .collect();
    Netlist { components: components.into_iter().rev().collect(), nets, assignments, revision: 0 }
}

const DIVIDER_XML: &str = r#"<netlist>
  <component id="J1" label="Board" kind="connector"><pin name="D0"/><pin name="A0"/><pin name="GND"/></component>
  <component id="R1" label="R1" kind="resistor" value="10k"><pin name="1"/><pin name="2"/></component>
  <component id="R2" label="R2" kind="resistor" value="10k"><pin name="1"/><pin name="2"/></component>
  <net id="IN"><member component="J1" pin="D0"/><member component="R1" pin="1"/></net>
  <net id="MID"><member component="R1" pin="2"/><member component="R2" pin="1"/><member component="J1" pin="A0"/></net>
  <net id="GND"><member component="R2" pin="2"/><member component="J1" pin="GND"/></net>
  <assignment component="J1" pin="D0" row="8"/><assignment component="R1" pin="1" row="8"/>
  <assignment component="R1" pin="2" row="12"/><assignment component="R2" pin="1" row="12"/>
  <assignment component="J1" pin="A0" row="12"/>
  <assignment component="R2" pin="2" row="16"/><assignment component="J1" pin="GND" row="16"/>
</netlist>
"#;

const TAPE: &str = r#"
replies:
  0:
    text: "Added a midpoint test."
    calls:
      - name: create_voltage_test
        arguments: {probe_pin: A0, probe_rows: [12], expected_mv: [2300, 2700]}
  1:
    text: "The midpoint is at half the drive."
"#;

/// Log of one full divider check: create, highlight, run, submit, interpret.
pub fn divider_session_log() -> Vec<SessionLogRecord> {
    let fixture = VirtualFixture::from_yaml("pins:\n  A0: {divider: {source: D0, ratio: \"1/2\"}}\n").unwrap();
    let log = MemoryLog::new();
    let mut s = Session::builder("b")
        .agent(ScriptedAgent::new(Tape::from_yaml(TAPE).unwrap()))
        .device(SimDevice::open(&fixture).unwrap())
        .sink(log.clone())
        .clock(SteppingClock::new(0, 1))
        .start()
        .unwrap();
    s.sync_schematic_xml(DIVIDER_XML.as_bytes()).unwrap();
    s.set_mode(Mode::Test).unwrap();
    s.device_command(&BoardCommand::output_voltage(PinId::D0, 5000, None)).unwrap();
    s.submit_query("Check the divider").unwrap();
    let id = s.state().tests[0].id.clone();
    s.highlight_probes(&id).unwrap();
    s.run_test(&id).unwrap();
    s.submit_result(&id, None).unwrap();
    s.interpret(&id).unwrap();
    log.records()
}
