//! Acceptance runner: one line per criterion, nonzero exit if any fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rowlight_core::device::{Device, SimDevice};
use rowlight_core::netlist::{canonicalize, emit_yaml, parse_netlist_xml, parse_yaml};
use rowlight_core::protocol::{
    decode_command, decode_response, encode_command, encode_response, validate_command, BoardCommand, LedPattern, PinId,
};
use rowlight_core::{
    replay, DeviceHandle, Lifecycle, MemoryLog, Mode, Role, RowId, SessionEvent, StatusEvent, TestKind, TestResult,
    TurnContent, Verdict,
};
use serde_json::Value;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn canonicalization() -> Check {
    const RUNS: u64 = 1000;
    let start = Instant::now();
    for seed in 0..RUNS {
        let clean = random_clean_netlist(&mut rng(seed));
        let dirty = permute(&add_redundancy(&clean, &mut rng(seed ^ 0x5eed)), &mut rng(seed.wrapping_mul(31)));
        let a = canonicalize(&clean).map_err(|e| format!("seed {seed}: {e}"))?;
        let again = canonicalize(&a.to_raw()).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(again == a, || format!("seed {seed}: not idempotent"))?;
        let yaml = emit_yaml(&a);
        let b = canonicalize(&dirty).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(emit_yaml(&b) == yaml, || format!("seed {seed}: redundant input differs from clean"))?;
        let xml = parse_netlist_xml(to_xml(&dirty).as_bytes()).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(emit_yaml(&xml) == yaml, || format!("seed {seed}: xml input differs from clean"))?;
        let back = parse_yaml(&yaml).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(back == a && emit_yaml(&back) == yaml, || format!("seed {seed}: yaml round trip differs"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("{RUNS} netlists in {elapsed:.2?}"))
}

fn protocol() -> Check {
    let mut goldens = 0;
    for (name, cmd) in command_goldens() {
        ensure(validate_command(&cmd).is_ok(), || format!("{name} invalid"))?;
        ensure(encode_command(&cmd) == golden(name), || format!("{name} encodes differently"))?;
        ensure(decode_command(&golden(name)).as_ref() == Ok(&cmd), || format!("{name} decodes differently"))?;
        goldens += 1;
    }
    for (name, resp) in response_goldens() {
        ensure(encode_response(&resp) == golden(name), || format!("{name} encodes differently"))?;
        ensure(decode_response(&golden(name)).as_ref() == Ok(&resp), || format!("{name} decodes differently"))?;
        goldens += 1;
    }
    let mut boundaries = 0;
    for f in boundary_fields() {
        for value in [f.min, f.max] {
            ensure(wire(f.template, value).is_ok(), || format!("{} rejects {value}", f.template))?;
        }
        for value in [f.min - 1, f.max + 1] {
            ensure(wire(f.template, value) == Err((f.reject)(value)), || format!("{} accepts {value}", f.template))?;
        }
        boundaries += 4;
    }
    Ok(format!("{goldens} golden frames, {boundaries} boundary values"))
}

fn read_a0(fixture: &str, drive_mv: u32) -> Result<u32, String> {
    let mut dev = SimDevice::open(&sim_fixture(fixture)).map_err(|e| e.to_string())?;
    dev.execute(&BoardCommand::output_voltage(PinId::D0, drive_mv, None)).map_err(|e| e.to_string())?;
    let resp = dev.execute(&BoardCommand::read(PinId::A0)).map_err(|e| e.to_string())?;
    // the reading must be a whole number on the wire
    let frame: Value = serde_json::from_slice(&encode_response(&resp)).map_err(|e| e.to_string())?;
    frame["mv"].as_u64().map(|mv| mv as u32).ok_or_else(|| format!("non-integer reading {frame}"))
}

fn simulator() -> Check {
    // 5000 * 1/2 and 3300 * 1/4
    let half = read_a0("equal-divider.yaml", 5000)?;
    ensure(half == 2500, || format!("equal divider read {half}, expected 2500"))?;
    let quarter = read_a0("quarter-divider.yaml", 3300)?;
    ensure(quarter == 825, || format!("quarter divider read {quarter}, expected 825"))?;

    const SAMPLES: u32 = 10_000;
    let (base, amplitude) = (1000, 50);
    let mut dev = SimDevice::open(&sim_fixture("noisy.yaml")).map_err(|e| e.to_string())?;
    let series = dev.sample_series(PinId::A0, 1, SAMPLES - 1).map_err(|e| e.to_string())?;
    ensure(series.samples.len() == SAMPLES as usize, || format!("{} samples", series.samples.len()))?;
    let values: BTreeSet<u32> = series.samples.iter().map(|s| s.value_mv).collect();
    let (lo, hi) = (*values.first().unwrap(), *values.last().unwrap());
    ensure(lo >= base - amplitude && hi <= base + amplitude, || format!("noise spans [{lo},{hi}]"))?;
    ensure(values.len() > 1, || "noise never varies".into())?;
    Ok(format!("2500 mV, 825 mV, {SAMPLES} noisy samples in [{lo},{hi}]"))
}

fn mode_gating() -> Check {
    let mut r = rig("equal-divider.yaml", Some("adversarial.yaml"));
    let mark = r.session.records().len();
    r.session.submit_query("Give me tests").map_err(|e| e.to_string())?;
    r.session.set_mode(Mode::Test).map_err(|e| e.to_string())?;
    r.session.submit_query("Give me suggestions").map_err(|e| e.to_string())?;
    let state = r.session.state();
    ensure(state.tests.is_empty() && state.suggestions.is_empty(), || {
        format!("{} tests and {} suggestions created", state.tests.len(), state.suggestions.len())
    })?;
    let records = &r.session.records()[mark..];
    ensure(!records.iter().any(|rec| matches!(rec.event, SessionEvent::ArtifactCreated(_))), || {
        "artifact created".into()
    })?;
    ensure(frames_since(&r.session, mark).is_empty(), || "device frames sent".into())?;
    let mut rejected = 0;
    for turn in state.turns.iter().filter(|t| t.role == Role::Tool) {
        let TurnContent::Tool { name, payload } = &turn.content else { continue };
        ensure(payload["error"]["code"] == "mode_violation", || format!("{name} logged as {payload}"))?;
        rejected += 1;
    }
    ensure(rejected == 5, || format!("{rejected} rejections logged, expected 5"))?;
    Ok(format!("{rejected} calls rejected as mode_violation, 0 artifacts"))
}

fn highlighting() -> Check {
    let fixtures = [
        "loveometer-min.xml",
        "loveometer-min-permuted.xml",
        "loveometer-min-redundant.xml",
        "divider.xml",
        "timer.xml",
    ];
    let mut components = 0;
    for fixture in fixtures {
        let mut r = rig("equal-divider.yaml", None);
        r.session.sync_schematic_xml(fixture_text(fixture).as_bytes()).map_err(|e| format!("{fixture}: {e}"))?;
        let netlist = r.session.state().schematic.as_ref().unwrap().netlist.clone();
        for c in netlist.components() {
            let scan: BTreeSet<RowId> =
                netlist.assignments().iter().filter(|a| a.pin.component == c.id).map(|a| a.row).collect();
            let mark = r.session.records().len();
            let rows = r
                .session
                .highlight_component(&c.id, LedPattern::Blink)
                .map_err(|e| format!("{fixture}/{}: {e}", c.id))?;
            let frames = frames_since(&r.session, mark);
            let expected: Vec<BoardCommand> =
                scan.iter().map(|row| BoardCommand::led(row.get(), LedPattern::Blink)).collect();
            ensure(rows.iter().copied().collect::<BTreeSet<_>>() == scan, || {
                format!("{fixture}/{}: rows {rows:?}", c.id)
            })?;
            ensure(frames.len() == scan.len(), || {
                format!("{fixture}/{}: {} frames for {} rows", c.id, frames.len(), scan.len())
            })?;
            ensure(frames == expected, || format!("{fixture}/{}: frames {frames:?}", c.id))?;
            components += 1;
        }
    }
    Ok(format!("{components} components over {} fixtures", fixtures.len()))
}

fn statuses(session: &rowlight_core::Session) -> Vec<StatusEvent> {
    session
        .records()
        .iter()
        .filter_map(|r| match &r.event {
            SessionEvent::Status(s) => Some(s.clone()),
            _ => None,
        })
        .collect()
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let log = MemoryLog::new();
    let mut session = divider_builder(equal_divider(), log.clone()).start().map_err(|e| e.to_string())?;
    session.sync_schematic_xml(fixture_text("divider.xml").as_bytes()).map_err(|e| e.to_string())?;
    session.set_mode(Mode::Test).map_err(|e| e.to_string())?;
    session.device_command(&BoardCommand::output_voltage(PinId::D0, 5000, None)).map_err(|e| e.to_string())?;
    session.submit_query(DIVIDER_QUERY).map_err(|e| e.to_string())?;
    let test = session.state().tests.first().cloned().ok_or("no test created")?;
    let range = expected_range(&test.kind);
    ensure(range == Some((2300, 2700)), || format!("expected range {range:?}"))?;
    session.highlight_probes(&test.id).map_err(|e| e.to_string())?;
    let result = session.run_test(&test.id).map_err(|e| e.to_string())?;
    ensure(matches!(result, TestResult::Reading { value_mv: 2500, floating: false }), || format!("result {result:?}"))?;
    let verdict = session.submit_result(&test.id, None).map_err(|e| e.to_string())?;
    ensure(verdict == Verdict::Pass, || format!("verdict {verdict:?}"))?;
    let analysis = session.interpret(&test.id).map_err(|e| e.to_string())?;
    let taped = tape("divider-check.yaml").replies[&1].text.clone();
    ensure(analysis == taped, || format!("interpretation {analysis:?}"))?;

    let seen = statuses(&session);
    let thinking = seen.iter().position(|s| *s == StatusEvent::Thinking);
    let adding = seen.iter().position(|s| *s == StatusEvent::AddingTests);
    ensure(matches!((thinking, adding), (Some(t), Some(a)) if t < a), || format!("statuses {seen:?}"))?;
    let rebuilt = replay(&log.records()).map_err(|e| e.to_string())?;
    ensure(&rebuilt == session.state(), || "replayed state differs".into())?;
    ensure(rebuilt.tests[0].state == Lifecycle::Interpreted, || "test not interpreted".into())?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("{} records, replay identical, {elapsed:.2?}", log.records().len()))
}

fn expected_range(kind: &TestKind) -> Option<(u32, u32)> {
    match kind {
        TestKind::VoltageMeasurement { expected_mv: Some(r), .. } => Some((r.low, r.high)),
        _ => None,
    }
}

/// Level of a timed drive schedule at `t`, 0 once it has run out.
fn schedule_at(steps: &[(u32, u64)], t: u64) -> u32 {
    let mut end = 0;
    for &(mv, duration) in steps {
        end += duration;
        if t < end {
            return mv;
        }
    }
    0
}

fn signal_pattern() -> Check {
    let mut r = rig("unity-divider.yaml", Some("square-wave.yaml"));
    r.session.set_mode(Mode::Test).map_err(|e| e.to_string())?;
    r.session.submit_query("Toggle D0 and watch A0").map_err(|e| e.to_string())?;
    let id = r.session.state().tests.first().ok_or("no test created")?.id.clone();
    let mark = r.session.records().len();
    let TestResult::Series { series } = r.session.run_test(&id).map_err(|e| e.to_string())? else {
        return Err("no series".into());
    };
    let steps: Vec<(u32, u64)> = [(5000, 20), (0, 20)].repeat(3);
    let total: u64 = steps.iter().map(|s| s.1).sum();
    let oracle: Vec<u32> = (0..=total).step_by(10).map(|t| schedule_at(&steps, t)).collect();
    ensure(oracle == [5000, 5000, 0, 0, 5000, 5000, 0, 0, 5000, 5000, 0, 0, 0], || format!("oracle {oracle:?}"))?;
    let values: Vec<u32> = series.samples.iter().map(|s| s.value_mv).collect();
    ensure(values == oracle, || format!("series {values:?}"))?;
    let frames = frames_since(&r.session, mark).len();
    let budget = steps.len() + oracle.len();
    ensure(frames == budget, || format!("{frames} frames, expected {budget}"))?;
    Ok(format!("{} samples match, {frames} frames", values.len()))
}

fn crash_recovery() -> Check {
    let log = MemoryLog::new();
    let mut session = divider_builder(equal_divider(), log.clone()).start().map_err(|e| e.to_string())?;
    finish_divider_scenario(&mut session).map_err(|e| e.to_string())?;
    let records = log.records();
    for cut in 0..=records.len() {
        let device = DeviceHandle::new(SimDevice::open(&sim_fixture("equal-divider.yaml")).unwrap());
        let mut resumed = divider_builder(device, MemoryLog::new())
            .resume(records[..cut].to_vec())
            .map_err(|e| format!("cut {cut}: {e}"))?;
        finish_divider_scenario(&mut resumed).map_err(|e| format!("cut {cut}: {e}"))?;
        let state = resumed.state();
        let test = state.tests.first().ok_or_else(|| format!("cut {cut}: no test"))?;
        ensure(test.state == Lifecycle::Interpreted && test.verdict == Some(Verdict::Pass), || {
            format!("cut {cut}: test {} {:?}", test.state, test.verdict)
        })?;
        ensure(state.tests.len() == 1, || format!("cut {cut}: {} tests", state.tests.len()))?;
        ensure(replay(resumed.records()).as_ref() == Ok(state), || format!("cut {cut}: log does not replay"))?;
    }
    Ok(format!("resumed after each of {} records", records.len()))
}

fn main() -> ExitCode {
    let checks: [Criterion; 8] = [
        ("netlist canonicalization", canonicalization),
        ("protocol conformance", protocol),
        ("simulator fidelity", simulator),
        ("mode gating", mode_gating),
        ("highlighting oracle", highlighting),
        ("end-to-end divider scenario", end_to_end),
        ("signal pattern scenario", signal_pattern),
        ("crash recovery", crash_recovery),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(reason)) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
