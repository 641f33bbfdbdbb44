use std::fmt::Write;

use serde::Deserialize;

use super::{canonicalize, CanonicalNetlist, Component, Netlist, NetlistError, PinRef, RawAssignment, RawNet};

/// Renders the canonical YAML context form.
///
/// The writer is hand-rolled so the bytes are fully determined: fixed key
/// order, two-space indent, LF endings, every string double-quoted.
pub fn emit_yaml(netlist: &CanonicalNetlist) -> String {
    let mut out = String::new();

    section(&mut out, "components", netlist.components().is_empty());
    for c in netlist.components() {
        let _ = writeln!(out, "  - id: {}", q(&c.id));
        let _ = writeln!(out, "    label: {}", q(&c.label));
        let _ = writeln!(out, "    kind: {}", q(&c.kind));
        if let Some(v) = &c.value {
            let _ = writeln!(out, "    value: {}", q(v));
        }
        let pins: Vec<String> = c.pins.iter().map(|p| q(p)).collect();
        let _ = writeln!(out, "    pins: [{}]", pins.join(", "));
    }

    section(&mut out, "nets", netlist.nets().is_empty());
    for n in netlist.nets() {
        let _ = writeln!(out, "  - id: {}", q(&n.id));
        out.push_str("    members:\n");
        for m in &n.members {
            let _ = writeln!(out, "      - {{component: {}, pin: {}}}", q(&m.component), q(&m.pin));
        }
        let rows: Vec<String> = n.rows.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(out, "    rows: [{}]", rows.join(", "));
    }

    section(&mut out, "assignments", netlist.assignments().is_empty());
    for a in netlist.assignments() {
        let _ = writeln!(out, "  - {{component: {}, pin: {}, row: {}}}", q(&a.pin.component), q(&a.pin.pin), a.row);
    }
    out
}

fn section(out: &mut String, key: &str, empty: bool) {
    if empty {
        let _ = writeln!(out, "{key}: []");
    } else {
        let _ = writeln!(out, "{key}:");
    }
}

// JSON string escaping is a subset of YAML double-quoted scalars.
fn q(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    components: Vec<Component>,
    nets: Vec<DocNet>,
    assignments: Vec<DocAssignment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocNet {
    id: String,
    members: Vec<PinRef>,
    #[serde(default)]
    rows: Vec<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocAssignment {
    component: String,
    pin: String,
    row: i64,
}

/// Reads the canonical YAML form back into a model (revision 0).
pub fn parse_yaml(text: &str) -> Result<CanonicalNetlist, NetlistError> {
    let doc: Doc = serde_yaml::from_str(text).map_err(|e| NetlistError::MalformedYaml(e.to_string()))?;
    let declared_rows: Vec<(String, Vec<i64>)> = doc.nets.iter().map(|n| (n.id.clone(), n.rows.clone())).collect();
    let raw = Netlist {
        components: doc.components,
        nets: doc.nets.into_iter().map(|n| RawNet { id: n.id, members: n.members }).collect(),
        assignments: doc
            .assignments
            .into_iter()
            .map(|a| RawAssignment { pin: PinRef::new(a.component, a.pin), row: a.row })
            .collect(),
        revision: 0,
    };
    let netlist = canonicalize(&raw)?;
    for (id, rows) in declared_rows {
        if let Some(net) = netlist.nets().iter().find(|n| n.id == id) {
            let derived: Vec<i64> = net.rows.iter().map(|r| r.get() as i64).collect();
            let mut declared = rows;
            declared.sort_unstable();
            declared.dedup();
            if declared != derived {
                return Err(NetlistError::MalformedYaml(format!(
                    "net {id:?} declares rows {declared:?} but its members occupy {derived:?}"
                )));
            }
        }
    }
    Ok(netlist)
}
