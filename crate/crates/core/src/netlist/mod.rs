//! Canonical circuit model.
//!
//! A [`Netlist`] is the raw, as-imported form: it may carry duplicate
//! members, singleton nets and out-of-range rows. [`canonicalize`] turns it
//! into a [`CanonicalNetlist`], the deduplicated and deterministically ordered
//! model every other part of the system consumes.

mod xml;
mod yaml;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use xml::{parse_netlist_xml, NetlistImporter, XmlImporter};
pub use yaml::{emit_yaml, parse_yaml};

/// Lowest addressable breadboard row.
pub const ROW_MIN: u32 = 1;
/// Highest addressable breadboard row.
pub const ROW_MAX: u32 = 50;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetlistError {
    #[error("malformed xml: {0}")]
    MalformedXml(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("dangling reference to {component}.{pin}")]
    DanglingReference { component: String, pin: String },
    #[error("row {0} is outside 1..=50")]
    RowOutOfRange(i64),
    #[error("unknown component {0:?}")]
    UnknownComponent(String),
    #[error("component {0:?} is declared twice with different contents")]
    DuplicateComponent(String),
    #[error("component {0:?} has no pins")]
    NoPins(String),
    #[error("pin {component}.{pin} is assigned to rows {first} and {second}")]
    ConflictingAssignment { component: String, pin: String, first: u32, second: u32 },
    #[error("malformed yaml: {0}")]
    MalformedYaml(String),
}

impl NetlistError {
    pub fn code(&self) -> &'static str {
        match self {
            NetlistError::MalformedXml(_) => "malformed_xml",
            NetlistError::SchemaViolation(_) => "schema_violation",
            NetlistError::DanglingReference { .. } => "dangling_reference",
            NetlistError::RowOutOfRange(_) => "row_out_of_range",
            NetlistError::UnknownComponent(_) => "unknown_component",
            NetlistError::DuplicateComponent(_) => "duplicate_component",
            NetlistError::NoPins(_) => "no_pins",
            NetlistError::ConflictingAssignment { .. } => "conflicting_assignment",
            NetlistError::MalformedYaml(_) => "malformed_yaml",
        }
    }
}

/// A breadboard row in `1..=50`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u32")]
pub struct RowId(u8);

impl RowId {
    pub fn new(row: i64) -> Result<Self, NetlistError> {
        if (ROW_MIN as i64..=ROW_MAX as i64).contains(&row) {
            Ok(RowId(row as u8))
        } else {
            Err(NetlistError::RowOutOfRange(row))
        }
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }

    pub fn all() -> impl Iterator<Item = RowId> {
        (ROW_MIN..=ROW_MAX).map(|r| RowId(r as u8))
    }
}

impl TryFrom<i64> for RowId {
    type Error = NetlistError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        RowId::new(value)
    }
}

impl From<RowId> for u32 {
    fn from(row: RowId) -> u32 {
        row.get()
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PinRef {
    pub component: String,
    pub pin: String,
}

impl PinRef {
    pub fn new(component: impl Into<String>, pin: impl Into<String>) -> Self {
        PinRef { component: component.into(), pin: pin.into() }
    }
}

impl fmt::Display for PinRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.pin)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub label: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    /// Pin names in declaration order.
    pub pins: Vec<String>,
}

impl Component {
    pub fn has_pin(&self, pin: &str) -> bool {
        self.pins.iter().any(|p| p == pin)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Net {
    pub id: String,
    pub members: BTreeSet<PinRef>,
    /// Rows occupied by any assigned member.
    pub rows: BTreeSet<RowId>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowAssignment {
    pub pin: PinRef,
    pub row: RowId,
}

/// Raw net as imported; members may repeat.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawNet {
    pub id: String,
    pub members: Vec<PinRef>,
}

/// Raw assignment; the row is unchecked until canonicalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAssignment {
    pub pin: PinRef,
    pub row: i64,
}

/// Netlist as produced by an importer, before deduplication and checks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Netlist {
    pub components: Vec<Component>,
    pub nets: Vec<RawNet>,
    pub assignments: Vec<RawAssignment>,
    pub revision: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalNetlist {
    components: Vec<Component>,
    nets: Vec<Net>,
    assignments: Vec<RowAssignment>,
    #[serde(default)]
    revision: u64,
}

impl CanonicalNetlist {
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    pub fn assignments(&self) -> &[RowAssignment] {
        &self.assignments
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn with_revision(mut self, revision: u64) -> Self {
        self.revision = revision;
        self
    }

    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components.binary_search_by(|c| c.id.as_str().cmp(id)).ok().map(|i| &self.components[i])
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty() && self.nets.is_empty() && self.assignments.is_empty()
    }

    pub fn row_of(&self, pin: &PinRef) -> Option<RowId> {
        self.assignments.binary_search_by(|a| a.pin.cmp(pin)).ok().map(|i| self.assignments[i].row)
    }

    pub fn net_of(&self, pin: &PinRef) -> Option<&Net> {
        self.nets.iter().find(|n| n.members.contains(pin))
    }

    /// Converts back to the raw form; `canonicalize` of the result is `self`.
    pub fn to_raw(&self) -> Netlist {
        Netlist {
            components: self.components.clone(),
            nets: self
                .nets
                .iter()
                .map(|n| RawNet { id: n.id.clone(), members: n.members.iter().cloned().collect() })
                .collect(),
            assignments: self
                .assignments
                .iter()
                .map(|a| RawAssignment { pin: a.pin.clone(), row: a.row.get() as i64 })
                .collect(),
            revision: self.revision,
        }
    }
}

/// Deduplicates, prunes and orders a raw netlist.
///
/// Identical repeated declarations are merged. Nets left with fewer than two
/// distinct members are dropped. Rows outside `1..=50` are an error rather
/// than being clamped.
pub fn canonicalize(raw: &Netlist) -> Result<CanonicalNetlist, NetlistError> {
    let mut components: BTreeMap<&str, Component> = BTreeMap::new();
    for c in &raw.components {
        if c.id.is_empty() {
            return Err(NetlistError::SchemaViolation("component id is empty".into()));
        }
        let mut pins: Vec<String> = Vec::with_capacity(c.pins.len());
        for p in &c.pins {
            if p.is_empty() {
                return Err(NetlistError::SchemaViolation(format!("component {:?} has an empty pin name", c.id)));
            }
            if !pins.contains(p) {
                pins.push(p.clone());
            }
        }
        if pins.is_empty() {
            return Err(NetlistError::NoPins(c.id.clone()));
        }
        let cleaned = Component { pins, ..c.clone() };
        match components.get(c.id.as_str()) {
            Some(existing) if *existing != cleaned => return Err(NetlistError::DuplicateComponent(c.id.clone())),
            Some(_) => {}
            None => {
                components.insert(&c.id, cleaned);
            }
        }
    }

    let check_pin = |pin: &PinRef| -> Result<(), NetlistError> {
        match components.get(pin.component.as_str()) {
            Some(c) if c.has_pin(&pin.pin) => Ok(()),
            _ => Err(NetlistError::DanglingReference { component: pin.component.clone(), pin: pin.pin.clone() }),
        }
    };

    let mut assignments: BTreeMap<PinRef, RowId> = BTreeMap::new();
    for a in &raw.assignments {
        let row = RowId::new(a.row)?;
        check_pin(&a.pin)?;
        match assignments.get(&a.pin) {
            Some(prev) if *prev != row => {
                return Err(NetlistError::ConflictingAssignment {
                    component: a.pin.component.clone(),
                    pin: a.pin.pin.clone(),
                    first: prev.get(),
                    second: row.get(),
                })
            }
            Some(_) => {}
            None => {
                assignments.insert(a.pin.clone(), row);
            }
        }
    }

    let mut nets: BTreeMap<&str, BTreeSet<PinRef>> = BTreeMap::new();
    for n in &raw.nets {
        if n.id.is_empty() {
            return Err(NetlistError::SchemaViolation("net id is empty".into()));
        }
        let members = nets.entry(&n.id).or_default();
        for m in &n.members {
            check_pin(m)?;
            members.insert(m.clone());
        }
    }

    let nets = nets
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(id, members)| {
            let rows = members.iter().filter_map(|m| assignments.get(m).copied()).collect();
            Net { id: id.to_string(), members, rows }
        })
        .collect();

    Ok(CanonicalNetlist {
        components: components.into_values().collect(),
        nets,
        assignments: assignments.into_iter().map(|(pin, row)| RowAssignment { pin, row }).collect(),
        revision: raw.revision,
    })
}

/// Union of the rows occupied by a component's pins.
pub fn rows_for_component(netlist: &CanonicalNetlist, component_id: &str) -> Result<BTreeSet<RowId>, NetlistError> {
    if netlist.component(component_id).is_none() {
        return Err(NetlistError::UnknownComponent(component_id.to_string()));
    }
    // Assignments are sorted by (component, pin) so the component's block is contiguous.
    let start = netlist.assignments.partition_point(|a| a.pin.component.as_str() < component_id);
    Ok(netlist.assignments[start..].iter().take_while(|a| a.pin.component == component_id).map(|a| a.row).collect())
}

/// What the agent is told about one selected component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentContextEntry {
    pub id: String,
    pub label: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub pin_rows: BTreeMap<String, RowId>,
    pub pin_nets: BTreeMap<String, String>,
}

/// Builds context entries for `ids`, preserving order and repeats.
pub fn extract_component_context(
    netlist: &CanonicalNetlist,
    ids: &[String],
) -> Result<Vec<ComponentContextEntry>, NetlistError> {
    ids.iter()
        .map(|id| {
            let c = netlist.component(id).ok_or_else(|| NetlistError::UnknownComponent(id.clone()))?;
            let mut pin_rows = BTreeMap::new();
            let mut pin_nets = BTreeMap::new();
            for pin in &c.pins {
                let pref = PinRef::new(&c.id, pin);
                if let Some(row) = netlist.row_of(&pref) {
                    pin_rows.insert(pin.clone(), row);
                }
                if let Some(net) = netlist.net_of(&pref) {
                    pin_nets.insert(pin.clone(), net.id.clone());
                }
            }
            Ok(ComponentContextEntry {
                id: c.id.clone(),
                label: c.label.clone(),
                kind: c.kind.clone(),
                value: c.value.clone(),
                pin_rows,
                pin_nets,
            })
        })
        .collect()
}
