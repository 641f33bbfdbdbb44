use roxmltree::{Document, Node};

use super::{canonicalize, CanonicalNetlist, Component, Netlist, NetlistError, PinRef, RawAssignment, RawNet};

/// Seam for other schematic exports: anything that can produce a raw netlist.
pub trait NetlistImporter {
    fn import(&self, bytes: &[u8]) -> Result<Netlist, NetlistError>;
}

/// Importer for the native `<netlist>` XML schema.
///
/// ```xml
/// <netlist>
///   <component id="D1" label="LED1" kind="LED" value="red">
///     <pin name="anode"/><pin name="cathode"/>
///   </component>
///   <net id="N1"><member component="D1" pin="anode"/>...</net>
///   <assignment component="D1" pin="anode" row="4"/>
/// </netlist>
/// ```
#[derive(Debug, Default, Clone, Copy)]
pub struct XmlImporter;

impl NetlistImporter for XmlImporter {
    fn import(&self, bytes: &[u8]) -> Result<Netlist, NetlistError> {
        let text = std::str::from_utf8(bytes).map_err(|e| NetlistError::MalformedXml(format!("not utf-8: {e}")))?;
        let doc = Document::parse(text).map_err(|e| NetlistError::MalformedXml(e.to_string()))?;
        let root = doc.root_element();
        if root.tag_name().name() != "netlist" {
            return Err(schema(format!("root element is <{}>, expected <netlist>", root.tag_name().name())));
        }

        let mut out = Netlist::default();
        for child in root.children().filter(Node::is_element) {
            match child.tag_name().name() {
                "component" => out.components.push(component(child)?),
                "net" => {
                    let mut net = RawNet { id: attr(child, "id")?.to_string(), members: Vec::new() };
                    for m in elements(child, "member")? {
                        net.members.push(pin_ref(m)?);
                    }
                    out.nets.push(net);
                }
                "assignment" => {
                    no_children(child)?;
                    let raw = attr(child, "row")?;
                    let row = raw
                        .trim()
                        .parse::<i64>()
                        .map_err(|_| schema(format!("assignment row {raw:?} is not an integer")))?;
                    out.assignments.push(RawAssignment { pin: pin_ref(child)?, row });
                }
                other => return Err(schema(format!("unknown element <{other}>"))),
            }
        }
        Ok(out)
    }
}

/// Parses netlist XML and canonicalizes it.
pub fn parse_netlist_xml(xml: &[u8]) -> Result<CanonicalNetlist, NetlistError> {
    canonicalize(&XmlImporter.import(xml)?)
}

fn schema(msg: String) -> NetlistError {
    NetlistError::SchemaViolation(msg)
}

fn attr<'a>(node: Node<'a, '_>, name: &str) -> Result<&'a str, NetlistError> {
    node.attribute(name)
        .ok_or_else(|| schema(format!("<{}> is missing required attribute {name:?}", node.tag_name().name())))
}

fn pin_ref(node: Node<'_, '_>) -> Result<PinRef, NetlistError> {
    Ok(PinRef::new(attr(node, "component")?, attr(node, "pin")?))
}

fn no_children(node: Node<'_, '_>) -> Result<(), NetlistError> {
    elements(node, "")?;
    Ok(())
}

/// Child elements of `node`, all of which must be named `expected`.
fn elements<'a, 'i>(node: Node<'a, 'i>, expected: &str) -> Result<Vec<Node<'a, 'i>>, NetlistError> {
    node.children()
        .filter(Node::is_element)
        .map(|c| {
            if c.tag_name().name() == expected {
                Ok(c)
            } else {
                Err(schema(format!("unknown element <{}> inside <{}>", c.tag_name().name(), node.tag_name().name())))
            }
        })
        .collect()
}

fn component(node: Node<'_, '_>) -> Result<Component, NetlistError> {
    let pins = elements(node, "pin")?
        .into_iter()
        .map(|p| attr(p, "name").map(str::to_string))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Component {
        id: attr(node, "id")?.to_string(),
        label: attr(node, "label")?.to_string(),
        kind: attr(node, "kind")?.to_string(),
        value: node.attribute("value").map(str::to_string),
        pins,
    })
}
