use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DeviceError;
use crate::protocol::{PinId, MV_MAX};

/// How an analog input responds to the circuit around it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferModel {
    Constant(u32),
    /// Reads `ratio` times the level driven on `source`.
    Divider {
        source: PinId,
        #[serde(with = "ratio_text")]
        ratio: Ratio<u32>,
    },
    /// `base` plus seeded noise uniform in `[-amplitude_mv, amplitude_mv]`.
    Noisy {
        base: Box<TransferModel>,
        amplitude_mv: u32,
        seed: u64,
    },
    Open,
}

impl TransferModel {
    pub fn divider(source: PinId, numer: u32, denom: u32) -> Self {
        TransferModel::Divider { source, ratio: Ratio::new_raw(numer, denom) }
    }

    pub fn noisy(base: TransferModel, amplitude_mv: u32, seed: u64) -> Self {
        TransferModel::Noisy { base: Box::new(base), amplitude_mv, seed }
    }

    pub(super) fn validate(&self) -> Result<(), DeviceError> {
        match self {
            TransferModel::Constant(mv) if *mv > MV_MAX => {
                Err(DeviceError::InvalidFixture(format!("constant {mv} mV exceeds 5000 mV")))
            }
            TransferModel::Divider { source, ratio } => {
                if !source.is_output() {
                    return Err(DeviceError::InvalidFixture(format!(
                        "divider source {source} is not a signal-out pin"
                    )));
                }
                if *ratio.denom() == 0 || ratio.numer() > ratio.denom() {
                    return Err(DeviceError::InvalidFixture(format!(
                        "divider ratio {}/{} is outside [0, 1]",
                        ratio.numer(),
                        ratio.denom()
                    )));
                }
                Ok(())
            }
            TransferModel::Noisy { base, .. } => base.validate(),
            _ => Ok(()),
        }
    }
}

mod ratio_text {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Ratio<u32>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u32>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Text {
            S(String),
            N(u32),
        }
        let text = match Text::deserialize(d)? {
            Text::S(s) => s,
            Text::N(n) => n.to_string(),
        };
        let (n, dn) = match text.split_once('/') {
            Some((n, dn)) => (n.trim(), dn.trim()),
            None => (text.trim(), "1"),
        };
        let numer = n.parse::<u32>().map_err(de::Error::custom)?;
        let denom = dn.parse::<u32>().map_err(de::Error::custom)?;
        if denom == 0 {
            return Err(de::Error::custom("ratio denominator is zero"));
        }
        Ok(Ratio::new_raw(numer, denom))
    }
}

/// Per-pin transfer models for the simulated breadboard.
///
/// Pins are kept as declared so that a pin listed twice is caught when the
/// simulator opens, not silently overwritten.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VirtualFixture {
    pins: Vec<(PinId, TransferModel)>,
}

impl VirtualFixture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_pin(mut self, pin: PinId, model: TransferModel) -> Self {
        self.pins.push((pin, model));
        self
    }

    pub fn pins(&self) -> &[(PinId, TransferModel)] {
        &self.pins
    }

    /// Checks the declarations and fills undeclared analog pins with `Open`.
    pub fn resolve(&self) -> Result<BTreeMap<PinId, TransferModel>, DeviceError> {
        let mut out = BTreeMap::new();
        for (pin, model) in &self.pins {
            if !pin.is_analog() {
                return Err(DeviceError::InvalidFixture(format!("{pin} is not an analog-in pin")));
            }
            model.validate()?;
            if out.insert(*pin, model.clone()).is_some() {
                return Err(DeviceError::InvalidFixture(format!("{pin} is mapped twice")));
            }
        }
        for pin in PinId::analog() {
            out.entry(pin).or_insert(TransferModel::Open);
        }
        Ok(out)
    }

    /// Reads the fixture file form, `pins: {A0: {divider: {source: D0, ratio: "1/2"}}}`.
    pub fn from_yaml(text: &str) -> Result<Self, DeviceError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            #[serde(default)]
            pins: DeclaredPins,
        }
        let invalid = |e: &dyn fmt::Display| DeviceError::InvalidFixture(e.to_string());
        // serde_yaml wants `!tag` syntax for enums; going through JSON accepts `{variant: ...}` maps.
        let yaml: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| invalid(&e))?;
        let json = serde_json::to_value(yaml).map_err(|e| invalid(&e))?;
        let file: File = serde_json::from_value(json).map_err(|e| invalid(&e))?;
        let fixture = VirtualFixture { pins: file.pins.0 };
        fixture.resolve()?;
        Ok(fixture)
    }

    pub fn to_yaml(&self) -> String {
        #[derive(Serialize)]
        struct File<'a> {
            pins: BTreeMap<String, &'a TransferModel>,
        }
        let pins = self.pins.iter().map(|(p, m)| (p.to_string(), m)).collect();
        let json = serde_json::to_value(File { pins }).expect("fixtures always serialize");
        serde_yaml::to_string(&json).expect("json values always serialize")
    }
}

#[derive(Default)]
struct DeclaredPins(Vec<(PinId, TransferModel)>);

impl<'de> Deserialize<'de> for DeclaredPins {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = DeclaredPins;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of pin name to transfer model")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut pins = Vec::new();
                while let Some((pin, model)) = map.next_entry::<PinId, TransferModel>()? {
                    pins.push((pin, model));
                }
                Ok(DeclaredPins(pins))
            }
        }
        d.deserialize_map(V)
    }
}
