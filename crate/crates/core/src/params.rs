//! The scanner parameter space: five parameters, three ordered values each.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_PARAMS: usize = 5;
pub const VALUES_PER_PARAM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    SamplingFrequency,
    MeasurementRangeX,
    ExposureTime,
    CmosDynamicRange,
    LightIntensityRange,
}

impl Param {
    pub const ALL: [Param; NUM_PARAMS] = [
        Param::SamplingFrequency,
        Param::MeasurementRangeX,
        Param::ExposureTime,
        Param::CmosDynamicRange,
        Param::LightIntensityRange,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::SamplingFrequency => "sampling_frequency",
            Param::MeasurementRangeX => "measurement_range_x",
            Param::ExposureTime => "exposure_time",
            Param::CmosDynamicRange => "cmos_dynamic_range",
            Param::LightIntensityRange => "light_intensity_range",
        }
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Value vocabulary in ordinal order.
    pub fn vocabulary(self) -> [&'static str; VALUES_PER_PARAM] {
        match self {
            Param::SamplingFrequency => ["100Hz", "500Hz", "1kHz"],
            Param::MeasurementRangeX => ["FULL", "1/2", "1/4"],
            Param::ExposureTime => ["60us", "120us", "240us"],
            Param::CmosDynamicRange => ["1", "5", "9"],
            Param::LightIntensityRange => ["Low", "Normal", "High"],
        }
    }

    /// Win@1 is undefined for the X measurement range: adjacent ranges clip
    /// different geometry.
    pub fn win1_eligible(self) -> bool {
        self != Param::MeasurementRangeX
    }

    /// Whether the parameter's label is decided by the inspection intent.
    pub fn intent_driven(self) -> bool {
        matches!(self, Param::SamplingFrequency | Param::MeasurementRangeX)
    }

    pub fn value_index(self, value: &str) -> Option<u8> {
        self.vocabulary()
            .iter()
            .position(|v| *v == value)
            .map(|i| i as u8)
    }

    pub fn parse_value(self, value: &str) -> Result<u8> {
        self.value_index(value).ok_or_else(|| Error::UnknownValue {
            parameter: self.name().to_string(),
            value: value.to_string(),
            vocabulary: self.vocabulary().join(", "),
        })
    }

    pub fn value_name(self, index: u8) -> Option<&'static str> {
        self.vocabulary().get(index as usize).copied()
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingFactor {
    Intent,
    Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterDescriptor {
    pub name: String,
    pub values: Vec<String>,
    pub win1_eligible: bool,
    pub primary_factor: DrivingFactor,
    pub secondary_factor: Option<DrivingFactor>,
}

/// Ordered parameter descriptors. Only the standard space is valid; it is
/// carried in model files so a model documents its own label vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpace {
    pub parameters: Vec<ParameterDescriptor>,
}

impl ParameterSpace {
    pub fn standard() -> Self {
        let factors = |p: Param| match p {
            Param::SamplingFrequency | Param::MeasurementRangeX => (DrivingFactor::Intent, None),
            Param::ExposureTime => (DrivingFactor::Observation, Some(DrivingFactor::Intent)),
            Param::CmosDynamicRange | Param::LightIntensityRange => {
                (DrivingFactor::Observation, None)
            }
        };
        Self {
            parameters: Param::ALL
                .iter()
                .map(|&p| {
                    let (primary, secondary) = factors(p);
                    ParameterDescriptor {
                        name: p.name().to_string(),
                        values: p.vocabulary().iter().map(|s| s.to_string()).collect(),
                        win1_eligible: p.win1_eligible(),
                        primary_factor: primary,
                        secondary_factor: secondary,
                    }
                })
                .collect(),
        }
    }

    pub fn is_standard(&self) -> bool {
        *self == Self::standard()
    }

    /// Ordinal index of `value` within `param`'s vocabulary.
    pub fn ord(&self, param: Param, value: &str) -> Option<usize> {
        self.parameters
            .get(param.index())?
            .values
            .iter()
            .position(|v| v == value)
    }
}

impl Default for ParameterSpace {
    fn default() -> Self {
        Self::standard()
    }
}

/// One value index per parameter, in [`Param::ALL`] order.
///
/// Indices outside a vocabulary are representable so that corrupted
/// candidates can be held and flagged; [`ParameterConfig::validate`] and the
/// name-based constructors reject them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParameterConfig(pub [u8; NUM_PARAMS]);

impl ParameterConfig {
    pub fn get(&self, p: Param) -> u8 {
        self.0[p.index()]
    }

    pub fn set(&mut self, p: Param, v: u8) {
        self.0[p.index()] = v;
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&v| (v as usize) < VALUES_PER_PARAM)
    }

    pub fn validate(&self) -> Result<()> {
        for p in Param::ALL {
            let v = self.get(p);
            if v as usize >= VALUES_PER_PARAM {
                return Err(Error::InvalidLabel {
                    parameter: p.name().to_string(),
                    value: format!("#{v}"),
                });
            }
        }
        Ok(())
    }

    pub fn value_name(&self, p: Param) -> String {
        let v = self.get(p);
        p.value_name(v)
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{v}"))
    }

    pub fn to_names(&self) -> BTreeMap<String, String> {
        Param::ALL
            .iter()
            .map(|&p| (p.name().to_string(), self.value_name(p)))
            .collect()
    }

    /// Strict parse: every parameter present, every value in vocabulary, no
    /// extra keys.
    pub fn from_names(names: &BTreeMap<String, String>) -> Result<Self> {
        for key in names.keys() {
            if Param::from_name(key).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "unknown parameter '{key}'"
                )));
            }
        }
        let mut out = [0u8; NUM_PARAMS];
        for p in Param::ALL {
            let value = names.get(p.name()).ok_or_else(|| {
                Error::InvalidArgument(format!("labels missing parameter '{}'", p.name()))
            })?;
            out[p.index()] = p.parse_value(value)?;
        }
        Ok(Self(out))
    }

    /// Lenient parse for agent output: unknown or missing values become
    /// out-of-vocabulary indices, to be caught by the validity check.
    pub fn from_names_lenient(names: &BTreeMap<String, String>) -> Self {
        let mut out = [u8::MAX; NUM_PARAMS];
        for p in Param::ALL {
            if let Some(i) = names.get(p.name()).and_then(|v| p.value_index(v)) {
                out[p.index()] = i;
            }
        }
        Self(out)
    }
}

impl Serialize for ParameterConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParameterConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = BTreeMap::<String, String>::deserialize(d)?;
        Self::from_names(&names).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_space_vocabularies() {
        let space = ParameterSpace::standard();
        assert_eq!(space.parameters.len(), 5);
        assert_eq!(space.parameters[1].values, ["FULL", "1/2", "1/4"]);
        assert!(!space.parameters[1].win1_eligible);
        assert_eq!(space.ord(Param::CmosDynamicRange, "9"), Some(2));
        assert_eq!(space.ord(Param::LightIntensityRange, "Normal"), Some(1));
    }

    #[test]
    fn unknown_value_cites_vocabulary() {
        let err = Param::ExposureTime.parse_value("90us").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("90us") && msg.contains("60us, 120us, 240us"), "{msg}");
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ParameterConfig([2, 0, 1, 1, 0]);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ParameterConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn lenient_parse_marks_unknown() {
        let mut names = ParameterConfig([0; 5]).to_names();
        names.insert("exposure_time".into(), "90us".into());
        let cfg = ParameterConfig::from_names_lenient(&names);
        assert!(!cfg.is_valid());
        assert!(ParameterConfig::from_names(&names).is_err());
    }
}
