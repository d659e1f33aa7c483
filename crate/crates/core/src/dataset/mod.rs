//! Instance schema, JSONL persistence, and the deterministic label oracle.

mod split;
mod synth;
mod templates;

pub use split::{split, Split, SplitMode};
pub use synth::{synth_generate, SlotEmbedder, SynthConfig};
pub use templates::{
    mentions_parameter_value, parse_instruction, parse_instruction_loose, realize_instruction,
    ParsedInstruction, TEMPLATES_PER_TASK,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};
use crate::params::{Param, ParameterConfig, NUM_PARAMS};
use crate::rng::hex_digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GlobalOutline,
    LocalOutline,
    GlobalDetail,
    LocalDetail,
    Metrology,
    Registration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detail {
    Outline,
    Detail,
    Metrology,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::GlobalOutline,
        Task::LocalOutline,
        Task::GlobalDetail,
        Task::LocalDetail,
        Task::Metrology,
        Task::Registration,
    ];

    /// The coverage and detail level implied by the task.
    pub fn implied(self) -> (Coverage, Detail) {
        match self {
            Task::GlobalOutline => (Coverage::Global, Detail::Outline),
            Task::LocalOutline => (Coverage::Local, Detail::Outline),
            Task::GlobalDetail => (Coverage::Global, Detail::Detail),
            Task::LocalDetail => (Coverage::Local, Detail::Detail),
            Task::Metrology => (Coverage::Local, Detail::Metrology),
            Task::Registration => (Coverage::Global, Detail::Outline),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::GlobalOutline => "global_outline",
            Task::LocalOutline => "local_outline",
            Task::GlobalDetail => "global_detail",
            Task::LocalDetail => "local_detail",
            Task::Metrology => "metrology",
            Task::Registration => "registration",
        }
    }
}

impl Coverage {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl Detail {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Inspection targets referenced by instructions.
pub const TARGETS: [&str; 12] = [
    "solder_joints",
    "edges",
    "cavity",
    "surface",
    "connector",
    "label_area",
    "heatsink",
    "screws",
    "ports",
    "traces",
    "bezel",
    "full_body",
];

/// Object tokens and the phrase used for them in instructions.
pub const OBJECTS: [(&str, &str); 16] = [
    ("pcb", "PCB"),
    ("gear", "gear"),
    ("bracket", "bracket"),
    ("turbine_blade", "turbine blade"),
    ("engine_block", "engine block"),
    ("housing", "housing"),
    ("connector_plug", "connector plug"),
    ("casting", "casting"),
    ("shaft", "shaft"),
    ("valve_body", "valve body"),
    ("phone_case", "phone case"),
    ("weld_plate", "weld plate"),
    ("bearing_ring", "bearing ring"),
    ("impeller", "impeller"),
    ("molded_part", "molded part"),
    ("sheet_panel", "sheet panel"),
];

pub fn target_index(target: &str) -> Option<usize> {
    TARGETS.iter().position(|t| *t == target)
}

pub fn object_index(object: &str) -> Option<usize> {
    OBJECTS.iter().position(|(t, _)| *t == object)
}

pub fn target_phrase(target: &str) -> String {
    target.replace('_', " ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotTuple {
    pub task: Task,
    pub coverage: Coverage,
    pub target: String,
    pub detail: Detail,
}

impl SlotTuple {
    pub fn new(task: Task, target: &str) -> Result<Self> {
        let (coverage, detail) = task.implied();
        let slot = Self {
            task,
            coverage,
            target: target.to_string(),
            detail,
        };
        slot.validate()?;
        Ok(slot)
    }

    pub fn validate(&self) -> Result<()> {
        if target_index(&self.target).is_none() {
            return Err(invalid(format!("slot.target '{}' is not a known target", self.target)));
        }
        if (self.coverage, self.detail) != self.task.implied() {
            return Err(invalid(format!(
                "slot.coverage/slot.detail ({:?}, {:?}) inconsistent with task '{}'",
                self.coverage,
                self.detail,
                self.task.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lighting {
    Full,
    Side,
    Dark,
}

impl Lighting {
    pub const ALL: [Lighting; 3] = [Lighting::Full, Lighting::Side, Lighting::Dark];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Lighting::Full => "full",
            Lighting::Side => "side",
            Lighting::Dark => "dark",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s)
    }

    /// Brightness lost under this lighting.
    pub fn brightness_offset(self) -> f64 {
        match self {
            Lighting::Full => 0.0,
            Lighting::Side => 0.15,
            Lighting::Dark => 0.3,
        }
    }
}

impl fmt::Display for Lighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppearanceCondition {
    pub position: u8,
    pub rotation: u8,
    pub lighting: Lighting,
}

impl AppearanceCondition {
    /// All 27 conditions, position-major.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::with_capacity(27);
        for position in 0..3 {
            for rotation in 0..3 {
                for lighting in Lighting::ALL {
                    out.push(Self {
                        position,
                        rotation,
                        lighting,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.position > 2 || self.rotation > 2 {
            return Err(invalid(format!(
                "condition position/rotation must be in 0..=2 (got {}, {})",
                self.position, self.rotation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latent {
    pub reflectivity: f64,
    pub brightness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub id: String,
    pub object_id: String,
    pub instruction_text: String,
    pub slot: SlotTuple,
    pub condition: AppearanceCondition,
    pub observation_embedding_id: String,
    pub instruction_embedding_id: String,
    pub labels: ParameterConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Latent>,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(invalid("id must be non-empty"));
        }
        if object_index(&self.object_id).is_none() {
            return Err(invalid(format!("object_id '{}' is not a known object", self.object_id)));
        }
        if self.instruction_text.trim().is_empty() {
            return Err(invalid("instruction_text must be non-empty"));
        }
        if self.observation_embedding_id.is_empty() || self.instruction_embedding_id.is_empty() {
            return Err(invalid("embedding ids must be non-empty"));
        }
        self.slot.validate()?;
        self.condition.validate()?;
        self.labels.validate()?;
        if let Some(l) = self.latent {
            check_unit("latent.reflectivity", l.reflectivity)?;
            check_unit("latent.brightness", l.brightness)?;
        }
        Ok(())
    }
}

fn check_unit(field: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!("{field} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Deterministic stand-in for expert parameter labels.
///
/// Intent decides sampling frequency and X range; brightness decides
/// exposure (one step longer for detail tasks); reflectivity decides CMOS
/// dynamic range and, inversely, light intensity.
pub fn label_oracle(slot: &SlotTuple, reflectivity: f64, brightness: f64) -> Result<ParameterConfig> {
    check_unit("reflectivity", reflectivity)?;
    check_unit("brightness", brightness)?;
    let mut out = [0u8; NUM_PARAMS];

    out[Param::SamplingFrequency.index()] = match slot.detail {
        Detail::Outline => 0,
        Detail::Metrology => 1,
        Detail::Detail => 2,
    };
    out[Param::MeasurementRangeX.index()] = match (slot.coverage, slot.detail) {
        (Coverage::Global, _) => 0,
        (Coverage::Local, Detail::Outline) => 1,
        (Coverage::Local, _) => 2,
    };
    let mut exposure: u8 = if brightness < 1.0 / 3.0 {
        2
    } else if brightness < 2.0 / 3.0 {
        1
    } else {
        0
    };
    if slot.detail == Detail::Detail {
        exposure = (exposure + 1).min(2);
    }
    out[Param::ExposureTime.index()] = exposure;
    out[Param::CmosDynamicRange.index()] = tercile(reflectivity);
    out[Param::LightIntensityRange.index()] = 2 - tercile(reflectivity);
    Ok(ParameterConfig(out))
}

fn tercile(v: f64) -> u8 {
    if v < 1.0 / 3.0 {
        0
    } else if v < 2.0 / 3.0 {
        1
    } else {
        2
    }
}

/// A validated, indexed collection of instances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    instances: Vec<Instance>,
    by_id: HashMap<String, usize>,
    by_object: BTreeMap<String, Vec<usize>>,
    by_condition: BTreeMap<AppearanceCondition, Vec<usize>>,
}

impl Dataset {
    pub fn from_instances(instances: Vec<Instance>) -> Result<Self> {
        let mut ds = Self::default();
        for inst in instances {
            ds.push(inst)?;
        }
        Ok(ds)
    }

    fn push(&mut self, inst: Instance) -> Result<()> {
        inst.validate()?;
        if self.by_id.contains_key(&inst.id) {
            return Err(invalid(format!("duplicate instance id '{}'", inst.id)));
        }
        let i = self.instances.len();
        self.by_id.insert(inst.id.clone(), i);
        self.by_object.entry(inst.object_id.clone()).or_default().push(i);
        self.by_condition.entry(inst.condition).or_default().push(i);
        self.instances.push(inst);
        Ok(())
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.by_id.get(id).map(|&i| &self.instances[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_object(&self, object_id: &str) -> &[usize] {
        self.by_object.get(object_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn by_condition(&self, cond: &AppearanceCondition) -> &[usize] {
        self.by_condition.get(cond).map(Vec::as_slice).unwrap_or(&[])
    }

    /// New dataset holding the instances at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut ds = Dataset::default();
        for &i in indices {
            ds.push(self.instances[i].clone())
                .expect("subset of a valid dataset is valid");
        }
        ds
    }

    pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut ds = Self::default();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let to_parse = |e: &dyn fmt::Display| Error::Parse {
                line: line_no,
                message: e.to_string(),
            };
            let line = line.map_err(|e| to_parse(&e))?;
            if line.trim().is_empty() {
                continue;
            }
            let inst: Instance = serde_json::from_str(&line).map_err(|e| to_parse(&e))?;
            ds.push(inst).map_err(|e| to_parse(&e))?;
        }
        Ok(ds)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse_jsonl(text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        Self::parse_jsonl(BufReader::new(file))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for inst in &self.instances {
            serde_json::to_writer(&mut w, inst)?;
            w.write_all(b"\n").map_err(io_err("<writer>"))?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(io_err(path))
    }

    /// SHA-256 of the canonical JSONL serialisation.
    pub fn fingerprint(&self) -> String {
        hex_digest(&self.to_jsonl_bytes())
    }
}
