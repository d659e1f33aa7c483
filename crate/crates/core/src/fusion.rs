//! Observation/instruction embeddings and their fusion into one hypervector.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Instance;
use crate::error::{invalid, io_err, Error, Result};
use crate::hdc::{bind, EncoderSpec, Hypervector, ProjectionEncoder, DEFAULT_HYPER_DIM};
use crate::rng::mix64;

pub const DEFAULT_EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Observation,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Embedding {
    pub id: String,
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, kind: EmbeddingKind, values: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            kind,
            dim: values.len(),
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid(format!("embedding '{}' has zero dimension", self.id)));
        }
        if self.dim != self.values.len() {
            return Err(invalid(format!(
                "embedding '{}' declares dim {} but has {} values",
                self.id,
                self.dim,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("embedding '{}' has non-finite values", self.id)));
        }
        Ok(())
    }
}

/// Named embeddings, kept in insertion order for stable output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    records: Vec<Embedding>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, emb: Embedding) -> Result<()> {
        emb.validate()?;
        if self.index.contains_key(&emb.id) {
            return Err(invalid(format!("duplicate embedding id '{}'", emb.id)));
        }
        self.index.insert(emb.id.clone(), self.records.len());
        self.records.push(emb);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn require(&self, id: &str) -> Result<&Embedding> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Embedding> {
        self.records.iter()
    }

    /// Dimension shared by every embedding of `kind`, if any exist.
    pub fn dim_of(&self, kind: EmbeddingKind) -> Option<usize> {
        self.records.iter().find(|e| e.kind == kind).map(|e| e.dim)
    }

    pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut store = Self::new();
        let mut dims: HashMap<EmbeddingKind, usize> = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let emb: Embedding = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let expected = *dims.entry(emb.kind).or_insert(emb.dim);
            if emb.dim != expected {
                return Err(parse_err(format!(
                    "embedding '{}' has dim {} but earlier {:?} embeddings have dim {expected}",
                    emb.id, emb.dim, emb.kind
                )));
            }
            store.insert(emb).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(store)
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
        for emb in &self.records {
            serde_json::to_writer(&mut w, emb)?;
            w.write_all(b"\n").map_err(io_err("<writer>"))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(io_err(path))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    /// Concatenate the (normalised) embeddings and project jointly.
    ConcatProject,
    /// Project each modality separately and bind the hypervectors.
    Hyperbind,
}

/// Which inputs a model consumes. Single-modality modes bypass fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Both,
    ObservationOnly,
    InstructionOnly,
}

impl Modality {
    pub const ALL: [Modality; 3] = [
        Modality::ObservationOnly,
        Modality::InstructionOnly,
        Modality::Both,
    ];

    pub fn uses_observation(self) -> bool {
        self != Modality::InstructionOnly
    }

    pub fn uses_instruction(self) -> bool {
        self != Modality::ObservationOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Both => "both",
            Modality::ObservationOnly => "observation_only",
            Modality::InstructionOnly => "instruction_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    pub normalize_inputs: bool,
    pub observation_seed: u64,
    pub instruction_seed: u64,
    pub hyper_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            strategy: FusionStrategy::ConcatProject,
            normalize_inputs: true,
            observation_seed: 0x0b5e_0001,
            instruction_seed: 0x1257_0002,
            hyper_dim: DEFAULT_HYPER_DIM,
        }
    }
}

impl FusionConfig {
    /// Seed of the joint concat-project encoder.
    pub fn joint_seed(&self) -> u64 {
        mix64(self.observation_seed ^ mix64(self.instruction_seed))
    }
}

/// The projection encoders for one fusion configuration.
#[derive(Debug, Clone)]
pub struct EncoderSet {
    pub observation: ProjectionEncoder,
    pub instruction: ProjectionEncoder,
    /// Present for the concat-project strategy.
    pub joint: Option<ProjectionEncoder>,
}

/// Persistable descriptors of an [`EncoderSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDescriptors {
    pub observation: EncoderSpec,
    pub instruction: EncoderSpec,
    pub joint: Option<EncoderSpec>,
}

impl EncoderSet {
    pub fn new(cfg: &FusionConfig, observation_dim: usize, instruction_dim: usize) -> Result<Self> {
        let observation =
            ProjectionEncoder::new(observation_dim, cfg.hyper_dim, cfg.observation_seed)?;
        let instruction =
            ProjectionEncoder::new(instruction_dim, cfg.hyper_dim, cfg.instruction_seed)?;
        let joint = match cfg.strategy {
            FusionStrategy::ConcatProject => Some(ProjectionEncoder::new(
                observation_dim + instruction_dim,
                cfg.hyper_dim,
                cfg.joint_seed(),
            )?),
            FusionStrategy::Hyperbind => None,
        };
        Ok(Self {
            observation,
            instruction,
            joint,
        })
    }

    pub fn descriptors(&self) -> EncoderDescriptors {
        EncoderDescriptors {
            observation: self.observation.spec(),
            instruction: self.instruction.spec(),
            joint: self.joint.as_ref().map(|e| e.spec()),
        }
    }

    pub fn from_descriptors(d: &EncoderDescriptors) -> Result<Self> {
        Ok(Self {
            observation: ProjectionEncoder::from_spec(d.observation)?,
            instruction: ProjectionEncoder::from_spec(d.instruction)?,
            joint: d.joint.map(ProjectionEncoder::from_spec).transpose()?,
        })
    }

    pub fn observation_dim(&self) -> usize {
        self.observation.input_dim()
    }

    pub fn instruction_dim(&self) -> usize {
        self.instruction.input_dim()
    }
}

fn prepared(e: &Embedding, kind: EmbeddingKind, expected_dim: usize, normalize: bool) -> Result<Vec<f64>> {
    e.validate()?;
    if e.kind != kind {
        return Err(invalid(format!(
            "embedding '{}' is {:?}, expected {kind:?}",
            e.id, e.kind
        )));
    }
    if e.dim != expected_dim {
        return Err(invalid(format!(
            "embedding '{}' has dim {} but the {kind:?} encoder expects {expected_dim}",
            e.id, e.dim
        )));
    }
    if !normalize {
        return Ok(e.values.clone());
    }
    let norm = e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(e.values.clone());
    }
    Ok(e.values.iter().map(|v| v / norm).collect())
}

/// Fuse whichever embeddings are present into one hypervector.
pub fn fuse(
    observation: Option<&Embedding>,
    instruction: Option<&Embedding>,
    cfg: &FusionConfig,
    encoders: &EncoderSet,
) -> Result<Hypervector> {
    let norm = cfg.normalize_inputs;
    match (observation, instruction) {
        (None, None) => Err(invalid("fuse requires at least one embedding")),
        (Some(o), None) => {
            let x = prepared(o, EmbeddingKind::Observation, encoders.observation_dim(), norm)?;
            encoders.observation.encode(&x)
        }
        (None, Some(t)) => {
            let x = prepared(t, EmbeddingKind::Instruction, encoders.instruction_dim(), norm)?;
            encoders.instruction.encode(&x)
        }
        (Some(o), Some(t)) => {
            let xo = prepared(o, EmbeddingKind::Observation, encoders.observation_dim(), norm)?;
            let xt = prepared(t, EmbeddingKind::Instruction, encoders.instruction_dim(), norm)?;
            match cfg.strategy {
                FusionStrategy::ConcatProject => {
                    let joint = encoders.joint.as_ref().ok_or_else(|| {
                        invalid("concat-project fusion needs a joint encoder")
                    })?;
                    let mut z = xo;
                    z.extend_from_slice(&xt);
                    joint.encode(&z)
                }
                FusionStrategy::Hyperbind => bind(
                    &encoders.observation.encode(&xo)?,
                    &encoders.instruction.encode(&xt)?,
                ),
            }
        }
    }
}

/// Encode every instance under `modality`, preserving order.
pub fn batch_encode(
    instances: &[Instance],
    modality: Modality,
    cfg: &FusionConfig,
    encoders: &EncoderSet,
    store: &EmbeddingStore,
) -> Result<Vec<(String, Hypervector)>> {
    instances
        .iter()
        .map(|inst| {
            let obs = modality
                .uses_observation()
                .then(|| store.require(&inst.observation_embedding_id))
                .transpose()?;
            let ins = modality
                .uses_instruction()
                .then(|| store.require(&inst.instruction_embedding_id))
                .transpose()?;
            Ok((inst.id.clone(), fuse(obs, ins, cfg, encoders)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(strategy: FusionStrategy) -> FusionConfig {
        FusionConfig {
            strategy,
            hyper_dim: 256,
            ..FusionConfig::default()
        }
    }

    fn emb(id: &str, kind: EmbeddingKind, values: Vec<f64>) -> Embedding {
        Embedding::new(id, kind, values)
    }

    #[test]
    fn single_modality_passes_through() {
        let cfg = small_cfg(FusionStrategy::ConcatProject);
        let enc = EncoderSet::new(&cfg, 4, 3).unwrap();
        let o = emb("o", EmbeddingKind::Observation, vec![3.0, -1.0, 0.5, 2.0]);
        let fused = fuse(Some(&o), None, &cfg, &enc).unwrap();
        let norm = (9.0f64 + 1.0 + 0.25 + 4.0).sqrt();
        let direct = enc
            .observation
            .encode(&o.values.iter().map(|v| v / norm).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(fused, direct);
    }

    #[test]
    fn fuse_requires_input_and_matching_dims() {
        let cfg = small_cfg(FusionStrategy::Hyperbind);
        let enc = EncoderSet::new(&cfg, 4, 3).unwrap();
        assert!(fuse(None, None, &cfg, &enc).is_err());
        let wrong = emb("t", EmbeddingKind::Instruction, vec![1.0; 5]);
        assert!(fuse(None, Some(&wrong), &cfg, &enc).is_err());
        let swapped = emb("t", EmbeddingKind::Observation, vec![1.0; 3]);
        assert!(fuse(None, Some(&swapped), &cfg, &enc).is_err());
    }

    #[test]
    fn store_rejects_duplicates_and_dim_drift() {
        let text = concat!(
            r#"{"id":"a","kind":"observation","dim":2,"values":[1.0,0.0]}"#,
            "\n",
            r#"{"id":"a","kind":"observation","dim":2,"values":[0.0,1.0]}"#,
            "\n"
        );
        let err = EmbeddingStore::parse_str(text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let drift = concat!(
            r#"{"id":"a","kind":"observation","dim":2,"values":[1.0,0.0]}"#,
            "\n",
            r#"{"id":"b","kind":"observation","dim":3,"values":[0.0,1.0,1.0]}"#,
        );
        assert!(EmbeddingStore::parse_str(drift).is_err());

        let bad_len = r#"{"id":"a","kind":"instruction","dim":3,"values":[1.0]}"#;
        assert!(EmbeddingStore::parse_str(bad_len).is_err());
    }

    #[test]
    fn store_round_trip() {
        let mut store = EmbeddingStore::new();
        store
            .insert(emb("x", EmbeddingKind::Observation, vec![0.1, -0.2, 1e-17]))
            .unwrap();
        store
            .insert(emb("y", EmbeddingKind::Instruction, vec![0.3]))
            .unwrap();
        let mut buf = Vec::new();
        store.write_jsonl(&mut buf).unwrap();
        let back = EmbeddingStore::parse_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, store);
    }
}
