//! Parameter-wise associative memories.
//!
//! Each parameter owns one real-valued prototype per vocabulary value. The
//! adaptive rule adds `eta * (1 - cos(h, C)) * h` to the true-class
//! prototype; refinement also subtracts the same novelty-scaled step from
//! the wrongly predicted prototype. Cosine against an all-zero prototype is
//! taken as 0 during training, so a first update has full weight.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, ModelFormatError, Result};
use crate::fusion::{fuse, EncoderDescriptors, EncoderSet, Embedding, FusionConfig, Modality};
use crate::hdc::{axpy_bipolar, dot_bipolar, norm_sq, Hypervector};
use crate::params::{Param, ParameterConfig, ParameterSpace, NUM_PARAMS, VALUES_PER_PARAM};
use crate::rng::{hex_digest, substream};

pub const FORMAT_VERSION: u64 = 1;

/// Training sample: an encoded hypervector and its full label set.
pub type Sample<'a> = (&'a Hypervector, ParameterConfig);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub eta: f64,
    pub refine_epochs: usize,
    pub shuffle_seed: u64,
    /// Epochs without improvement before refinement stops; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            refine_epochs: 20,
            shuffle_seed: 0,
            early_stop_patience: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(invalid(format!("eta must be positive (got {})", self.eta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMemory {
    pub param: Param,
    /// One accumulator per vocabulary value, in vocabulary order.
    pub prototypes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: u8,
    pub scores: [f64; VALUES_PER_PARAM],
}

impl ClassMemory {
    pub fn zeros(param: Param, dim: usize) -> Self {
        Self {
            param,
            prototypes: vec![vec![0.0; dim]; VALUES_PER_PARAM],
        }
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    /// Cosine scores for every value and the arg-max, ties resolved by
    /// vocabulary order.
    pub fn predict_one(&self, h: &Hypervector) -> Result<Prediction> {
        if h.dim() != self.dim() {
            return Err(invalid(format!(
                "query dim {} does not match memory dim {}",
                h.dim(),
                self.dim()
            )));
        }
        let h_sq = h.dim() as f64;
        let mut scores = [0.0; VALUES_PER_PARAM];
        for (v, proto) in self.prototypes.iter().enumerate() {
            let n = norm_sq(proto);
            if n == 0.0 {
                return Err(Error::UntrainedMemory {
                    parameter: self.param.name().to_string(),
                    value: self.param.vocabulary()[v].to_string(),
                });
            }
            scores[v] = (dot_bipolar(h.values(), proto) / (h_sq * n).sqrt()).clamp(-1.0, 1.0);
        }
        Ok(Prediction {
            value: argmax(&scores),
            scores,
        })
    }
}

fn argmax(scores: &[f64; VALUES_PER_PARAM]) -> u8 {
    let mut best = 0;
    for v in 1..VALUES_PER_PARAM {
        if scores[v] > scores[best] {
            best = v;
        }
    }
    best as u8
}

/// Cached squared norms so training scores never rescan unchanged
/// prototypes. Norms are always recomputed from the accumulator, so cached
/// and fresh values are bit-identical.
struct NormCache {
    sq: [[f64; VALUES_PER_PARAM]; NUM_PARAMS],
}

impl NormCache {
    fn new(memories: &[ClassMemory]) -> Self {
        let mut sq = [[0.0; VALUES_PER_PARAM]; NUM_PARAMS];
        for (k, mem) in memories.iter().enumerate() {
            for (v, p) in mem.prototypes.iter().enumerate() {
                sq[k][v] = norm_sq(p);
            }
        }
        Self { sq }
    }
}

#[inline]
fn training_cosine(h: &Hypervector, proto: &[f64], proto_norm_sq: f64) -> f64 {
    if proto_norm_sq == 0.0 {
        return 0.0;
    }
    let denom = (h.dim() as f64 * proto_norm_sq).sqrt();
    (dot_bipolar(h.values(), proto) / denom).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub eta: f64,
    pub shuffle_seed: u64,
    pub sample_count: usize,
    pub refine_epochs_run: usize,
    pub error_trajectory: Vec<usize>,
    /// SHA-256 over the training hypervectors and labels, in input order.
    pub data_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub config: ParameterConfig,
    pub scores: [[f64; VALUES_PER_PARAM]; NUM_PARAMS],
}

impl Recommendation {
    pub fn confidences(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for p in Param::ALL {
            let mut m = serde_json::Map::new();
            for (v, name) in p.vocabulary().iter().enumerate() {
                m.insert(name.to_string(), serde_json::json!(self.scores[p.index()][v]));
            }
            out.insert(p.name().to_string(), serde_json::Value::Object(m));
        }
        serde_json::Value::Object(out)
    }
}

#[derive(Debug, Clone)]
pub struct ScanModel {
    pub fusion: FusionConfig,
    pub modality: Modality,
    pub encoders: EncoderSet,
    pub memories: Vec<ClassMemory>,
    pub space: ParameterSpace,
    pub meta: TrainingMeta,
}

impl PartialEq for ScanModel {
    fn eq(&self, other: &Self) -> bool {
        self.fusion == other.fusion
            && self.modality == other.modality
            && self.encoders.descriptors() == other.encoders.descriptors()
            && self.memories == other.memories
            && self.space == other.space
            && self.meta == other.meta
    }
}

impl ScanModel {
    /// Untrained model with all-zero prototypes.
    pub fn new(
        fusion: FusionConfig,
        modality: Modality,
        observation_dim: usize,
        instruction_dim: usize,
    ) -> Result<Self> {
        let encoders = EncoderSet::new(&fusion, observation_dim, instruction_dim)?;
        Ok(Self::with_encoders(fusion, modality, encoders))
    }

    pub fn with_encoders(fusion: FusionConfig, modality: Modality, encoders: EncoderSet) -> Self {
        let memories = Param::ALL
            .iter()
            .map(|&p| ClassMemory::zeros(p, fusion.hyper_dim))
            .collect();
        Self {
            fusion,
            modality,
            encoders,
            memories,
            space: ParameterSpace::standard(),
            meta: TrainingMeta {
                eta: 0.0,
                shuffle_seed: 0,
                sample_count: 0,
                refine_epochs_run: 0,
                error_trajectory: Vec::new(),
                data_fingerprint: String::new(),
            },
        }
    }

    pub fn hyper_dim(&self) -> usize {
        self.fusion.hyper_dim
    }

    /// Reset every prototype to zero, keeping encoders.
    pub fn cleared(&self) -> Self {
        Self::with_encoders(self.fusion, self.modality, self.encoders.clone())
    }

    fn check_samples(&self, samples: &[Sample<'_>]) -> Result<()> {
        for (h, labels) in samples {
            if h.dim() != self.hyper_dim() {
                return Err(invalid(format!(
                    "sample dim {} does not match model dim {}",
                    h.dim(),
                    self.hyper_dim()
                )));
            }
            labels.validate()?;
        }
        Ok(())
    }

    /// One adaptive pass over `samples` in shuffled order.
    pub fn train_single_pass(&mut self, samples: &[Sample<'_>], cfg: &TrainingConfig) -> Result<()> {
        cfg.validate()?;
        self.check_samples(samples)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut substream(cfg.shuffle_seed, "train/single_pass"));
        let mut norms = NormCache::new(&self.memories);
        for &i in &order {
            let (h, labels) = samples[i];
            for (k, mem) in self.memories.iter_mut().enumerate() {
                let v = labels.0[k] as usize;
                let proto = &mut mem.prototypes[v];
                let delta = training_cosine(h, proto, norms.sq[k][v]);
                axpy_bipolar(proto, cfg.eta * (1.0 - delta), h.values());
                norms.sq[k][v] = norm_sq(proto);
            }
        }
        self.meta = TrainingMeta {
            eta: cfg.eta,
            shuffle_seed: cfg.shuffle_seed,
            sample_count: samples.len(),
            refine_epochs_run: 0,
            error_trajectory: Vec::new(),
            data_fingerprint: sample_fingerprint(samples),
        };
        Ok(())
    }

    /// Error-driven refinement. Returns the number of misclassified
    /// (sample, parameter) pairs in each epoch run.
    pub fn refine(&mut self, samples: &[Sample<'_>], cfg: &TrainingConfig) -> Result<Vec<usize>> {
        cfg.validate()?;
        self.check_samples(samples)?;
        let eta = cfg.eta;
        self.refine_loop(samples, cfg, |proto, h, delta, sign| {
            axpy_bipolar(proto, sign * eta * (1.0 - delta), h.values());
        })
    }

    fn refine_loop<F>(&mut self, samples: &[Sample<'_>], cfg: &TrainingConfig, mut update: F) -> Result<Vec<usize>>
    where
        F: FnMut(&mut Vec<f64>, &Hypervector, f64, f64),
    {
        let mut norms = NormCache::new(&self.memories);
        let mut trajectory = Vec::new();
        let mut best = usize::MAX;
        let mut stale = 0;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for epoch in 0..cfg.refine_epochs {
            order.sort_unstable();
            order.shuffle(&mut substream(
                cfg.shuffle_seed.wrapping_add(epoch as u64),
                "train/refine",
            ));
            let mut errors = 0;
            for &i in &order {
                let (h, labels) = samples[i];
                for (k, mem) in self.memories.iter_mut().enumerate() {
                    let mut scores = [0.0; VALUES_PER_PARAM];
                    for (v, proto) in mem.prototypes.iter().enumerate() {
                        scores[v] = training_cosine(h, proto, norms.sq[k][v]);
                    }
                    let truth = labels.0[k] as usize;
                    let pred = argmax(&scores) as usize;
                    if pred == truth {
                        continue;
                    }
                    errors += 1;
                    update(&mut mem.prototypes[truth], h, scores[truth], 1.0);
                    update(&mut mem.prototypes[pred], h, scores[pred], -1.0);
                    norms.sq[k][truth] = norm_sq(&mem.prototypes[truth]);
                    norms.sq[k][pred] = norm_sq(&mem.prototypes[pred]);
                }
            }
            trajectory.push(errors);
            if errors == 0 {
                break;
            }
            if errors < best {
                best = errors;
                stale = 0;
            } else {
                stale += 1;
                if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                    break;
                }
            }
        }
        self.meta.refine_epochs_run = trajectory.len();
        self.meta.error_trajectory = trajectory.clone();
        Ok(trajectory)
    }

    /// Plain bundling per class followed by unmodulated retraining
    /// (`C_y += h`, `C_pred -= h`) for up to `cfg.refine_epochs` epochs.
    pub fn train_naive(&mut self, samples: &[Sample<'_>], cfg: &TrainingConfig) -> Result<Vec<usize>> {
        self.check_samples(samples)?;
        for (h, labels) in samples {
            for (k, mem) in self.memories.iter_mut().enumerate() {
                axpy_bipolar(&mut mem.prototypes[labels.0[k] as usize], 1.0, h.values());
            }
        }
        self.meta = TrainingMeta {
            eta: 1.0,
            shuffle_seed: cfg.shuffle_seed,
            sample_count: samples.len(),
            refine_epochs_run: 0,
            error_trajectory: Vec::new(),
            data_fingerprint: sample_fingerprint(samples),
        };
        self.refine_loop(samples, cfg, |proto, h, _delta, sign| {
            axpy_bipolar(proto, sign, h.values());
        })
    }

    /// Single pass followed by refinement.
    pub fn fit(&mut self, samples: &[Sample<'_>], cfg: &TrainingConfig) -> Result<Vec<usize>> {
        self.train_single_pass(samples, cfg)?;
        self.refine(samples, cfg)
    }

    pub fn predict_hv(&self, h: &Hypervector) -> Result<Recommendation> {
        let mut config = [0u8; NUM_PARAMS];
        let mut scores = [[0.0; VALUES_PER_PARAM]; NUM_PARAMS];
        for (k, mem) in self.memories.iter().enumerate() {
            let p = mem.predict_one(h)?;
            config[k] = p.value;
            scores[k] = p.scores;
        }
        Ok(Recommendation {
            config: ParameterConfig(config),
            scores,
        })
    }

    pub fn encode(&self, observation: Option<&Embedding>, instruction: Option<&Embedding>) -> Result<Hypervector> {
        let needs_obs = self.modality.uses_observation();
        let needs_ins = self.modality.uses_instruction();
        if needs_obs != observation.is_some() || needs_ins != instruction.is_some() {
            return Err(invalid(format!(
                "model modality '{}' expects observation={needs_obs}, instruction={needs_ins}",
                self.modality.name()
            )));
        }
        fuse(observation, instruction, &self.fusion, &self.encoders)
    }

    /// Full five-parameter recommendation for one query.
    pub fn recommend(&self, observation: Option<&Embedding>, instruction: Option<&Embedding>) -> Result<Recommendation> {
        let h = self.encode(observation, instruction)?;
        self.predict_hv(&h)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            fusion: self.fusion,
            modality: self.modality,
            encoders: self.encoders.descriptors(),
            parameter_space: self.space.clone(),
            memories: self
                .memories
                .iter()
                .map(|m| MemoryRecord {
                    parameter: m.param.name().to_string(),
                    prototypes: m
                        .prototypes
                        .iter()
                        .enumerate()
                        .map(|(v, acc)| PrototypeRecord {
                            value: m.param.vocabulary()[v].to_string(),
                            accumulator: acc.clone(),
                        })
                        .collect(),
                })
                .collect(),
            training_meta: self.meta.clone(),
        };
        let mut text = serde_json::to_string(&file).expect("model serialisation cannot fail");
        text.push('\n');
        text
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| ModelFormatError::Malformed(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelFormatError::Malformed("missing format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(ModelFormatError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let file: ModelFile = serde_json::from_value(value)
            .map_err(|e| ModelFormatError::Malformed(e.to_string()))?;
        file.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json_str(&text)
    }
}

fn sample_fingerprint(samples: &[Sample<'_>]) -> String {
    let mut bytes = Vec::new();
    for (h, labels) in samples {
        bytes.extend_from_slice(&h.to_bits());
        bytes.extend_from_slice(&labels.0);
    }
    hex_digest(&bytes)
}

const MAX_HYPER_DIM: usize = 1 << 20;
const MAX_INPUT_DIM: usize = 1 << 16;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u64,
    fusion: FusionConfig,
    modality: Modality,
    encoders: EncoderDescriptors,
    parameter_space: ParameterSpace,
    memories: Vec<MemoryRecord>,
    training_meta: TrainingMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemoryRecord {
    parameter: String,
    prototypes: Vec<PrototypeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrototypeRecord {
    value: String,
    accumulator: Vec<f64>,
}

impl ModelFile {
    fn into_model(self) -> Result<ScanModel> {
        let malformed = |m: String| Error::from(ModelFormatError::Malformed(m));
        if !self.parameter_space.is_standard() {
            return Err(malformed("parameter_space is not the standard five-parameter space".into()));
        }
        let dim = self.fusion.hyper_dim;
        if dim == 0 || dim > MAX_HYPER_DIM {
            return Err(malformed(format!("hyper_dim {dim} out of range")));
        }
        if self.memories.len() != NUM_PARAMS {
            return Err(malformed(format!(
                "expected {NUM_PARAMS} memories, found {}",
                self.memories.len()
            )));
        }
        let mut memories = Vec::with_capacity(NUM_PARAMS);
        for (record, param) in self.memories.into_iter().zip(Param::ALL) {
            if record.parameter != param.name() {
                return Err(malformed(format!(
                    "memory '{}' found where '{}' was expected",
                    record.parameter,
                    param.name()
                )));
            }
            if record.prototypes.len() != VALUES_PER_PARAM {
                return Err(malformed(format!(
                    "parameter '{}' has {} prototypes",
                    param.name(),
                    record.prototypes.len()
                )));
            }
            let mut prototypes = Vec::with_capacity(VALUES_PER_PARAM);
            for (proto, value) in record.prototypes.into_iter().zip(param.vocabulary()) {
                if proto.value != value {
                    return Err(malformed(format!(
                        "parameter '{}' prototype '{}' found where '{value}' was expected",
                        param.name(),
                        proto.value
                    )));
                }
                if proto.accumulator.len() != dim {
                    return Err(ModelFormatError::AccumulatorLength {
                        parameter: param.name().to_string(),
                        value: value.to_string(),
                        found: proto.accumulator.len(),
                        expected: dim,
                    }
                    .into());
                }
                prototypes.push(proto.accumulator);
            }
            memories.push(ClassMemory { param, prototypes });
        }
        let enc = &self.encoders;
        let specs = [Some(enc.observation), Some(enc.instruction), enc.joint];
        for spec in specs.iter().flatten() {
            if spec.hyper_dim != dim || spec.input_dim == 0 || spec.input_dim > 2 * MAX_INPUT_DIM {
                return Err(malformed(format!("encoder descriptor {spec:?} inconsistent with hyper_dim {dim}")));
            }
        }
        let expected = EncoderSet::new(&self.fusion, enc.observation.input_dim, enc.instruction.input_dim);
        let encoders = match expected {
            Ok(set) if set.descriptors() == *enc => set,
            _ => return Err(malformed("encoder descriptors do not match the fusion config".into())),
        };
        Ok(ScanModel {
            fusion: self.fusion,
            modality: self.modality,
            encoders,
            memories,
            space: self.parameter_space,
            meta: self.training_meta,
        })
    }
}
