//! Synthetic Instruct-Obs2Param-style data with a 3x3x3 appearance factorial.
//!
//! Every object gets latent reflectivity and base brightness. Every
//! (object, key) draws an inspection slot and one instruction; the key is then
//! observed under all 27 (position, rotation, lighting) conditions. Lighting
//! dims the effective brightness, so exposure labels move with it.
//!
//! Observation embedding: normalise(2 object + position + rotation + 1.5 lighting
//! + reflectivity * material + noise). Instruction embedding:
//! normalise(task + coverage + target + detail + noise / 2). All component
//! vectors are fixed unit Gaussians from the seed; `noise_sigma` is the
//! expected L2 norm of the noise term.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    label_oracle, realize_instruction, AppearanceCondition, Dataset, Instance, Latent,
    SlotTuple, Task, OBJECTS, TARGETS,
};
use crate::error::{invalid, Result};
use crate::fusion::{Embedding, EmbeddingKind, EmbeddingStore, DEFAULT_EMBEDDING_DIM};
use crate::rng::{gaussian, substream};

// Illumination changes appearance more than a small pose step does.
const LIGHTING_WEIGHT: f64 = 1.5;
const OBJECT_WEIGHT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub objects: usize,
    pub keys_per_object: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub observation_dim: usize,
    pub instruction_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects: 16,
            keys_per_object: 4,
            noise_sigma: 0.1,
            seed: 1,
            observation_dim: DEFAULT_EMBEDDING_DIM,
            instruction_dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.objects > OBJECTS.len() {
            return Err(invalid(format!(
                "objects must be in 1..={} (got {})",
                OBJECTS.len(),
                self.objects
            )));
        }
        if self.keys_per_object == 0 || self.keys_per_object > 99 {
            return Err(invalid("keys_per_object must be in 1..=99"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma must be finite and non-negative"));
        }
        if self.observation_dim == 0 || self.instruction_dim == 0 {
            return Err(invalid("embedding dimensions must be positive"));
        }
        Ok(())
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn add_noise(v: &mut [f64], rng: &mut ChaCha8Rng, norm: f64) {
    if norm == 0.0 {
        return;
    }
    let scale = norm / (v.len() as f64).sqrt();
    for x in v.iter_mut() {
        *x += scale * gaussian(rng);
    }
}

fn axpy(acc: &mut [f64], w: f64, v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += w * b;
    }
}

/// Fixed component vectors for both modalities.
#[derive(Debug, Clone)]
struct Prototypes {
    object: Vec<Vec<f64>>,
    position: Vec<Vec<f64>>,
    rotation: Vec<Vec<f64>>,
    lighting: Vec<Vec<f64>>,
    material: Vec<f64>,
    task: Vec<Vec<f64>>,
    coverage: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
    detail: Vec<Vec<f64>>,
}

impl Prototypes {
    fn new(seed: u64, d_o: usize, d_t: usize) -> Self {
        let mut obs = substream(seed, "prototypes/observation");
        let mut ins = substream(seed, "prototypes/instruction");
        let many = |rng: &mut ChaCha8Rng, n: usize, d: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| unit_gaussian(rng, d)).collect()
        };
        let object = many(&mut obs, OBJECTS.len(), d_o);
        let position = many(&mut obs, 3, d_o);
        let rotation = many(&mut obs, 3, d_o);
        let lighting = many(&mut obs, 3, d_o);
        let material = unit_gaussian(&mut obs, d_o);
        let task = many(&mut ins, Task::ALL.len(), d_t);
        let coverage = many(&mut ins, 2, d_t);
        let target = many(&mut ins, TARGETS.len(), d_t);
        let detail = many(&mut ins, 3, d_t);
        Self {
            object,
            position,
            rotation,
            lighting,
            material,
            task,
            coverage,
            target,
            detail,
        }
    }

    fn instruction_mean(&self, slot: &SlotTuple) -> Vec<f64> {
        let target = super::target_index(&slot.target).expect("validated slot");
        let mut v = self.task[slot.task.index()].clone();
        axpy(&mut v, 1.0, &self.coverage[slot.coverage.index()]);
        axpy(&mut v, 1.0, &self.target[target]);
        axpy(&mut v, 1.0, &self.detail[slot.detail.index()]);
        v
    }
}

/// Noise-free instruction embeddings for arbitrary slots, matching the
/// generator's component vectors for the same seed and dimension.
#[derive(Debug, Clone)]
pub struct SlotEmbedder {
    prototypes: Prototypes,
}

impl SlotEmbedder {
    pub fn new(seed: u64, observation_dim: usize, instruction_dim: usize) -> Self {
        Self {
            prototypes: Prototypes::new(seed, observation_dim, instruction_dim),
        }
    }

    pub fn embed(&self, id: &str, slot: &SlotTuple) -> Result<Embedding> {
        slot.validate()?;
        let mut v = self.prototypes.instruction_mean(slot);
        normalize(&mut v);
        Ok(Embedding::new(id, EmbeddingKind::Instruction, v))
    }
}

/// Generate `objects * keys_per_object * 27` instances and their embeddings.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, EmbeddingStore)> {
    cfg.validate()?;
    let protos = Prototypes::new(cfg.seed, cfg.observation_dim, cfg.instruction_dim);
    let mut instances = Vec::with_capacity(cfg.objects * cfg.keys_per_object * 27);
    let mut store = EmbeddingStore::new();

    for (o, (object_id, _)) in OBJECTS.iter().enumerate().take(cfg.objects) {
        let mut rng = substream(cfg.seed, &format!("object/{object_id}"));
        let reflectivity: f64 = rng.gen();
        let base_brightness: f64 = rng.gen();

        for key in 0..cfg.keys_per_object {
            let task = Task::ALL[rng.gen_range(0..Task::ALL.len())];
            let target = TARGETS[rng.gen_range(0..TARGETS.len())];
            let slot = SlotTuple::new(task, target)?;
            let template_seed: u64 = rng.gen();
            let text = realize_instruction(&slot, object_id, template_seed)?;

            let key_id = format!("{object_id}-k{key:02}");
            let instruction_id = format!("ins/{key_id}");
            let mut t = protos.instruction_mean(&slot);
            add_noise(&mut t, &mut rng, cfg.noise_sigma / 2.0);
            normalize(&mut t);
            store.insert(Embedding::new(&instruction_id, EmbeddingKind::Instruction, t))?;

            for cond in AppearanceCondition::all() {
                let id = format!(
                    "{key_id}-p{}r{}-{}",
                    cond.position, cond.rotation, cond.lighting
                );
                let brightness =
                    (base_brightness - cond.lighting.brightness_offset()).clamp(0.0, 1.0);
                let labels = label_oracle(&slot, reflectivity, brightness)?;

                let mut e: Vec<f64> = protos.object[o].iter().map(|x| x * OBJECT_WEIGHT).collect();
                axpy(&mut e, 1.0, &protos.position[cond.position as usize]);
                axpy(&mut e, 1.0, &protos.rotation[cond.rotation as usize]);
                axpy(&mut e, LIGHTING_WEIGHT, &protos.lighting[cond.lighting.index()]);
                axpy(&mut e, reflectivity, &protos.material);
                add_noise(&mut e, &mut rng, cfg.noise_sigma);
                normalize(&mut e);
                let observation_id = format!("obs/{id}");
                store.insert(Embedding::new(&observation_id, EmbeddingKind::Observation, e))?;

                instances.push(Instance {
                    id,
                    object_id: object_id.to_string(),
                    instruction_text: text.clone(),
                    slot: slot.clone(),
                    condition: cond,
                    observation_embedding_id: observation_id,
                    instruction_embedding_id: instruction_id.clone(),
                    labels,
                    latent: Some(Latent {
                        reflectivity,
                        brightness,
                    }),
                });
            }
        }
    }
    Ok((Dataset::from_instances(instances)?, store))
}
