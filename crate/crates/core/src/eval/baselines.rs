use std::collections::HashMap;

use crate::dataset::Instance;
use crate::error::{invalid, Result};
use crate::fusion::{EmbeddingStore, Modality};
use crate::params::{ParameterConfig, NUM_PARAMS, VALUES_PER_PARAM};

/// Lowercase, turn punctuation into spaces, collapse whitespace.
pub fn normalize_instruction(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '/' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn mode(counts: &[[usize; VALUES_PER_PARAM]; NUM_PARAMS]) -> ParameterConfig {
    let mut out = [0u8; NUM_PARAMS];
    for (k, c) in counts.iter().enumerate() {
        let mut best = 0;
        for v in 1..VALUES_PER_PARAM {
            if c[v] > c[best] {
                best = v;
            }
        }
        out[k] = best as u8;
    }
    ParameterConfig(out)
}

/// Per-instruction modal labels with a global-mode fallback.
#[derive(Debug, Clone)]
pub struct RuleLookup {
    table: HashMap<String, ParameterConfig>,
    global: ParameterConfig,
}

impl RuleLookup {
    pub fn fit(train: &[&Instance]) -> Self {
        let mut per_text: HashMap<String, [[usize; VALUES_PER_PARAM]; NUM_PARAMS]> = HashMap::new();
        let mut global = [[0usize; VALUES_PER_PARAM]; NUM_PARAMS];
        for inst in train {
            let counts = per_text
                .entry(normalize_instruction(&inst.instruction_text))
                .or_insert([[0; VALUES_PER_PARAM]; NUM_PARAMS]);
            for (k, &v) in inst.labels.0.iter().enumerate() {
                counts[k][v as usize] += 1;
                global[k][v as usize] += 1;
            }
        }
        Self {
            table: per_text.iter().map(|(t, c)| (t.clone(), mode(c))).collect(),
            global: mode(&global),
        }
    }

    pub fn predict(&self, text: &str) -> ParameterConfig {
        self.table
            .get(&normalize_instruction(text))
            .copied()
            .unwrap_or(self.global)
    }

    pub fn global_mode(&self) -> ParameterConfig {
        self.global
    }
}

fn unit(values: &[f64]) -> Vec<f64> {
    let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return values.to_vec();
    }
    values.iter().map(|v| v / n).collect()
}

/// KNN feature vector: the selected embeddings, each unit-normalised, then
/// concatenated.
pub fn knn_features(inst: &Instance, store: &EmbeddingStore, modality: Modality) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    if modality.uses_observation() {
        out.extend(unit(&store.require(&inst.observation_embedding_id)?.values));
    }
    if modality.uses_instruction() {
        out.extend(unit(&store.require(&inst.instruction_embedding_id)?.values));
    }
    Ok(unit(&out))
}

/// Cosine k-nearest-neighbour vote in embedding space.
#[derive(Debug, Clone)]
pub struct Knn {
    k: usize,
    rows: Vec<Vec<f64>>,
    labels: Vec<ParameterConfig>,
}

impl Knn {
    /// `rows` must already be unit-normalised (see [`knn_features`]).
    pub fn fit(rows: Vec<Vec<f64>>, labels: Vec<ParameterConfig>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if k > rows.len() {
            return Err(invalid(format!("k = {k} exceeds the {} training rows", rows.len())));
        }
        if rows.len() != labels.len() {
            return Err(invalid("rows and labels differ in length"));
        }
        Ok(Self { k, rows, labels })
    }

    /// Per-parameter majority vote; ties go to the tied class whose member
    /// is nearest.
    pub fn predict(&self, query: &[f64]) -> ParameterConfig {
        let mut sims: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| a * b).sum(), i))
            .collect();
        let by_similarity = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        sims.select_nth_unstable_by(self.k - 1, by_similarity);
        let nearest = &mut sims[..self.k];
        nearest.sort_unstable_by(by_similarity);

        let mut out = [0u8; NUM_PARAMS];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut counts = [0usize; VALUES_PER_PARAM];
            for &(_, i) in nearest.iter() {
                counts[self.labels[i].0[k] as usize] += 1;
            }
            let top = *counts.iter().max().expect("non-empty");
            *slot = nearest
                .iter()
                .map(|&(_, i)| self.labels[i].0[k])
                .find(|&v| counts[v as usize] == top)
                .expect("some neighbour has the top count");
        }
        ParameterConfig(out)
    }
}
