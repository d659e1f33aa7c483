//! Data-evolution flywheel: generate, check, partition, refine, distil.
//!
//! Agents are pluggable. The shipped ones are a template generator, a rule
//! checker sharing the label oracle, and a field-repair refiner; external
//! agents can be attached through [`SubprocessAgent`].

mod agent;

pub use agent::{parse_agent_response, AgentResponse, SubprocessAgent};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    label_oracle, mentions_parameter_value, parse_instruction, parse_instruction_loose,
    realize_instruction, AppearanceCondition, Dataset, Instance, Latent, SlotTuple, Task,
};
use crate::error::{Error, Result};
use crate::params::{Param, ParameterConfig, NUM_PARAMS, VALUES_PER_PARAM};
use crate::rng::{fnv1a, mix64};

pub const DEFAULT_MAX_ROUNDS: usize = 3;
pub const GROUP_SIZE: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    IntentMismatch,
    AppearanceIncompatible,
    CrossViewUnstable,
    PhysicallyInvalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub codes: BTreeSet<Violation>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Unchecked,
    Passed,
    Failed,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub instance: Instance,
    pub status: Status,
    pub feedback: Option<Feedback>,
    pub generation: u32,
    pub parent_id: Option<String>,
}

impl Candidate {
    pub fn new(instance: Instance) -> Self {
        Self {
            instance,
            status: Status::Unchecked,
            feedback: None,
            generation: 0,
            parent_id: None,
        }
    }
}

/// Everything needed to generate one instance except its instruction text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSpec {
    pub id: String,
    pub object_id: String,
    pub slot: SlotTuple,
    pub condition: AppearanceCondition,
    pub observation_embedding_id: String,
    pub instruction_embedding_id: String,
    pub labels: ParameterConfig,
    pub latent: Option<Latent>,
    pub template_seed: u64,
}

impl RawSpec {
    /// Strip the text from an existing instance. Siblings sharing an
    /// instruction embedding share a template seed.
    pub fn from_instance(inst: &Instance) -> Self {
        Self {
            id: inst.id.clone(),
            object_id: inst.object_id.clone(),
            slot: inst.slot.clone(),
            condition: inst.condition,
            observation_embedding_id: inst.observation_embedding_id.clone(),
            instruction_embedding_id: inst.instruction_embedding_id.clone(),
            labels: inst.labels,
            latent: inst.latent,
            template_seed: fnv1a(inst.instruction_embedding_id.as_bytes()),
        }
    }

    fn into_instance(self, instruction_text: String) -> Instance {
        Instance {
            id: self.id,
            object_id: self.object_id,
            instruction_text,
            slot: self.slot,
            condition: self.condition,
            observation_embedding_id: self.observation_embedding_id,
            instruction_embedding_id: self.instruction_embedding_id,
            labels: self.labels,
            latent: self.latent,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub feedback: Option<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Revision {
    pub instruction: String,
    pub labels: ParameterConfig,
    /// Slot the agent believes it preserved; must equal the input slot.
    pub slot: Option<SlotTuple>,
}

pub trait Generator: Send + Sync {
    fn generate(&self, spec: &RawSpec) -> Result<String>;
}

/// `group` holds the current version of every instance sharing the
/// candidate's instruction embedding, the candidate included.
pub trait Checker: Send + Sync {
    fn check(&self, candidate: &Candidate, group: &[&Instance]) -> Result<Verdict>;
}

pub trait Refiner: Send + Sync {
    fn refine(&self, candidate: &Candidate, feedback: &Feedback, group: &[&Instance]) -> Result<Revision>;
}

pub struct AgentSet {
    pub generator: Box<dyn Generator>,
    pub checker: Box<dyn Checker>,
    pub refiner: Box<dyn Refiner>,
}

impl AgentSet {
    pub fn default_rules() -> Self {
        Self {
            generator: Box::new(TemplateGenerator),
            checker: Box::new(RuleChecker::default()),
            refiner: Box::new(FieldRepairRefiner),
        }
    }
}

pub struct TemplateGenerator;

impl Generator for TemplateGenerator {
    fn generate(&self, spec: &RawSpec) -> Result<String> {
        realize_instruction(&spec.slot, &spec.object_id, spec.template_seed)
    }
}

/// Wraps a generator and replaces the text of roughly `rate` of instances
/// with an instruction for a different task. The choice depends only on
/// `(seed, id)`.
pub struct CorruptingGenerator<G> {
    pub inner: G,
    pub rate: f64,
    pub seed: u64,
}

impl<G: Generator> CorruptingGenerator<G> {
    pub fn is_corrupted(&self, id: &str) -> bool {
        let h = mix64(self.seed ^ fnv1a(id.as_bytes()));
        (h >> 11) as f64 / (1u64 << 53) as f64 <= self.rate && self.rate > 0.0
    }
}

impl<G: Generator> Generator for CorruptingGenerator<G> {
    fn generate(&self, spec: &RawSpec) -> Result<String> {
        if !self.is_corrupted(&spec.id) {
            return self.inner.generate(spec);
        }
        let h = mix64(self.seed.wrapping_add(fnv1a(spec.id.as_bytes())));
        let shift = 1 + (h % (Task::ALL.len() as u64 - 1)) as usize;
        let task = Task::ALL[(spec.slot.task.index() + shift) % Task::ALL.len()];
        let wrong = SlotTuple::new(task, &spec.slot.target)?;
        realize_instruction(&wrong, &spec.object_id, h >> 8)
    }
}

/// Rule-based consistency checker.
///
/// * intent: the text maps back to the slot and object, and intent-driven
///   labels match the oracle for the slot;
/// * appearance: observation-driven labels match the oracle for the latents;
/// * cross-view: the group is a full factorial and the candidate agrees with
///   the group majority on text, slot and all non-exposure labels, and with
///   its same-lighting siblings on exposure;
/// * physical validity: every label lies in its vocabulary.
///
/// Strict mode (the expert calibration pass) also requires an exact
/// template match, latents, and no parameter values in the text.
#[derive(Debug, Clone, Copy)]
pub struct RuleChecker {
    pub strict: bool,
    pub group_size: usize,
}

impl Default for RuleChecker {
    fn default() -> Self {
        Self {
            strict: false,
            group_size: GROUP_SIZE,
        }
    }
}

fn majority<K: Ord + Clone>(keys: impl Iterator<Item = K>) -> Option<K> {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    for k in keys {
        *counts.entry(k).or_default() += 1;
    }
    let top = *counts.values().max()?;
    counts.into_iter().find(|(_, c)| *c == top).map(|(k, _)| k)
}

fn view_key(inst: &Instance) -> (String, SlotTuple, [u8; NUM_PARAMS]) {
    let mut labels = inst.labels.0;
    labels[Param::ExposureTime.index()] = 0;
    (inst.instruction_text.clone(), inst.slot.clone(), labels)
}

impl RuleChecker {
    pub fn strict() -> Self {
        Self {
            strict: true,
            ..Self::default()
        }
    }

    /// Violations of one instance against its group.
    pub fn violations(&self, inst: &Instance, group: &[&Instance]) -> Feedback {
        let mut codes = BTreeSet::new();
        let mut notes = Vec::new();

        let invalid: Vec<Param> = Param::ALL
            .iter()
            .copied()
            .filter(|&p| inst.labels.get(p) as usize >= VALUES_PER_PARAM)
            .collect();
        if !invalid.is_empty() {
            codes.insert(Violation::PhysicallyInvalid);
            let names: Vec<_> = invalid.iter().map(|p| p.name()).collect();
            notes.push(format!("labels outside vocabulary: {}", names.join(", ")));
        }

        let parsed = match parse_instruction(&inst.instruction_text) {
            Some(p) => Some((p.slot, Some(p.object_id))),
            None if self.strict => None,
            None => Some(parse_instruction_loose(&inst.instruction_text)),
        };
        match parsed {
            None => {
                codes.insert(Violation::IntentMismatch);
                notes.push("instruction matches no template".into());
            }
            Some((slot, object)) => {
                if slot != inst.slot {
                    codes.insert(Violation::IntentMismatch);
                    notes.push(format!("instruction reads as {:?}/{}", slot.task, slot.target));
                }
                if object.is_some_and(|o| o != inst.object_id) {
                    codes.insert(Violation::IntentMismatch);
                    notes.push("instruction names a different object".into());
                }
            }
        }
        if self.strict && mentions_parameter_value(&inst.instruction_text) {
            codes.insert(Violation::IntentMismatch);
            notes.push("instruction exposes a parameter value".into());
        }

        match inst.slot.validate() {
            Err(e) => {
                codes.insert(Violation::IntentMismatch);
                notes.push(e.to_string());
            }
            Ok(()) => {
                let (refl, bright) = inst
                    .latent
                    .map(|l| (l.reflectivity, l.brightness))
                    .unwrap_or((0.5, 0.5));
                if let Ok(oracle) = label_oracle(&inst.slot, refl, bright) {
                    for p in Param::ALL {
                        let got = inst.labels.get(p);
                        if got as usize >= VALUES_PER_PARAM || got == oracle.get(p) {
                            continue;
                        }
                        if p.intent_driven() {
                            codes.insert(Violation::IntentMismatch);
                            notes.push(format!("{} disagrees with the task", p.name()));
                        } else if inst.latent.is_some() {
                            codes.insert(Violation::AppearanceIncompatible);
                            notes.push(format!("{} disagrees with the appearance", p.name()));
                        }
                    }
                }
                if self.strict && inst.latent.is_none() {
                    codes.insert(Violation::AppearanceIncompatible);
                    notes.push("no appearance record to verify against".into());
                }
            }
        }

        let conditions: BTreeSet<_> = group.iter().map(|g| g.condition).collect();
        if group.len() != self.group_size || conditions.len() != self.group_size {
            codes.insert(Violation::CrossViewUnstable);
            notes.push(format!(
                "group has {} members over {} conditions (expected {})",
                group.len(),
                conditions.len(),
                self.group_size
            ));
        } else {
            if majority(group.iter().map(|g| view_key(g))) != Some(view_key(inst)) {
                codes.insert(Violation::CrossViewUnstable);
                notes.push("disagrees with its sibling views".into());
            }
            let exposure = majority(
                group
                    .iter()
                    .filter(|g| g.condition.lighting == inst.condition.lighting)
                    .map(|g| g.labels.get(Param::ExposureTime)),
            );
            if exposure != Some(inst.labels.get(Param::ExposureTime)) {
                codes.insert(Violation::CrossViewUnstable);
                notes.push("exposure differs from same-lighting siblings".into());
            }
        }

        Feedback {
            codes,
            detail: notes.join("; "),
        }
    }
}

impl Checker for RuleChecker {
    fn check(&self, candidate: &Candidate, group: &[&Instance]) -> Result<Verdict> {
        let fb = self.violations(&candidate.instance, group);
        Ok(if fb.codes.is_empty() {
            Verdict {
                pass: true,
                feedback: None,
            }
        } else {
            Verdict {
                pass: false,
                feedback: Some(fb),
            }
        })
    }
}

/// Repairs exactly the fields named by the feedback: text from the sibling
/// majority (or a fresh realisation), labels from the oracle.
pub struct FieldRepairRefiner;

impl Refiner for FieldRepairRefiner {
    fn refine(&self, candidate: &Candidate, feedback: &Feedback, group: &[&Instance]) -> Result<Revision> {
        let inst = &candidate.instance;
        let text_bad = feedback.codes.contains(&Violation::IntentMismatch)
            || feedback.codes.contains(&Violation::CrossViewUnstable);
        let mut instruction = inst.instruction_text.clone();
        if text_bad {
            let reads_right = |t: &str| {
                parse_instruction(t).is_some_and(|p| p.slot == inst.slot && p.object_id == inst.object_id)
            };
            instruction = match majority(group.iter().map(|g| g.instruction_text.clone())) {
                Some(t) if reads_right(&t) => t,
                _ if reads_right(&inst.instruction_text) => inst.instruction_text.clone(),
                _ => realize_instruction(
                    &inst.slot,
                    &inst.object_id,
                    fnv1a(inst.instruction_embedding_id.as_bytes()),
                )?,
            };
        }

        let mut labels = inst.labels;
        let (refl, bright) = inst
            .latent
            .map(|l| (l.reflectivity, l.brightness))
            .unwrap_or((0.5, 0.5));
        let oracle = label_oracle(&inst.slot, refl, bright)?;
        for p in Param::ALL {
            let v = labels.get(p);
            if p.intent_driven() || inst.latent.is_some() {
                labels.set(p, oracle.get(p));
            } else if v as usize >= VALUES_PER_PARAM {
                let fallback = majority(
                    group
                        .iter()
                        .map(|g| g.labels.get(p))
                        .filter(|&x| (x as usize) < VALUES_PER_PARAM),
                );
                labels.set(p, fallback.unwrap_or(0));
            }
        }
        Ok(Revision {
            instruction,
            labels,
            slot: Some(inst.slot.clone()),
        })
    }
}

/// Split checked candidates into (canonical, failed).
pub fn partition(pool: Vec<Candidate>) -> Result<(Vec<Candidate>, Vec<Candidate>)> {
    if let Some(c) = pool
        .iter()
        .find(|c| !matches!(c.status, Status::Passed | Status::Failed))
    {
        return Err(Error::InvalidState(format!(
            "candidate '{}' has status {:?}; partition needs checked candidates",
            c.instance.id, c.status
        )));
    }
    Ok(pool.into_iter().partition(|c| c.status == Status::Passed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub stage: String,
    pub round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub codes: Vec<Violation>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl AuditEvent {
    fn summary(stage: &str, round: usize, counts: &[(&str, usize)]) -> Self {
        Self {
            stage: stage.to_string(),
            round,
            id: None,
            pass: None,
            codes: Vec::new(),
            counts: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            detail: String::new(),
        }
    }

    fn verdict(stage: &str, round: usize, c: &Candidate) -> Self {
        Self {
            stage: stage.to_string(),
            round,
            id: Some(c.instance.id.clone()),
            pass: Some(c.status == Status::Passed),
            codes: c
                .feedback
                .as_ref()
                .map(|f| f.codes.iter().copied().collect())
                .unwrap_or_default(),
            counts: BTreeMap::new(),
            detail: c.feedback.as_ref().map(|f| f.detail.clone()).unwrap_or_default(),
        }
    }
}

pub fn write_audit<W: Write>(events: &[AuditEvent], mut w: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::Io {
            path: "<audit>".into(),
            source: e,
        })?;
    }
    Ok(())
}

/// Current instance per id, grouped by instruction embedding.
struct Pool {
    current: BTreeMap<String, Instance>,
    groups: HashMap<String, Vec<String>>,
}

impl Pool {
    fn new<'a>(instances: impl Iterator<Item = &'a Instance>) -> Self {
        let mut pool = Self {
            current: BTreeMap::new(),
            groups: HashMap::new(),
        };
        for inst in instances {
            pool.upsert(inst.clone());
        }
        pool
    }

    fn upsert(&mut self, inst: Instance) {
        if !self.current.contains_key(&inst.id) {
            self.groups
                .entry(inst.instruction_embedding_id.clone())
                .or_default()
                .push(inst.id.clone());
        }
        self.current.insert(inst.id.clone(), inst);
    }

    fn group(&self, inst: &Instance) -> Vec<&Instance> {
        self.groups
            .get(&inst.instruction_embedding_id)
            .map(|ids| ids.iter().map(|id| &self.current[id]).collect())
            .unwrap_or_default()
    }
}

fn check_all(checker: &dyn Checker, pool: &Pool, candidates: &mut [Candidate]) -> Result<()> {
    for c in candidates.iter_mut() {
        let group = pool.group(&c.instance);
        let verdict = checker.check(c, &group)?;
        if !verdict.pass && verdict.feedback.as_ref().is_none_or(|f| f.codes.is_empty()) {
            return Err(Error::Agent(format!(
                "checker failed '{}' without violation codes",
                c.instance.id
            )));
        }
        c.status = if verdict.pass { Status::Passed } else { Status::Failed };
        c.feedback = verdict.feedback.filter(|_| !verdict.pass);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    /// `passes[k]` holds the candidates that passed in round `k + 1`.
    pub passes: Vec<Vec<Candidate>>,
    pub residual: Vec<Candidate>,
    pub audit: Vec<AuditEvent>,
}

/// Refine every failing candidate, re-check, split; repeat up to
/// `max_rounds` times or until nothing fails. `canon` supplies the sibling
/// context for cross-view checks.
pub fn refine_iterate(
    fail: Vec<Candidate>,
    canon: &[Candidate],
    agents: &AgentSet,
    max_rounds: usize,
) -> Result<RefineOutcome> {
    let mut pool = Pool::new(canon.iter().chain(&fail).map(|c| &c.instance));
    let mut fail = fail;
    fail.sort_by(|a, b| a.instance.id.cmp(&b.instance.id));
    let mut passes = Vec::new();
    let mut audit = Vec::new();

    for round in 1..=max_rounds {
        if fail.is_empty() {
            break;
        }
        let mut refined = Vec::with_capacity(fail.len());
        for c in &fail {
            let feedback = c.feedback.clone().ok_or_else(|| {
                Error::InvalidState(format!("failed candidate '{}' carries no feedback", c.instance.id))
            })?;
            let group = pool.group(&c.instance);
            let revision = agents.refiner.refine(c, &feedback, &group)?;
            if revision.slot.as_ref().is_some_and(|s| *s != c.instance.slot) {
                let mut event = AuditEvent::summary("contract_violation", round, &[]);
                event.id = Some(c.instance.id.clone());
                event.detail = "refiner changed the inspection slot".into();
                audit.push(event);
                return Err(Error::ContractViolation(format!(
                    "refiner changed the slot of '{}' in round {round}",
                    c.instance.id
                )));
            }
            let mut instance = c.instance.clone();
            instance.instruction_text = revision.instruction;
            instance.labels = revision.labels;
            refined.push(Candidate {
                instance,
                status: Status::Refined,
                feedback: None,
                generation: c.generation + 1,
                parent_id: Some(c.parent_id.clone().unwrap_or_else(|| c.instance.id.clone())),
            });
        }
        for c in &refined {
            pool.upsert(c.instance.clone());
        }
        check_all(agents.checker.as_ref(), &pool, &mut refined)?;
        audit.extend(refined.iter().map(|c| AuditEvent::verdict("refine", round, c)));
        let (passed, failed) = partition(refined)?;
        audit.push(AuditEvent::summary(
            "refine",
            round,
            &[("refined", passed.len() + failed.len()), ("passed", passed.len()), ("failed", failed.len())],
        ));
        passes.push(passed);
        fail = failed;
    }
    Ok(RefineOutcome {
        passes,
        residual: fail,
        audit,
    })
}

#[derive(Debug, Clone)]
pub struct FlywheelOutcome {
    pub distilled: Dataset,
    pub canon: usize,
    pub passes_per_round: Vec<usize>,
    pub residual: Vec<Candidate>,
    pub audit: Vec<AuditEvent>,
}

/// Generate, check, partition, refine, and take the union of everything that
/// passed. Distilled instances keep the order of `raw`.
pub fn run_flywheel(raw: &[RawSpec], agents: &AgentSet, max_rounds: usize) -> Result<FlywheelOutcome> {
    let mut audit = Vec::new();
    let mut candidates = Vec::with_capacity(raw.len());
    for spec in raw {
        let text = agents.generator.generate(spec)?;
        candidates.push(Candidate::new(spec.clone().into_instance(text)));
    }
    audit.push(AuditEvent::summary("generate", 0, &[("candidates", candidates.len())]));

    let pool = Pool::new(candidates.iter().map(|c| &c.instance));
    check_all(agents.checker.as_ref(), &pool, &mut candidates)?;
    let mut by_id: Vec<&Candidate> = candidates.iter().collect();
    by_id.sort_by(|a, b| a.instance.id.cmp(&b.instance.id));
    audit.extend(by_id.iter().map(|c| AuditEvent::verdict("check", 0, c)));

    let (canon, fail) = partition(candidates)?;
    audit.push(AuditEvent::summary(
        "partition",
        0,
        &[("canon", canon.len()), ("fail", fail.len())],
    ));
    let outcome = refine_iterate(fail, &canon, agents, max_rounds)?;
    audit.extend(outcome.audit);
    audit.push(AuditEvent::summary(
        "distil",
        outcome.passes.len(),
        &[
            ("canon", canon.len()),
            ("refined_passes", outcome.passes.iter().map(Vec::len).sum()),
            ("residual", outcome.residual.len()),
        ],
    ));

    let order: HashMap<&str, usize> = raw.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut kept: Vec<Instance> = canon
        .iter()
        .chain(outcome.passes.iter().flatten())
        .map(|c| c.instance.clone())
        .collect();
    kept.sort_by_key(|inst| order[inst.id.as_str()]);
    Ok(FlywheelOutcome {
        distilled: Dataset::from_instances(kept)?,
        canon: canon.len(),
        passes_per_round: outcome.passes.iter().map(Vec::len).collect(),
        residual: outcome.residual,
        audit,
    })
}

/// Re-check a finished dataset from scratch; returns the failing ids.
pub fn recheck(dataset: &Dataset, checker: &dyn Checker) -> Result<Vec<String>> {
    let pool = Pool::new(dataset.instances().iter());
    let mut failed = Vec::new();
    for inst in dataset.instances() {
        let c = Candidate::new(inst.clone());
        if !checker.check(&c, &pool.group(inst))?.pass {
            failed.push(inst.id.clone());
        }
    }
    Ok(failed)
}
