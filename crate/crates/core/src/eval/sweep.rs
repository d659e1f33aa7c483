//! Experiment drivers: cached encodings, train/eval cells, sweeps, latency.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, knn_features, EvalReport, Knn, PredictionRecord, RuleLookup};
use crate::dataset::{split, Dataset, Lighting, SplitMode};
use crate::error::{invalid, Result};
use crate::fusion::{
    EmbeddingKind, EmbeddingStore, EncoderSet, Embedding, FusionConfig, Modality,
    DEFAULT_EMBEDDING_DIM,
};
use crate::hdc::Hypervector;
use crate::memory::{ScanModel, TrainingConfig};
use crate::params::{Param, ParameterConfig, NUM_PARAMS, VALUES_PER_PARAM};
use crate::rng::substream;

fn modality_slot(m: Modality) -> usize {
    match m {
        Modality::Both => 0,
        Modality::ObservationOnly => 1,
        Modality::InstructionOnly => 2,
    }
}

/// A dataset, its embeddings, and lazily cached hypervector encodings.
pub struct Bench<'a> {
    dataset: &'a Dataset,
    store: &'a EmbeddingStore,
    fusion: FusionConfig,
    encoders: EncoderSet,
    encoded: Mutex<[Option<Arc<Vec<Hypervector>>>; 3]>,
    fingerprint: String,
}

impl<'a> Bench<'a> {
    pub fn new(dataset: &'a Dataset, store: &'a EmbeddingStore, fusion: FusionConfig) -> Result<Self> {
        if dataset.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        let d_o = store.dim_of(EmbeddingKind::Observation).unwrap_or(DEFAULT_EMBEDDING_DIM);
        let d_t = store.dim_of(EmbeddingKind::Instruction).unwrap_or(DEFAULT_EMBEDDING_DIM);
        let encoders = EncoderSet::new(&fusion, d_o, d_t)?;
        Ok(Self {
            dataset,
            store,
            fusion,
            encoders,
            encoded: Mutex::new([None, None, None]),
            fingerprint: dataset.fingerprint(),
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn store(&self) -> &EmbeddingStore {
        self.store
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn encoders(&self) -> &EncoderSet {
        &self.encoders
    }

    /// Hypervectors for every dataset row under `modality`.
    pub fn encoded(&self, modality: Modality) -> Result<Arc<Vec<Hypervector>>> {
        let mut cache = self.encoded.lock().expect("encoding cache poisoned");
        let slot = &mut cache[modality_slot(modality)];
        if let Some(hvs) = slot {
            return Ok(Arc::clone(hvs));
        }
        let rows = crate::fusion::batch_encode(
            self.dataset.instances(),
            modality,
            &self.fusion,
            &self.encoders,
            self.store,
        )?;
        let hvs = Arc::new(rows.into_iter().map(|(_, h)| h).collect::<Vec<_>>());
        *slot = Some(Arc::clone(&hvs));
        Ok(hvs)
    }

    pub fn train(&self, modality: Modality, train: &[usize], cfg: &TrainingConfig) -> Result<ScanModel> {
        let hvs = self.encoded(modality)?;
        let instances = self.dataset.instances();
        let samples: Vec<_> = train.iter().map(|&i| (&hvs[i], instances[i].labels)).collect();
        let mut model = ScanModel::with_encoders(self.fusion, modality, self.encoders.clone());
        model.fit(&samples, cfg)?;
        Ok(model)
    }

    pub fn model_records(&self, model: &ScanModel, test: &[usize]) -> Result<Vec<PredictionRecord>> {
        let hvs = self.encoded(model.modality)?;
        test.iter()
            .map(|&i| {
                let inst = &self.dataset.instances()[i];
                let rec = model.predict_hv(&hvs[i])?;
                Ok(PredictionRecord {
                    instance_id: inst.id.clone(),
                    truth: inst.labels,
                    prediction: rec.config,
                    scores: Some(rec.scores),
                })
            })
            .collect()
    }

    pub fn knn_records(&self, modality: Modality, k: usize, train: &[usize], test: &[usize]) -> Result<Vec<PredictionRecord>> {
        let instances = self.dataset.instances();
        let rows = train
            .iter()
            .map(|&i| knn_features(&instances[i], self.store, modality))
            .collect::<Result<Vec<_>>>()?;
        let labels = train.iter().map(|&i| instances[i].labels).collect();
        let knn = Knn::fit(rows, labels, k)?;
        test.iter()
            .map(|&i| {
                let inst = &instances[i];
                Ok(PredictionRecord {
                    instance_id: inst.id.clone(),
                    truth: inst.labels,
                    prediction: knn.predict(&knn_features(inst, self.store, modality)?),
                    scores: None,
                })
            })
            .collect()
    }

    pub fn rule_records(&self, train: &[usize], test: &[usize]) -> Vec<PredictionRecord> {
        let instances = self.dataset.instances();
        let refs: Vec<_> = train.iter().map(|&i| &instances[i]).collect();
        let rule = RuleLookup::fit(&refs);
        test.iter()
            .map(|&i| PredictionRecord {
                instance_id: instances[i].id.clone(),
                truth: instances[i].labels,
                prediction: rule.predict(&instances[i].instruction_text),
                scores: None,
            })
            .collect()
    }

    /// Describe why `train` cannot fill every prototype, if it cannot.
    pub fn degenerate(&self, train: &[usize]) -> Option<String> {
        let mut seen = [[false; VALUES_PER_PARAM]; NUM_PARAMS];
        for &i in train {
            for (k, &v) in self.dataset.instances()[i].labels.0.iter().enumerate() {
                seen[k][v as usize] = true;
            }
        }
        let missing: Vec<String> = Param::ALL
            .iter()
            .flat_map(|&p| {
                (0..VALUES_PER_PARAM)
                    .filter(move |&v| !seen[p.index()][v])
                    .map(move |v| format!("{}={}", p.name(), p.vocabulary()[v]))
            })
            .collect();
        (!missing.is_empty()).then(|| format!("no training rows for {}", missing.join(", ")))
    }
}

/// Stratified subsample of `indices` by joint label key, keeping
/// `round(fraction * n)` rows split across strata by largest remainder.
pub fn stratified_fraction(dataset: &Dataset, indices: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("fraction {fraction} must be in (0, 1]")));
    }
    let mut strata: BTreeMap<ParameterConfig, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        strata.entry(dataset.instances()[i].labels).or_default().push(i);
    }
    let target = (fraction * indices.len() as f64).round() as usize;
    let mut quotas: Vec<(usize, f64)> = strata
        .values()
        .map(|g| {
            let q = fraction * g.len() as f64;
            (q.floor() as usize, q - q.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &g in by_remainder.iter().take(target.saturating_sub(assigned)) {
        quotas[g].0 += 1;
    }
    let mut rng = substream(seed, "sweep/fraction");
    let mut out = Vec::with_capacity(target);
    for (group, (quota, _)) in strata.into_values().zip(quotas) {
        let mut group = group;
        group.shuffle(&mut rng);
        out.extend_from_slice(&group[..quota.min(group.len())]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side has no variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Fractions,
    Ablations,
    CrossSplits,
}

impl std::str::FromStr for Protocol {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fractions" => Ok(Protocol::Fractions),
            "ablations" => Ok(Protocol::Ablations),
            "cross_splits" | "cross-splits" => Ok(Protocol::CrossSplits),
            _ => Err(invalid(format!("unknown protocol '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    /// `shuffle_seed` is replaced by each sweep seed.
    pub training: TrainingConfig,
    /// Model modality for the fraction and cross-split protocols.
    pub modality: Modality,
    pub train_ratio: f64,
    pub fractions: Vec<f64>,
    pub cross_splits: Vec<SplitMode>,
    pub knn_k: usize,
    pub with_knn: bool,
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Fractions,
            seeds: (0..5).collect(),
            training: TrainingConfig::default(),
            modality: Modality::Both,
            train_ratio: 0.8,
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            cross_splits: vec![
                SplitMode::Lighting(Lighting::Dark),
                SplitMode::Position(2),
                SplitMode::Rotation(2),
            ],
            knn_k: 5,
            with_knn: true,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub cell: String,
    pub seed: u64,
    pub modality: Modality,
    pub split: String,
    pub train_size: usize,
    pub degenerate: Option<String>,
    pub scanhd: Option<EvalReport>,
    pub knn: Option<EvalReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub exact: MeanStd,
    pub win1: Option<MeanStd>,
    pub macro_f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub runs: usize,
    pub parameters: Vec<ParamSummary>,
    pub average_exact: MeanStd,
    pub system_exact: MeanStd,
}

impl MetricSummary {
    pub fn of(reports: &[&EvalReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let collect = |f: &dyn Fn(&EvalReport) -> f64| MeanStd::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        let parameters = Param::ALL
            .iter()
            .map(|&p| ParamSummary {
                parameter: p.name().to_string(),
                exact: collect(&|r| r.param(p).exact),
                win1: p.win1_eligible().then(|| collect(&|r| r.param(p).win1.unwrap_or(f64::NAN))),
                macro_f1: collect(&|r| r.param(p).macro_f1),
            })
            .collect();
        Some(Self {
            runs: reports.len(),
            parameters,
            average_exact: collect(&|r| r.average_exact),
            system_exact: collect(&|r| r.system_exact),
        })
    }

    pub fn exact(&self, p: Param) -> MeanStd {
        self.parameters[p.index()].exact
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub degenerate_runs: usize,
    pub scanhd: Option<MetricSummary>,
    pub knn: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendEntry {
    pub parameter: String,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub protocol: Protocol,
    pub dataset_fingerprint: String,
    pub config: SweepConfig,
    pub runs: Vec<CellRun>,
    pub cells: Vec<CellSummary>,
    /// Fraction protocol only: rank correlation of mean exact with fraction.
    pub trend: Option<Vec<TrendEntry>>,
}

impl SweepReport {
    pub fn cell(&self, key: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == key)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:?} sweep over {} seeds\n", self.protocol, self.config.seeds.len());
        out.push_str(&format!("{:<22}", "cell"));
        for p in Param::ALL {
            out.push_str(&format!(" {:>22}", p.name()));
        }
        out.push('\n');
        for c in &self.cells {
            let Some(s) = &c.scanhd else {
                out.push_str(&format!("{:<22} degenerate\n", c.cell));
                continue;
            };
            out.push_str(&format!("{:<22}", c.cell));
            for p in Param::ALL {
                let e = s.exact(p);
                out.push_str(&format!(" {:>22}", format!("{:.2} ± {:.2}", 100.0 * e.mean, 100.0 * e.std)));
            }
            out.push('\n');
        }
        if let Some(trend) = &self.trend {
            for t in trend {
                let rho = t.spearman.map(|r| format!("{r:.3}")).unwrap_or_else(|| "undefined".into());
                out.push_str(&format!("spearman {}: {rho}\n", t.parameter));
            }
        }
        out
    }
}

struct CellPlan {
    cell: String,
    seed: u64,
    modality: Modality,
    split: String,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn fraction_key(f: f64) -> String {
    format!("fraction={f}")
}

fn plan(bench: &Bench<'_>, cfg: &SweepConfig) -> Result<Vec<CellPlan>> {
    let ds = bench.dataset();
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let base_mode = SplitMode::RowRandom(cfg.train_ratio);
        match cfg.protocol {
            Protocol::Fractions => {
                let base = split(ds, &base_mode, seed)?;
                for &f in &cfg.fractions {
                    cells.push(CellPlan {
                        cell: fraction_key(f),
                        seed,
                        modality: cfg.modality,
                        split: base_mode.to_string(),
                        train: stratified_fraction(ds, &base.train, f, seed)?,
                        test: base.test.clone(),
                    });
                }
            }
            Protocol::Ablations => {
                let base = split(ds, &base_mode, seed)?;
                for m in [Modality::ObservationOnly, Modality::InstructionOnly, Modality::Both] {
                    cells.push(CellPlan {
                        cell: format!("modality={}", m.name()),
                        seed,
                        modality: m,
                        split: base_mode.to_string(),
                        train: base.train.clone(),
                        test: base.test.clone(),
                    });
                }
            }
            Protocol::CrossSplits => {
                for mode in &cfg.cross_splits {
                    let s = split(ds, mode, seed)?;
                    cells.push(CellPlan {
                        cell: format!("split={mode}"),
                        seed,
                        modality: cfg.modality,
                        split: mode.to_string(),
                        train: s.train,
                        test: s.test,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn run_plan(bench: &Bench<'_>, cfg: &SweepConfig, p: &CellPlan) -> Result<CellRun> {
    let degenerate = bench.degenerate(&p.train);
    let mut run = CellRun {
        cell: p.cell.clone(),
        seed: p.seed,
        modality: p.modality,
        split: p.split.clone(),
        train_size: p.train.len(),
        degenerate: degenerate.clone(),
        scanhd: None,
        knn: None,
    };
    if let Some(reason) = degenerate {
        log::warn!("cell {} seed {}: {reason}; marked degenerate", p.cell, p.seed);
        return Ok(run);
    }
    let training = TrainingConfig {
        shuffle_seed: p.seed,
        ..cfg.training
    };
    let model = bench.train(p.modality, &p.train, &training)?;
    let records = bench.model_records(&model, &p.test)?;
    run.scanhd = Some(evaluate(&records, "scanhd", &p.split, bench.fingerprint())?);
    if cfg.with_knn && cfg.knn_k <= p.train.len() {
        let records = bench.knn_records(p.modality, cfg.knn_k, &p.train, &p.test)?;
        run.knn = Some(evaluate(&records, "knn", &p.split, bench.fingerprint())?);
    }
    Ok(run)
}

/// Run every cell of a protocol for every seed. Results do not depend on
/// `cfg.jobs`.
pub fn sweep(bench: &Bench<'_>, cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.seeds.is_empty() {
        return Err(invalid("sweep needs at least one seed"));
    }
    cfg.training.validate()?;
    let plans = plan(bench, cfg)?;
    // Fill the encoding cache up front so workers do not serialise on it.
    let mut modalities: Vec<Modality> = plans.iter().map(|p| p.modality).collect();
    modalities.dedup();
    for m in Modality::ALL {
        if modalities.contains(&m) {
            bench.encoded(m)?;
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let runs = pool.install(|| {
        plans
            .par_iter()
            .map(|p| run_plan(bench, cfg, p))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut keys: Vec<String> = Vec::new();
    for r in &runs {
        if !keys.contains(&r.cell) {
            keys.push(r.cell.clone());
        }
    }
    let cells: Vec<CellSummary> = keys
        .iter()
        .map(|k| {
            let of_cell: Vec<&CellRun> = runs.iter().filter(|r| &r.cell == k).collect();
            let hd: Vec<&EvalReport> = of_cell.iter().filter_map(|r| r.scanhd.as_ref()).collect();
            let knn: Vec<&EvalReport> = of_cell.iter().filter_map(|r| r.knn.as_ref()).collect();
            CellSummary {
                cell: k.clone(),
                degenerate_runs: of_cell.iter().filter(|r| r.degenerate.is_some()).count(),
                scanhd: MetricSummary::of(&hd),
                knn: MetricSummary::of(&knn),
            }
        })
        .collect();

    let trend = (cfg.protocol == Protocol::Fractions).then(|| {
        Param::ALL
            .iter()
            .map(|&p| {
                let (mut xs, mut ys) = (Vec::new(), Vec::new());
                for &f in &cfg.fractions {
                    let summary = cells
                        .iter()
                        .find(|c| c.cell == fraction_key(f))
                        .and_then(|c| c.scanhd.as_ref());
                    if let Some(s) = summary {
                        xs.push(f);
                        ys.push(s.exact(p).mean);
                    }
                }
                TrendEntry {
                    parameter: p.name().to_string(),
                    spearman: spearman(&xs, &ys),
                }
            })
            .collect()
    });

    Ok(SweepReport {
        protocol: cfg.protocol,
        dataset_fingerprint: bench.fingerprint().to_string(),
        config: cfg.clone(),
        runs,
        cells,
        trend,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub mean_us: f64,
    pub max_us: f64,
}

/// Time `n` full recommendations cycling over `queries`, after `warmup`
/// discarded calls. Embedding production is not timed.
pub fn latency_probe(
    model: &ScanModel,
    queries: &[(Option<Embedding>, Option<Embedding>)],
    n: usize,
    warmup: usize,
) -> Result<LatencyStats> {
    if n == 0 {
        return Ok(LatencyStats::default());
    }
    if queries.is_empty() {
        return Err(invalid("latency probe needs at least one query"));
    }
    let call = |i: usize| {
        let (o, t) = &queries[i % queries.len()];
        model.recommend(o.as_ref(), t.as_ref())
    };
    for i in 0..warmup {
        call(i)?;
    }
    let mut times = Vec::with_capacity(n);
    for i in 0..n {
        let start = Instant::now();
        let rec = call(i)?;
        times.push(start.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(rec);
    }
    times.sort_by(f64::total_cmp);
    let pct = |q: f64| times[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
    Ok(LatencyStats {
        n,
        p50_us: pct(0.5),
        p90_us: pct(0.9),
        p99_us: pct(0.99),
        mean_us: times.iter().sum::<f64>() / n as f64,
        max_us: times[n - 1],
    })
}
