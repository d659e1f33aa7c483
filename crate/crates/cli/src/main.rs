use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use scanhd_core::dataset::{split, synth_generate, Dataset};
use scanhd_core::eval::{
    evaluate, latency_probe, normalize_instruction, sweep, write_records, Bench, SweepConfig,
};
use scanhd_core::flywheel::{
    run_flywheel, write_audit, AgentSet, CorruptingGenerator, FieldRepairRefiner, RawSpec,
    RuleChecker, SubprocessAgent, TemplateGenerator,
};
use scanhd_core::{Embedding, EmbeddingStore, Error, Modality, Param, RunConfig, ScanModel};

const DATASET_FILE: &str = "dataset.jsonl";
const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "scanhd", version, about = "Scanner parameter recommendation with hyperdimensional memories")]
struct Cli {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed (falls back to the config file, then SCANHD_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark into a data directory.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Train a model on the training side of a split.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate a predictor on the test side of a split.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// scanhd, knn or rule.
        #[arg(long, default_value = "scanhd")]
        predictor: String,
        #[arg(long)]
        knn_k: Option<usize>,
        /// Report JSON (default: report.json next to the model, or in the cwd).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-instance prediction records as JSONL.
        #[arg(long)]
        records: Option<PathBuf>,
        #[command(flatten)]
        model_args: ModelArgs,
    },
    /// Multi-seed fraction, ablation or cross-split sweep.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// fractions, ablations or cross_splits.
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        cross_splits: Option<Vec<String>>,
        #[arg(long)]
        knn_k: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run the data-evolution loop over a dataset's specs.
    Flywheel {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for the distilled dataset and audit log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_rounds: Option<usize>,
        #[arg(long)]
        corruption_rate: Option<f64>,
        #[arg(long)]
        strict: bool,
        /// External checker/refiner speaking the line-JSON agent protocol.
        #[arg(long)]
        agent: Option<String>,
        #[arg(long = "agent-arg", allow_hyphen_values = true)]
        agent_args: Vec<String>,
    },
    /// Recommend a scanner configuration for one observation/instruction pair.
    Recommend {
        #[arg(long)]
        model: PathBuf,
        /// FILE#ID into an embedding store.
        #[arg(long)]
        observation_embedding: Option<String>,
        /// FILE#ID into an embedding store.
        #[arg(long)]
        instruction_embedding: Option<String>,
        /// Instruction text, resolved against the dataset the model was trained on.
        #[arg(long)]
        instruction: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure recommend() latency on held-out queries.
    Latency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        warmup: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct SynthArgs {
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    keys: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    observation_dim: Option<usize>,
    #[arg(long)]
    instruction_dim: Option<usize>,
}

#[derive(Args, Default)]
struct ModelArgs {
    #[arg(long)]
    hyper_dim: Option<usize>,
    /// concat-project or hyperbind.
    #[arg(long)]
    fusion: Option<String>,
    /// both, observation_only or instruction_only.
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    refine_epochs: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    /// Skip L2 normalisation of input embeddings.
    #[arg(long)]
    raw_inputs: bool,
}

/// A bad command line that clap cannot see (missing paths, malformed refs).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn enum_value<T: serde::de::DeserializeOwned>(flag: &str, v: &Option<String>) -> anyhow::Result<Option<T>> {
    v.as_ref()
        .map(|s| {
            serde_json::from_value(Value::String(s.clone()))
                .map_err(|_| anyhow!(Error::InvalidArgument(format!("--{flag}: unknown value '{s}'"))))
        })
        .transpose()
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) -> anyhow::Result<()> {
        cfg.hyper_dim = self.hyper_dim;
        cfg.fusion = enum_value("fusion", &self.fusion)?;
        cfg.modality = enum_value("modality", &self.modality)?;
        cfg.eta = self.eta;
        cfg.refine_epochs = self.refine_epochs;
        cfg.early_stop_patience = self.early_stop_patience;
        cfg.normalize_inputs = self.raw_inputs.then_some(false);
        Ok(())
    }
}

/// Flags for one invocation as a config layer.
fn flag_layer(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut c = RunConfig {
        seed: cli.seed,
        jobs: cli.jobs,
        ..RunConfig::default()
    };
    match &cli.command {
        Command::Gen { synth, .. } => {
            c.objects = synth.objects;
            c.keys_per_object = synth.keys;
            c.noise_sigma = synth.noise_sigma;
            c.observation_dim = synth.observation_dim;
            c.instruction_dim = synth.instruction_dim;
        }
        Command::Train { data, split, model, .. } => {
            c.data = data.clone();
            c.split = split.clone();
            model.apply(&mut c)?;
        }
        Command::Eval { data, split, knn_k, model_args, .. } => {
            c.data = data.clone();
            c.split = split.clone();
            c.knn_k = *knn_k;
            model_args.apply(&mut c)?;
        }
        Command::Sweep { data, protocol, seeds, fractions, cross_splits, knn_k, model, .. } => {
            c.data = data.clone();
            c.protocol = enum_value("protocol", protocol)?;
            c.seeds = seeds.clone();
            c.fractions = fractions.clone();
            c.cross_splits = cross_splits.clone();
            c.knn_k = *knn_k;
            model.apply(&mut c)?;
        }
        Command::Flywheel { data, max_rounds, corruption_rate, strict, .. } => {
            c.data = data.clone();
            c.max_rounds = *max_rounds;
            c.corruption_rate = *corruption_rate;
            c.strict = strict.then_some(true);
        }
        Command::Recommend { data, .. } => c.data = data.clone(),
        Command::Latency { data, split, .. } => {
            c.data = data.clone();
            c.split = split.clone();
        }
    }
    Ok(c)
}

fn effective_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let env_seed = match std::env::var("SCANHD_SEED") {
        Ok(s) => Some(
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidArgument(format!("SCANHD_SEED: not an integer: '{s}'")))?,
        ),
        Err(_) => None,
    };
    let mut cfg = RunConfig {
        seed: env_seed,
        ..RunConfig::default()
    };
    if let Some(path) = &cli.config {
        cfg = cfg.overlay(RunConfig::load(path)?);
    }
    let cfg = cfg.overlay(flag_layer(cli)?);
    cfg.validate()?;
    Ok(cfg)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: Value,
    resolved: Value,
    dataset_fingerprint: Option<&'a str>,
    inputs: Vec<Value>,
    output: Value,
}

struct Run<'a> {
    command: &'a str,
    config: &'a RunConfig,
    dataset_fingerprint: Option<String>,
    inputs: Vec<PathBuf>,
}

impl Run<'_> {
    /// Write `<output>.manifest.json` for an artifact that already exists.
    fn manifest(&self, output: &Path) -> anyhow::Result<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| Ok(json!({"path": p, "sha256": sha256_file(p)?})))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let m = Manifest {
            tool: "scanhd",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: without_nulls(serde_json::to_value(self.config)?),
            resolved: json!({
                "seed": self.config.seed_or(0),
                "split": self.config.split_mode()?.to_string(),
                "synth": self.config.synth(),
                "fusion": self.config.fusion_config(),
                "modality": self.config.modality.unwrap_or(Modality::Both),
                "training": self.config.training(),
            }),
            dataset_fingerprint: self.dataset_fingerprint.as_deref(),
            inputs,
            output: json!({"path": output, "sha256": sha256_file(output)?}),
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        let path = manifest_path(output);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn without_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(m.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        other => other,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

struct DataDir {
    dataset: Dataset,
    store: EmbeddingStore,
    files: Vec<PathBuf>,
}

fn load_data(dir: &Path) -> anyhow::Result<DataDir> {
    let (d, e) = (dir.join(DATASET_FILE), dir.join(EMBEDDINGS_FILE));
    Ok(DataDir {
        dataset: Dataset::load(&d)?,
        store: EmbeddingStore::load(&e)?,
        files: vec![d, e],
    })
}

/// The data directory from flags/config, else the one recorded in the
/// model's manifest.
fn data_dir(cfg: &RunConfig, model: Option<&Path>) -> anyhow::Result<PathBuf> {
    if let Some(d) = &cfg.data {
        return Ok(d.clone());
    }
    if let Some(model) = model {
        let path = manifest_path(model);
        if let Ok(text) = fs::read_to_string(&path) {
            let m: Value = serde_json::from_str(&text)?;
            if let Some(d) = m["config"]["data"].as_str() {
                return Ok(PathBuf::from(d));
            }
        }
    }
    Err(usage("no data directory: pass --data or set \"data\" in the config"))
}

fn embedding_ref(spec: &str) -> anyhow::Result<Embedding> {
    let (file, id) = spec
        .rsplit_once('#')
        .ok_or_else(|| usage(format!("embedding reference '{spec}' must look like FILE#ID")))?;
    let store = EmbeddingStore::load(file)?;
    Ok(store.require(id)?.clone())
}

fn cmd_gen(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let synth = cfg.synth();
    let (ds, store) = synth_generate(&synth)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (d, e) = (out.join(DATASET_FILE), out.join(EMBEDDINGS_FILE));
    ds.save(&d)?;
    store.save(&e)?;
    let run = Run {
        command: "gen",
        config: cfg,
        dataset_fingerprint: Some(ds.fingerprint()),
        inputs: vec![],
    };
    run.manifest(&d)?;
    run.manifest(&e)?;
    println!("wrote {} instances and {} embeddings to {}", ds.len(), store.len(), out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let data = load_data(&data_dir(cfg, None)?)?;
    let seed = cfg.seed_or(0);
    let s = split(&data.dataset, &cfg.split_mode()?, seed)?;
    let bench = Bench::new(&data.dataset, &data.store, cfg.fusion_config())?;
    let modality = cfg.modality.unwrap_or(Modality::Both);
    let model = bench.train(modality, &s.train, &cfg.training())?;
    create_parent(out)?;
    model.save(out)?;
    Run {
        command: "train",
        config: cfg,
        dataset_fingerprint: Some(data.dataset.fingerprint()),
        inputs: data.files,
    }
    .manifest(out)?;
    println!(
        "trained on {} instances, refine errors {:?}; model written to {}",
        s.train.len(),
        model.meta.error_trajectory,
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    model_path: Option<&Path>,
    predictor: &str,
    out: Option<&Path>,
    records_out: Option<&Path>,
) -> anyhow::Result<()> {
    let data = load_data(&data_dir(cfg, model_path)?)?;
    let mode = cfg.split_mode()?;
    let s = split(&data.dataset, &mode, cfg.seed_or(0))?;
    let mut inputs = data.files.clone();
    let records = match predictor {
        "scanhd" => {
            let path = model_path.ok_or_else(|| usage("--predictor scanhd needs --model"))?;
            let model = ScanModel::load(path)?;
            inputs.push(path.to_path_buf());
            let bench = Bench::new(&data.dataset, &data.store, model.fusion)?;
            bench.model_records(&model, &s.test)?
        }
        "knn" | "rule" => {
            let bench = Bench::new(&data.dataset, &data.store, cfg.fusion_config())?;
            if predictor == "knn" {
                let modality = cfg.modality.unwrap_or(Modality::Both);
                bench.knn_records(modality, cfg.knn_k.unwrap_or(5), &s.train, &s.test)?
            } else {
                bench.rule_records(&s.train, &s.test)
            }
        }
        other => return Err(usage(format!("unknown predictor '{other}' (expected scanhd, knn or rule)"))),
    };
    let report = evaluate(&records, predictor, &mode.to_string(), &data.dataset.fingerprint())?;
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => model_path
            .map(|m| m.with_file_name("report.json"))
            .unwrap_or_else(|| PathBuf::from("report.json")),
    };
    let run = Run {
        command: "eval",
        config: cfg,
        dataset_fingerprint: Some(data.dataset.fingerprint()),
        inputs,
    };
    write_json(&out, &report)?;
    run.manifest(&out)?;
    if let Some(path) = records_out {
        create_parent(path)?;
        let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_records(&records, std::io::BufWriter::new(f))?;
        run.manifest(path)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let data = load_data(&data_dir(cfg, None)?)?;
    let d = SweepConfig::default();
    let sc = SweepConfig {
        protocol: cfg.protocol.unwrap_or(d.protocol),
        seeds: cfg.seeds.clone().unwrap_or(d.seeds),
        training: cfg.training(),
        modality: cfg.modality.unwrap_or(d.modality),
        train_ratio: d.train_ratio,
        fractions: cfg.fractions.clone().unwrap_or(d.fractions),
        cross_splits: cfg.cross_split_modes()?.unwrap_or(d.cross_splits),
        knn_k: cfg.knn_k.unwrap_or(d.knn_k),
        with_knn: true,
        jobs: cfg.jobs.unwrap_or(1),
    };
    let bench = Bench::new(&data.dataset, &data.store, cfg.fusion_config())?;
    let mut report = sweep(&bench, &sc)?;
    // The thread count never changes results; keep it out of the artifact.
    report.config.jobs = 0;
    write_json(out, &report)?;
    Run {
        command: "sweep",
        config: &RunConfig { jobs: None, ..cfg.clone() },
        dataset_fingerprint: Some(data.dataset.fingerprint()),
        inputs: data.files,
    }
    .manifest(out)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_flywheel(cfg: &RunConfig, out: &Path, agent: Option<&str>, agent_args: &[String]) -> anyhow::Result<()> {
    let data = load_data(&data_dir(cfg, None)?)?;
    let raw: Vec<RawSpec> = data.dataset.instances().iter().map(RawSpec::from_instance).collect();
    let rate = cfg.corruption_rate.unwrap_or(0.0);
    let generator: Box<dyn scanhd_core::flywheel::Generator> = if rate > 0.0 {
        Box::new(CorruptingGenerator {
            inner: TemplateGenerator,
            rate,
            seed: cfg.seed_or(0),
        })
    } else {
        Box::new(TemplateGenerator)
    };
    let agents = match agent {
        Some(program) => AgentSet {
            generator,
            checker: Box::new(SubprocessAgent::spawn(program, agent_args, cfg.agent_config.clone())?),
            refiner: Box::new(SubprocessAgent::spawn(program, agent_args, cfg.agent_config.clone())?),
        },
        None => AgentSet {
            generator,
            checker: Box::new(RuleChecker {
                strict: cfg.strict.unwrap_or(false),
                ..RuleChecker::default()
            }),
            refiner: Box::new(FieldRepairRefiner),
        },
    };
    let outcome = run_flywheel(&raw, &agents, cfg.max_rounds.unwrap_or(3))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (d, e, a) = (out.join(DATASET_FILE), out.join(EMBEDDINGS_FILE), out.join("audit.jsonl"));
    outcome.distilled.save(&d)?;
    data.store.save(&e)?;
    let f = fs::File::create(&a).with_context(|| format!("creating {}", a.display()))?;
    write_audit(&outcome.audit, std::io::BufWriter::new(f))?;
    let run = Run {
        command: "flywheel",
        config: cfg,
        dataset_fingerprint: Some(outcome.distilled.fingerprint()),
        inputs: data.files,
    };
    for path in [&d, &e, &a] {
        run.manifest(path)?;
    }
    println!(
        "canon {} | repaired per round {:?} | residual {} | distilled {} of {}",
        outcome.canon,
        outcome.passes_per_round,
        outcome.residual.len(),
        outcome.distilled.len(),
        raw.len()
    );
    Ok(())
}

fn resolve_instruction(cfg: &RunConfig, model: &Path, text: &str) -> anyhow::Result<Embedding> {
    let data = load_data(&data_dir(cfg, Some(model))?)?;
    let key = normalize_instruction(text);
    let inst = data
        .dataset
        .instances()
        .iter()
        .find(|i| normalize_instruction(&i.instruction_text) == key)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no instruction embedding for '{text}': it does not occur in the dataset; pass --instruction-embedding"
            ))
        })?;
    Ok(data.store.require(&inst.instruction_embedding_id)?.clone())
}

fn cmd_recommend(
    cfg: &RunConfig,
    model_path: &Path,
    observation: Option<&str>,
    instruction_ref: Option<&str>,
    instruction_text: Option<&str>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let model = ScanModel::load(model_path)?;
    let obs = observation.map(embedding_ref).transpose()?;
    let ins = match (instruction_ref, instruction_text) {
        (Some(r), _) => Some(embedding_ref(r)?),
        (None, Some(t)) => Some(resolve_instruction(cfg, model_path, t)?),
        (None, None) => None,
    };
    let rec = model.recommend(obs.as_ref(), ins.as_ref())?;
    let mut values = serde_json::Map::new();
    for p in Param::ALL {
        values.insert(p.name().to_string(), json!(rec.config.value_name(p)));
    }
    let doc = json!({"recommendation": values, "confidences": rec.confidences()});
    match out {
        Some(path) => {
            write_json(path, &doc)?;
            Run {
                command: "recommend",
                config: cfg,
                dataset_fingerprint: None,
                inputs: vec![model_path.to_path_buf()],
            }
            .manifest(path)?;
            for p in Param::ALL {
                println!("{:<22} {}", p.name(), rec.config.value_name(p));
            }
        }
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(())
}

fn cmd_latency(cfg: &RunConfig, model_path: &Path, n: usize, warmup: usize, out: &Path) -> anyhow::Result<()> {
    let model = ScanModel::load(model_path)?;
    let data = load_data(&data_dir(cfg, Some(model_path))?)?;
    let s = split(&data.dataset, &cfg.split_mode()?, cfg.seed_or(0))?;
    if s.test.is_empty() {
        bail!(Error::InvalidArgument("split leaves no test instances to query".into()));
    }
    let queries = s
        .test
        .iter()
        .take(64)
        .map(|&i| {
            let inst = &data.dataset.instances()[i];
            let obs = model.modality.uses_observation().then(|| data.store.require(&inst.observation_embedding_id).cloned()).transpose()?;
            let ins = model.modality.uses_instruction().then(|| data.store.require(&inst.instruction_embedding_id).cloned()).transpose()?;
            Ok((obs, ins))
        })
        .collect::<scanhd_core::Result<Vec<_>>>()?;
    let stats = latency_probe(&model, &queries, n, warmup)?;
    write_json(out, &stats)?;
    let mut inputs = data.files;
    inputs.push(model_path.to_path_buf());
    Run {
        command: "latency",
        config: cfg,
        dataset_fingerprint: Some(data.dataset.fingerprint()),
        inputs,
    }
    .manifest(out)?;
    println!(
        "n={} p50={:.1}us p90={:.1}us p99={:.1}us mean={:.1}us max={:.1}us",
        stats.n, stats.p50_us, stats.p90_us, stats.p99_us, stats.mean_us, stats.max_us
    );
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = effective_config(cli)?;
    log::debug!("effective config: {}", serde_json::to_string(&cfg)?);
    match &cli.command {
        Command::Gen { out, .. } => cmd_gen(&cfg, out),
        Command::Train { out, .. } => cmd_train(&cfg, out),
        Command::Eval { model, predictor, out, records, .. } => {
            cmd_eval(&cfg, model.as_deref(), predictor, out.as_deref(), records.as_deref())
        }
        Command::Sweep { out, .. } => cmd_sweep(&cfg, out),
        Command::Flywheel { out, agent, agent_args, .. } => cmd_flywheel(&cfg, out, agent.as_deref(), agent_args),
        Command::Recommend { model, observation_embedding, instruction_embedding, instruction, out, .. } => cmd_recommend(
            &cfg,
            model,
            observation_embedding.as_deref(),
            instruction_embedding.as_deref(),
            instruction.as_deref(),
            out.as_deref(),
        ),
        Command::Latency { model, n, warmup, out, .. } => cmd_latency(&cfg, model, *n, *warmup, out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::InvalidArgument(_)
            | Error::InvalidLabel { .. }
            | Error::UnknownValue { .. }
            | Error::Parse { .. }
            | Error::MissingEmbedding(_)
            | Error::Model(_)
            | Error::Json(_),
        ) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
