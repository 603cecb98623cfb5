use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use seqbelief::checkpoint::Checkpoint;
use seqbelief::data::{self, prepare_all, CompanyRecord, PreparedCompany, ScalerManifest, SplitSpec};
use seqbelief::embed::{EmbedMode, Embedder, EmbedderConfig, CACHE_DIR_ENV};
use seqbelief::evaluation::{evaluate, CostModel};
use seqbelief::fsutil::write_atomic;
use seqbelief::genmodel::{synth_dataset, ShapeDistribution, SynthSpec};
use seqbelief::predict::{predict_all, tune_threshold, BeliefTrajectory, PredictOptions};
use seqbelief::training::{em_fit, sweep, sweep_csv, write_history, SweepGrid, TrainConfig};
use seqbelief::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "seqbelief", version, about = "Sequential belief model over expert-call transcripts")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Append log lines to this file instead of stderr.
    #[arg(long, global = true)]
    log_file: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset plus its latent sidecar.
    Synth(SynthArgs),
    /// Validate raw records, embed missing exchanges and fit the feature scaler.
    Ingest(IngestArgs),
    /// Fit a model with alternating updates.
    Train(TrainArgs),
    /// Write per-call belief trajectories.
    Predict(PredictArgs),
    /// Score trajectories against labels.
    Eval(EvalArgs),
    /// Grid search over training settings.
    Sweep(SweepArgs),
    /// Mean attention by expert type, call index and exchange index.
    AttentionReport(AttentionArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Take generating networks from this checkpoint instead of drawing them.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Latent sidecar path [default: <out>.latents.jsonl].
    #[arg(long)]
    latents: Option<PathBuf>,
    #[arg(long)]
    d_s: Option<usize>,
    #[arg(long)]
    d_emb: Option<usize>,
    #[arg(long)]
    max_calls: Option<usize>,
    #[arg(long)]
    max_exchanges: Option<usize>,
    #[arg(long)]
    rate_gain: Option<f64>,
    #[arg(long)]
    emission_gain: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EmbedderKind {
    Mock,
    Remote,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = EmbedderKind::Mock)]
    embedder: EmbedderKind,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = seqbelief::embed::DEFAULT_D_EMB)]
    d_emb: usize,
    /// Scaler manifest path [default: <out>.scaler.json].
    #[arg(long)]
    scaler_out: Option<PathBuf>,
    /// Also write train/valid/test files with these fractions, e.g. 0.8,0.1,0.1.
    /// The scaler is then fitted on the train part only.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Split by last call date instead of at random.
    #[arg(long)]
    temporal: bool,
}

/// Training flags; each overrides the matching field of `--config`.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// JSON file with TrainConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    d_s: Option<usize>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    hidden_dims: Option<Vec<usize>>,
    #[arg(long)]
    token_dim: Option<usize>,
    /// Use the first-exchange networks for every exchange.
    #[arg(long)]
    no_cross_exchange: bool,
    #[arg(long)]
    literal_ranges: bool,
    /// Train only the inference networks.
    #[arg(long)]
    freeze_generative: bool,
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_slice(&read(p)?)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f.clone() { cfg.$f = v; })*};
        }
        set!(learning_rate, dropout, d_s, w, batch_size, max_rounds, patience, mc_samples, seed, hidden_dims, token_dim);
        if self.no_cross_exchange {
            cfg.cross_exchange = false;
        }
        if self.literal_ranges {
            cfg.literal_ranges = true;
        }
        if self.freeze_generative {
            cfg.train_generative = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Feature scaler from `ingest`; fitted on the training records when absent.
    #[arg(long)]
    scaler: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// History CSV path [default: <out>.history.csv].
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = seqbelief::predict::DEFAULT_BAND_SAMPLES)]
    band_samples: usize,
    #[arg(long, default_value_t = seqbelief::predict::DEFAULT_BAND_SEED)]
    band_seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Trajectory JSONL from `predict`.
    #[arg(long)]
    pred: PathBuf,
    /// Dataset JSONL holding the labels.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, conflicts_with = "tune_on")]
    threshold: Option<f64>,
    /// Trajectories (labels from --truth) on which to pick the F1-maximising threshold.
    #[arg(long)]
    tune_on: Option<PathBuf>,
    /// JSON cost model; missing fields take the defaults.
    #[arg(long)]
    cost_model: Option<PathBuf>,
    /// Score with the rate after this call (1-based) instead of the last one.
    #[arg(long)]
    at_call: Option<usize>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// JSON object: config field → list of values.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    scaler: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct AttentionArgs {
    #[arg(long)]
    trajectories: PathBuf,
    /// Dataset JSONL; adds per-label rows.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec {
        n_companies: a.n,
        seed: a.seed,
        ..Default::default()
    };
    let defaults = ShapeDistribution::default();
    spec.shape.max_calls = a.max_calls.unwrap_or(defaults.max_calls);
    spec.shape.max_exchanges = a.max_exchanges.unwrap_or(defaults.max_exchanges);
    spec.d_s = a.d_s.unwrap_or(spec.d_s);
    spec.d_emb = a.d_emb.unwrap_or(spec.d_emb);
    spec.rate_gain = a.rate_gain.unwrap_or(spec.rate_gain);
    spec.emission_gain = a.emission_gain.unwrap_or(spec.emission_gain);
    let params = match &a.params {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            spec.d_s = ck.model.arch.d_s;
            spec.d_emb = ck.model.arch.d_emb;
            Some((ck.model.arch.clone(), ck.model.gen))
        }
        None => None,
    };
    let latents = a.latents.clone().unwrap_or_else(|| with_suffix(&a.out, ".latents.jsonl"));
    let out = synth_dataset(&spec, params, &a.out, &latents)?;
    let positives = out.records.iter().filter(|r| r.label == 1).count();
    info!("wrote {} companies ({positives} successes) to {}", out.records.len(), a.out.display());
    Ok(())
}

fn fit_scaler(records: &[CompanyRecord]) -> Result<ScalerManifest> {
    let mut scaler = ScalerManifest::fit(records)?;
    if scaler.d_emb.is_none() {
        scaler.d_emb = records.iter().find_map(|r| r.d_emb());
    }
    Ok(scaler)
}

fn run_ingest(a: &IngestArgs) -> Result<()> {
    let mut records = data::parse_dataset(&a.input)?;
    let mode = match a.embedder {
        EmbedderKind::Mock => EmbedMode::Mock,
        EmbedderKind::Remote => EmbedMode::Remote,
    };
    let cfg = EmbedderConfig {
        mode,
        d_emb: a.d_emb,
        remote_endpoint: a.endpoint.clone(),
        cache_dir: std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from),
        ..Default::default()
    };
    Embedder::new(cfg)?.embed_dataset(&mut records)?;
    let fit_on = match &a.split {
        Some(f) => {
            if f.len() != 3 {
                return Err(invalid("--split takes three fractions: train,valid,test"));
            }
            let spec = SplitSpec {
                train_frac: f[0],
                valid_frac: f[1],
                test_frac: f[2],
                seed: a.split_seed,
                temporal: a.temporal,
                ..Default::default()
            };
            let split = data::split_dataset(&records, &spec)?;
            for (name, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
                data::write_dataset(with_suffix(&a.out, &format!(".{name}.jsonl")), part)?;
            }
            split.train
        }
        None => records.clone(),
    };
    let scaler = fit_scaler(&fit_on)?;
    data::write_dataset(&a.out, &records)?;
    scaler.save(a.scaler_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".scaler.json")))?;
    info!("ingested {} companies", records.len());
    Ok(())
}

/// Training and validation sets prepared with a shared scaler.
fn load_training(
    train: &Path,
    valid: Option<&Path>,
    scaler: Option<&Path>,
) -> Result<(Vec<PreparedCompany>, Vec<PreparedCompany>, ScalerManifest)> {
    let train_records = data::parse_dataset(train)?;
    let scaler = match scaler {
        Some(p) => ScalerManifest::load(p)?,
        None => fit_scaler(&train_records)?,
    };
    let train = prepare_all(&train_records, &scaler)?;
    let valid = match valid {
        Some(p) => prepare_all(&data::parse_dataset(p)?, &scaler)?,
        None => Vec::new(),
    };
    Ok((train, valid, scaler))
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let (train, valid, scaler) = load_training(&a.train, a.valid.as_deref(), a.scaler.as_deref())?;
    let fit = em_fit(&train, &valid, &scaler, &cfg)?;
    fit.checkpoint.save(&a.out)?;
    write_history(a.history.clone().unwrap_or_else(|| with_suffix(&a.out, ".history.csv")), &fit.history)?;
    info!("best round {} of {}", fit.best_round, fit.history.len() / 2);
    Ok(())
}

fn run_predict(a: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let companies = prepare_all(&data::parse_dataset(&a.data)?, &ck.scaler)?;
    let opts = PredictOptions {
        band_samples: a.band_samples,
        band_seed: a.band_seed,
        literal_ranges: ck.config.literal_ranges,
    };
    let trajectories = predict_all(&companies, &ck.model, &opts)?;
    data::write_jsonl(&a.out, &trajectories)
}

/// Scores and labels for trajectories, matched to the truth file by company id.
fn scored(
    trajectories: &[BeliefTrajectory],
    labels: &HashMap<String, u8>,
    at_call: Option<usize>,
) -> Result<(Vec<u8>, Vec<f64>)> {
    trajectories
        .iter()
        .map(|t| {
            let y = *labels
                .get(&t.company_id)
                .ok_or_else(|| invalid(format!("company {} has no label in the truth file", t.company_id)))?;
            let s = match at_call {
                Some(l) => t.rate_at(l),
                None => t.final_rate(),
            };
            if !s.is_finite() {
                return Err(invalid(format!("company {} has an empty trajectory", t.company_id)));
            }
            Ok((y, s))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    if a.at_call == Some(0) {
        return Err(invalid("--at-call is 1-based"));
    }
    let labels: HashMap<String, u8> = data::parse_dataset(&a.truth)?
        .into_iter()
        .map(|r| (r.company_id, r.label))
        .collect();
    let pred: Vec<BeliefTrajectory> = data::read_jsonl(&a.pred)?;
    let (y, scores) = scored(&pred, &labels, a.at_call)?;
    let threshold = match (&a.tune_on, a.threshold) {
        (Some(p), _) => {
            let tune: Vec<BeliefTrajectory> = data::read_jsonl(p)?;
            let (ty, ts) = scored(&tune, &labels, a.at_call)?;
            tune_threshold(&ts, &ty)?
        }
        (None, Some(t)) => t,
        (None, None) => 0.5,
    };
    let cost: CostModel = match &a.cost_model {
        Some(p) => serde_json::from_slice(&read(p)?)?,
        None => CostModel::default(),
    };
    let report = evaluate(&y, &scores, threshold, &cost)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    match &a.out {
        Some(p) => write_atomic(p, &json),
        None => {
            print!("{}", String::from_utf8_lossy(&json));
            Ok(())
        }
    }
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let base = a.flags.resolve()?;
    let grid: SweepGrid = serde_json::from_slice(&read(&a.grid)?)?;
    let (train, valid, scaler) = load_training(&a.train, a.valid.as_deref(), a.scaler.as_deref())?;
    let rows = sweep(&grid, &base, &train, &valid, &scaler)?;
    write_atomic(&a.out, sweep_csv(&rows)?.as_bytes())
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }
}

fn run_attention(a: &AttentionArgs) -> Result<()> {
    let trajectories: Vec<BeliefTrajectory> = data::read_jsonl(&a.trajectories)?;
    let labels: Option<HashMap<String, u8>> = match &a.data {
        Some(p) => Some(
            data::parse_dataset(p)?
                .into_iter()
                .map(|r| (r.company_id, r.label))
                .collect(),
        ),
        None => None,
    };
    // (group, key, label) → mean; label "all" plus the company's label when known
    let mut table: BTreeMap<(&'static str, String, String), Mean> = BTreeMap::new();
    for t in &trajectories {
        let Some(last) = t.entries.last() else { continue };
        let mut cohorts = vec!["all".to_string()];
        if let Some(labels) = &labels {
            let y = labels
                .get(&t.company_id)
                .ok_or_else(|| invalid(format!("company {} is missing from --data", t.company_id)))?;
            cohorts.push(y.to_string());
        }
        if last.status_attention.len() != t.entries.len() {
            return Err(invalid(format!("company {}: attention does not cover every call", t.company_id)));
        }
        for (entry, &w) in t.entries.iter().zip(&last.status_attention) {
            let expert = serde_json::to_value(entry.expert_type)?;
            let expert = expert.as_str().unwrap_or_default().to_string();
            for c in &cohorts {
                table.entry(("expert_type", expert.clone(), c.clone())).or_default().add(w);
                table
                    .entry(("call_index", format!("{:03}", entry.call_index), c.clone()))
                    .or_default()
                    .add(w);
                for (k, &x) in entry.exchange_attention.iter().enumerate() {
                    table.entry(("exchange_index", format!("{:03}", k + 1), c.clone())).or_default().add(x);
                }
            }
        }
    }
    let mut csv = String::from("group,key,label,mean_attention,n\n");
    for ((group, key, label), m) in &table {
        let key = key.trim_start_matches('0');
        let _ = writeln!(csv, "{group},{key},{label},{},{}", m.sum / m.n as f64, m.n);
    }
    write_atomic(&a.out, csv.as_bytes())
}

fn init_logging(log_file: Option<&Path>) -> Result<()> {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    match log_file {
        Some(p) => {
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| Error::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
            builder.target(env_logger::Target::Pipe(Box::new(file)));
        }
        None => {
            builder.format_timestamp(None);
        }
    }
    let _ = builder.try_init();
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    init_logging(cli.log_file.as_deref())?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| invalid(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Ingest(a) => run_ingest(a),
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::AttentionReport(a) => run_attention(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } | Error::Remote { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
