//! `drlir`: runs the recommendation pipeline stage by stage inside a run
//! directory.

mod manifest;

use clap::{Args, Parser, Subcommand};
use drlir_core::agent::AgentNets;
use drlir_core::ann::{Forest, ForestParams};
use drlir_core::data::{self, PreparedData, PrepareOptions, RatingEvent, RatingFormat};
use drlir_core::diversify::recommend;
use drlir_core::eval::{self, ActorPolicy, EvalMeta, EvalReport, EvalSettings, PeAblation};
use drlir_core::pipeline::{derive_seed, PipelineConfig};
use drlir_core::pmf::{self, EmbeddingModel};
use drlir_core::train::{EpisodeLength, TrainConfig};
use log::{info, warn};
use manifest::{input, sha256_hex, Kind, RunManifest};
use serde::Serialize;
use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const DEFAULT_SEED: u64 = 42;
const EVENTS: &str = "events.csv";
const MODEL: &str = "model.bin";
const MODEL_IDS: &str = "model.ids.json";
const INDEX: &str = "index.bin";

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or a missing input artifact. Exit code 2.
    Usage(String),
    /// Input or configuration failed validation. Exit code 1.
    Invalid(String),
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        CliError::Usage(m.into())
    }

    pub fn invalid(m: impl Into<String>) -> Self {
        CliError::Invalid(m.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Invalid(m) => f.write_str(m),
        }
    }
}

impl From<drlir_core::Error> for CliError {
    fn from(e: drlir_core::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "drlir", version, about = "Diversity-aware reinforcement learning recommender")]
struct Cli {
    /// Directory holding every artifact of a run.
    #[arg(long, global = true, env = "DRLIR_RUN_DIR", default_value = "run")]
    run_dir: PathBuf,
    /// Master seed; each stage derives its own from it.
    #[arg(long, global = true, env = "DRLIR_SEED")]
    seed: Option<u64>,
    /// Replace artifacts even if they changed since they were recorded.
    #[arg(long, global = true, env = "DRLIR_FORCE")]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a raw ratings file into the run's event log.
    Ingest {
        #[arg(long, env = "DRLIR_INPUT")]
        input: PathBuf,
        /// ml100k (tab separated) or ml1m (`::` separated).
        #[arg(long, default_value = "ml100k")]
        format: RatingFormat,
    },
    /// Train the PMF user and item embeddings.
    TrainEmbeddings {
        #[arg(long, env = "DRLIR_DIM", default_value_t = 100)]
        dim: usize,
        #[arg(long, env = "DRLIR_PMF_EPOCHS", default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.02)]
        l2: f64,
        /// Fit only ratings of 3 and above instead of all ratings.
        #[arg(long)]
        pmf_positive_only: bool,
    },
    /// Build the angular nearest-neighbour forest over item embeddings.
    BuildIndex {
        #[arg(long, default_value_t = 5)]
        trees: usize,
        #[arg(long, default_value_t = 30)]
        leaf_size: usize,
    },
    /// Train the actor-critic agent against the simulated user.
    TrainAgent {
        /// `key = value` file of training settings; flags override it.
        #[arg(long, env = "DRLIR_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "DRLIR_EPISODES")]
        episodes: Option<usize>,
        #[arg(long)]
        no_positional_encoding: bool,
        /// Use this episode length instead of sampling one per episode.
        #[arg(long = "fixed-T", value_name = "T")]
        fixed_t: Option<usize>,
        /// Keep items already in the user state as candidates.
        #[arg(long)]
        allow_repeats: bool,
    },
    /// Roll the greedy policy for every test user and write metric reports.
    Evaluate {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, env = "DRLIR_MAX_USERS")]
        max_users: Option<usize>,
    },
    /// Print one diversified list for a user as CSV.
    Recommend {
        #[arg(long)]
        user: u32,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        candidates: Option<usize>,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct PolicyArgs {
    /// Encode states without positional encodings. Uses the matching
    /// checkpoint when one was trained that way.
    #[arg(long)]
    no_positional_encoding: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Settings file; defaults to the one saved next to the checkpoint.
    #[arg(long, env = "DRLIR_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    allow_repeats: bool,
}

struct Ctx {
    dir: PathBuf,
    seed: u64,
    seed_given: bool,
    force: bool,
    manifest: RunManifest,
}

impl Ctx {
    fn put(&mut self, name: &str, rel: &str, kind: Kind, bytes: &[u8], stage: &str, hash: &str) -> CliResult<()> {
        self.manifest.guard(&self.dir, rel, self.force)?;
        self.manifest.put(&self.dir, name, rel, kind, bytes, stage, hash)
    }
}

fn suffix(use_pe: bool) -> &'static str {
    if use_pe {
        ""
    } else {
        "-no-pe"
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::usage(format!("no such file {}", path.display())));
    }
    String::from_utf8(read(path)?).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> drlir_core::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn load_events(dir: &Path) -> CliResult<Vec<RatingEvent>> {
    let path = input(dir, EVENTS, "ingest")?;
    Ok(data::read_events_csv(read(&path)?.as_slice())?)
}

fn load_model(dir: &Path) -> CliResult<(EmbeddingModel<f64>, String)> {
    let bytes = read(&input(dir, MODEL, "train-embeddings")?)?;
    let ids = read_text(&input(dir, MODEL_IDS, "train-embeddings")?)?;
    Ok((EmbeddingModel::from_bytes(&bytes, &ids)?, sha256_hex(&bytes)))
}

fn load_forest(dir: &Path) -> CliResult<(Forest<f64>, String)> {
    let bytes = read(&input(dir, INDEX, "build-index")?)?;
    Ok((Forest::from_bytes(&bytes)?, sha256_hex(&bytes)))
}

fn ingest(ctx: &mut Ctx, path: &Path, format: RatingFormat) -> CliResult<()> {
    if !path.exists() {
        return Err(CliError::usage(format!("no such input file {}", path.display())));
    }
    let events = data::parse_ratings(path, format)?;
    let users: HashSet<u32> = events.iter().map(|e| e.user).collect();
    let items: HashSet<u32> = events.iter().map(|e| e.item).collect();
    info!("{} ratings from {} users on {} items", events.len(), users.len(), items.len());
    let bytes = csv_bytes(|b| data::write_events_csv(b, &events))?;
    let hash = sha256_hex(format!("ingest {format:?}").as_bytes());
    ctx.put("events", EVENTS, Kind::Events, &bytes, "ingest", &hash)
}

#[derive(Serialize)]
struct EmbeddingReport {
    dim: usize,
    epochs: usize,
    positive_only: bool,
    final_loss: Option<f64>,
    train_rmse: f64,
    test_rmse: f64,
    test_ratings: usize,
}

fn train_embeddings(ctx: &mut Ctx, dim: usize, epochs: usize, lr: f64, l2: f64, positive_only: bool) -> CliResult<()> {
    let events = load_events(&ctx.dir)?;
    let prepared = data::prepare(&events, &PrepareOptions::default());
    let mut hp = pmf::PmfHyperparams::with_seed(derive_seed(ctx.seed, "train-embeddings"));
    hp.epochs = epochs;
    hp.learning_rate = lr;
    hp.l2_user = l2;
    hp.l2_item = l2;
    let fit_on = if positive_only {
        &prepared.positives.train
    } else {
        &prepared.ratings.train
    };
    let fit = pmf::train_pmf::<f64>(fit_on, dim, &hp)?;
    // report what a reload sees, which is the f32 rounding of the factors
    let model = fit.model.quantized();
    let flat = |split: &std::collections::BTreeMap<u32, data::UserHistory>| -> Vec<RatingEvent> {
        split.values().flat_map(|h| h.events.iter().copied()).collect()
    };
    let (train_rmse, _) = pmf::rmse(&model, &flat(&prepared.ratings.train));
    let (test_rmse, test_ratings) = pmf::rmse(&model, &flat(&prepared.ratings.test));
    info!("held-out rmse {test_rmse:.4} over {test_ratings} ratings");
    let hash = sha256_hex(format!("{hp:?} dim={dim} positive_only={positive_only}").as_bytes());
    let report = EmbeddingReport {
        dim,
        epochs,
        positive_only,
        final_loss: fit.epoch_losses.last().copied(),
        train_rmse,
        test_rmse,
        test_ratings,
    };
    ctx.put("model", MODEL, Kind::Model, &model.to_bytes(), "train-embeddings", &hash)?;
    ctx.put("model_ids", MODEL_IDS, Kind::IdMap, model.id_map_json().as_bytes(), "train-embeddings", &hash)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    ctx.put("embeddings_report", "embeddings.json", Kind::Json, json.as_bytes(), "train-embeddings", &hash)
}

fn build_index(ctx: &mut Ctx, trees: usize, leaf_size: usize) -> CliResult<()> {
    let (model, model_sha) = load_model(&ctx.dir)?;
    let params = ForestParams {
        n_trees: trees,
        leaf_size,
        seed: derive_seed(ctx.seed, "build-index"),
    };
    let forest = drlir_core::pipeline::build_index(&model, &params)?;
    info!("indexed {} items in {trees} trees", forest.len());
    let hash = sha256_hex(format!("{params:?} model={model_sha}").as_bytes());
    ctx.put("index", INDEX, Kind::Index, &forest.to_bytes(), "build-index", &hash)
}

/// Defaults for the seed, then the file, then explicit flags.
fn base_train_config(ctx: &Ctx, file: Option<&Path>) -> CliResult<TrainConfig> {
    let mut cfg = PipelineConfig::with_seed(ctx.seed).train;
    if let Some(path) = file {
        cfg.apply_text(&read_text(path)?)?;
    }
    if ctx.seed_given {
        cfg.seed = derive_seed(ctx.seed, "train-agent");
    }
    Ok(cfg)
}

fn prepared(ctx: &Ctx, state_len: usize) -> CliResult<PreparedData> {
    let events = load_events(&ctx.dir)?;
    Ok(data::prepare(
        &events,
        &PrepareOptions {
            state_len,
            ..PrepareOptions::default()
        },
    ))
}

fn train_agent(
    ctx: &mut Ctx,
    config: Option<&Path>,
    episodes: Option<usize>,
    no_pe: bool,
    fixed_t: Option<usize>,
    allow_repeats: bool,
) -> CliResult<()> {
    let mut cfg = base_train_config(ctx, config)?;
    if let Some(e) = episodes {
        cfg.episodes = e;
    }
    if no_pe {
        cfg.use_pe = false;
    }
    if let Some(t) = fixed_t {
        cfg.episode_length = EpisodeLength::Fixed(t);
    }
    if allow_repeats {
        cfg.exclude_state = false;
    }
    cfg.validate()?;
    let (model, model_sha) = load_model(&ctx.dir)?;
    let (forest, index_sha) = load_forest(&ctx.dir)?;
    let data = prepared(ctx, cfg.state_len)?;
    let cfg_text = cfg.to_text();
    let hash = sha256_hex(format!("{cfg_text}model = {model_sha}\nindex = {index_sha}\n").as_bytes());
    let sfx = suffix(cfg.use_pe);
    let (nets, report) = match drlir_core::pipeline::train_agent(&data, &model, &forest, &cfg) {
        Ok(x) => x,
        Err(drlir_core::Error::TrainingAborted {
            episode,
            step,
            reason,
            checkpoint,
        }) => {
            let rel = format!("agent{sfx}.aborted.ckpt");
            ctx.put("aborted_checkpoint", &rel, Kind::Checkpoint, &checkpoint, "train-agent", &hash)?;
            ctx.manifest.save(&ctx.dir)?;
            return Err(CliError::invalid(format!(
                "training aborted at episode {episode}, step {step}: {reason}; last good networks saved to {rel}"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    info!("{} steps, {} updates", report.total_steps, report.updates);
    let tag = |n: &str| format!("{n}{sfx}");
    ctx.put(&tag("checkpoint"), &format!("agent{sfx}.ckpt"), Kind::Checkpoint, &nets.to_checkpoint_bytes(), "train-agent", &hash)?;
    ctx.put(&tag("agent_config"), &format!("agent{sfx}.cfg"), Kind::Config, cfg_text.as_bytes(), "train-agent", &hash)?;
    let episodes_csv = csv_bytes(|b| report.write_episodes_csv(b))?;
    ctx.put(&tag("train_episodes"), &format!("train-episodes{sfx}.csv"), Kind::Csv, &episodes_csv, "train-agent", &hash)?;
    let updates_csv = csv_bytes(|b| report.write_updates_csv(b))?;
    ctx.put(&tag("train_updates"), &format!("train-updates{sfx}.csv"), Kind::Csv, &updates_csv, "train-agent", &hash)?;
    let curve = csv_bytes(|b| eval::write_learning_curve(&report.episode_rewards, 100, b))?;
    ctx.put(&tag("learning_curve"), &format!("learning-curve{sfx}.csv"), Kind::Csv, &curve, "train-agent", &hash)
}

/// Networks and settings for inference, honouring the positional encoding
/// override.
struct LoadedPolicy {
    nets: AgentNets<f64>,
    cfg: TrainConfig,
    use_pe: bool,
    checkpoint_sha: String,
}

fn load_policy(ctx: &Ctx, args: &PolicyArgs) -> CliResult<LoadedPolicy> {
    let use_pe = !args.no_positional_encoding;
    let path = match &args.checkpoint {
        Some(p) if !p.exists() => return Err(CliError::usage(format!("no such checkpoint {}", p.display()))),
        Some(p) => p.clone(),
        None => {
            let own = ctx.dir.join(format!("agent{}.ckpt", suffix(use_pe)));
            if own.exists() {
                own
            } else {
                input(&ctx.dir, "agent.ckpt", "train-agent")?
            }
        }
    };
    let bytes = read(&path)?;
    let nets = AgentNets::<f64>::from_checkpoint_bytes(&bytes)?;
    if nets.use_pe != use_pe {
        warn!(
            "{} was trained {} positional encodings but is evaluated {} them",
            path.display(),
            if nets.use_pe { "with" } else { "without" },
            if use_pe { "with" } else { "without" }
        );
    }
    let sidecar = path.with_extension("cfg");
    let cfg_file = args.config.clone().or_else(|| sidecar.exists().then_some(sidecar));
    let mut cfg = base_train_config(ctx, cfg_file.as_deref())?;
    cfg.state_len = nets.state_len;
    if args.allow_repeats {
        cfg.exclude_state = false;
    }
    Ok(LoadedPolicy {
        nets,
        cfg,
        use_pe,
        checkpoint_sha: sha256_hex(&bytes),
    })
}

fn evaluate(ctx: &mut Ctx, args: &PolicyArgs, steps: usize, max_users: Option<usize>) -> CliResult<()> {
    let p = load_policy(ctx, args)?;
    let (model, model_sha) = load_model(&ctx.dir)?;
    let (forest, index_sha) = load_forest(&ctx.dir)?;
    let data = prepared(ctx, p.cfg.state_len)?;
    let settings = EvalSettings {
        steps,
        state_len: p.cfg.state_len,
        candidates: p.cfg.candidates,
        top_n: p.cfg.top_n,
        lambda: p.cfg.lambda,
        exclude_state: p.cfg.exclude_state,
        max_users,
    };
    // the encoding flag is left out so the paired reports share one hash
    let shared = TrainConfig {
        use_pe: true,
        ..p.cfg.clone()
    };
    let config_hash = sha256_hex(
        format!("{}{settings:?}\nmodel = {model_sha}\nindex = {index_sha}\n", shared.to_text()).as_bytes(),
    );
    let meta = EvalMeta {
        config_hash: config_hash.clone(),
        seed: ctx.seed,
        use_pe: p.use_pe,
        steps_per_user: steps,
        averaging: "per step, then per user, then across users".into(),
    };
    let report = drlir_core::pipeline::evaluate_agent(&data, &model, &forest, &p.nets, &settings, p.use_pe, meta)?;
    let a = &report.aggregate;
    info!(
        "{} users: precision {:.4}, diversity {:.4}, ndcg {:.4}, reward {:.4}",
        report.per_user.len(),
        a.precision,
        a.diversity,
        a.ndcg,
        a.reward
    );
    let hash = sha256_hex(format!("{config_hash} checkpoint={}", p.checkpoint_sha).as_bytes());
    let sfx = suffix(p.use_pe);
    let csv = csv_bytes(|b| report.write_csv(b))?;
    ctx.put(&format!("eval_csv{sfx}"), &format!("eval{sfx}.csv"), Kind::Csv, &csv, "evaluate", &hash)?;
    ctx.put(&format!("eval_json{sfx}"), &format!("eval{sfx}.json"), Kind::Json, report.to_json()?.as_bytes(), "evaluate", &hash)?;
    write_ablation(ctx, &hash)
}

/// Pairs the two reports once both exist for the same settings.
fn write_ablation(ctx: &mut Ctx, hash: &str) -> CliResult<()> {
    let load = |rel: &str| -> CliResult<Option<EvalReport>> {
        let path = ctx.dir.join(rel);
        if !path.exists() {
            return Ok(None);
        }
        serde_json::from_slice(&read(&path)?)
            .map(Some)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    };
    let (Some(with_pe), Some(without_pe)) = (load("eval.json")?, load("eval-no-pe.json")?) else {
        return Ok(());
    };
    if with_pe.meta.config_hash != without_pe.meta.config_hash {
        warn!("eval.json and eval-no-pe.json come from different settings; not pairing them");
        return Ok(());
    }
    let ab = PeAblation { with_pe, without_pe };
    for (name, a, b, d) in ab.deltas() {
        info!("{name}: with {a:.4}, without {b:.4}, delta {d:+.4}");
    }
    let csv = csv_bytes(|b| ab.write_csv(b))?;
    ctx.put("pe_ablation", "pe-ablation.csv", Kind::Csv, &csv, "evaluate", hash)
}

fn recommend_for(
    ctx: &Ctx,
    user: u32,
    top_n: Option<usize>,
    candidates: Option<usize>,
    args: &PolicyArgs,
    output: Option<&Path>,
) -> CliResult<()> {
    let p = load_policy(ctx, args)?;
    let top_n = top_n.unwrap_or(p.cfg.top_n);
    let candidates = candidates.unwrap_or(p.cfg.candidates);
    if top_n == 0 || candidates < top_n {
        return Err(CliError::invalid(format!(
            "need 0 < top-n <= candidates, got top-n {top_n} and candidates {candidates}"
        )));
    }
    let (model, _) = load_model(&ctx.dir)?;
    let (forest, _) = load_forest(&ctx.dir)?;
    let events = load_events(&ctx.dir)?;
    let positives = data::build_histories(&data::filter_positive(&events, 3));
    let n = p.cfg.state_len;
    let rows: Vec<usize> = positives
        .get(&user)
        .ok_or(drlir_core::Error::UnknownUser(user))?
        .items()
        .filter_map(|i| model.item_row(i).ok())
        .collect();
    if rows.len() < n {
        return Err(CliError::invalid(format!(
            "user {user} has {} positive ratings, the state needs {n}",
            rows.len()
        )));
    }
    let state = drlir_core::state::UserState::new(rows[rows.len() - n..].to_vec())?;
    let settings = EvalSettings {
        state_len: n,
        candidates,
        top_n,
        ..EvalSettings::default()
    };
    let policy = ActorPolicy::new(&p.nets, &model, &forest, &settings, p.use_pe)?;
    let action = policy.proto_action(&state)?;
    let exclude: HashSet<usize> = if p.cfg.exclude_state {
        state.items().iter().copied().collect()
    } else {
        HashSet::new()
    };
    let list = recommend(&action, &forest, candidates, top_n, &exclude)?;
    let mut out = String::from("rank,item_id,tde,angular_distance\n");
    for (rank, it) in list.items.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", rank + 1, model.item_id(it.index), it.tde, it.distance));
    }
    match output {
        Some(path) => manifest::write_file(path, out.as_bytes()),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let mut ctx = Ctx {
        manifest: RunManifest::load_or_new(&cli.run_dir, seed)?,
        dir: cli.run_dir,
        seed,
        seed_given: cli.seed.is_some(),
        force: cli.force,
    };
    if !matches!(cli.command, Command::Ingest { .. }) {
        match ctx.manifest.verify(&ctx.dir) {
            Err(e) if ctx.force => warn!("{e}"),
            other => other?,
        }
    }
    match &cli.command {
        Command::Ingest { input, format } => ingest(&mut ctx, input, *format)?,
        Command::TrainEmbeddings {
            dim,
            epochs,
            learning_rate,
            l2,
            pmf_positive_only,
        } => train_embeddings(&mut ctx, *dim, *epochs, *learning_rate, *l2, *pmf_positive_only)?,
        Command::BuildIndex { trees, leaf_size } => build_index(&mut ctx, *trees, *leaf_size)?,
        Command::TrainAgent {
            config,
            episodes,
            no_positional_encoding,
            fixed_t,
            allow_repeats,
        } => train_agent(
            &mut ctx,
            config.as_deref(),
            *episodes,
            *no_positional_encoding,
            *fixed_t,
            *allow_repeats,
        )?,
        Command::Evaluate {
            policy,
            steps,
            max_users,
        } => evaluate(&mut ctx, policy, *steps, *max_users)?,
        Command::Recommend {
            user,
            top_n,
            candidates,
            policy,
            output,
        } => return recommend_for(&ctx, *user, *top_n, *candidates, policy, output.as_deref()),
    }
    ctx.manifest.save(&ctx.dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
