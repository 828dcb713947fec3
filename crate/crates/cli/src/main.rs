//! `stylecraft` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 language-model error,
//! 4 training divergence.

mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stylecraft::clips::{idm_rollout, BookRequest, Clip, ComparisonBook};
use stylecraft::idm::{calibrate_detailed, spacing_rmse, CalibrationConfig, IdmParams};
use stylecraft::llm::{connect, Backend, LanguageModel};
use stylecraft::orchestrator::{
    evaluate_policy, run_command, seed_database, NoObserver, PipelineData, PipelineError, UserCommand,
};
use stylecraft::rewarddsl::{parse_source, RewardProgram};
use stylecraft::rl::{ppo_train, rollout, ActionMode, PolicyParams, RlError};
use stylecraft::styledb::StyleDatabase;
use stylecraft::trajdata::{generate_synthetic, load_events, split_train_test, write_events, Dataset, SplitConfig};

use config::FileConfig;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Llm(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Llm(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Llm(m) | CliError::Diverged(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn pipeline_err(e: PipelineError) -> CliError {
    match e {
        PipelineError::Llm { .. } | PipelineError::Verdict { .. } => CliError::Llm(e.to_string()),
        PipelineError::Config(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "stylecraft", version, about = "Turn natural-language driving commands into car-following policies")]
struct Cli {
    /// TOML config file; flags override its values, which override built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory holding events, splits, the style database and study files.
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
    /// Worker threads for parallel seeds and candidates (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic car-following dataset.
    Synth(SynthArgs),
    /// Split events into train and test sets.
    Split(SplitArgs),
    /// Train, evaluate and store the eight seed styles.
    SeedDb(SeedDbArgs),
    /// Run one command through the pipeline.
    Run(RunArgs),
    /// Train a policy for a reward file.
    Train(TrainArgs),
    /// Evaluate a stored policy on the test set and print its statistics.
    Eval(EvalArgs),
    /// Fit IDM parameters to the training events.
    CalibrateIdm(CalibrateArgs),
    /// Build an anonymized policy-versus-IDM comparison batch.
    MakeComparisons(ComparisonArgs),
    /// Serve the HTTP API and the study UI.
    Serve(ServeArgs),
    /// Export the replay of one policy on one event.
    ExportClip(ExportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    events: usize,
    /// Sampling step, 0.1 or 0.04 s.
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Event length in seconds.
    #[arg(long, default_value_t = 30.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (default: <data-dir>/events.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Input CSV (default: <data-dir>/events.csv).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// Environment steps per seed.
    #[arg(long)]
    steps: Option<usize>,
    /// Independent training seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Base seed; seed i trains with seed + i.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Scripted,
    Live,
}

#[derive(Args, Debug, Clone)]
struct LlmFlags {
    /// Language model backend; live reads its key from the configured environment variable.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Scripted rules JSON (default: built-in rules).
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SeedDbArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// The driving command, e.g. "Drive aggressively."
    text: String,
    /// Styles retrieved for re-ranking (default 3).
    #[arg(long)]
    k: Option<usize>,
    /// Candidate rewards generated and trained (default 2; 0 answers with retrieval only).
    #[arg(long)]
    m: Option<usize>,
    /// Metrics the alignment judge compares (default 2).
    #[arg(long)]
    n: Option<usize>,
    /// Seconds allowed for candidate training.
    #[arg(long)]
    budget: Option<f64>,
    /// Command timestamp; defaults to 0 in scripted mode so runs replay exactly.
    #[arg(long)]
    received_at: Option<u64>,
    /// Leave the stored database untouched.
    #[arg(long)]
    dry_run: bool,
    /// Also write the outcome JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    reward: PathBuf,
    /// Policy output base path; writes <base>.json and <base>.f32.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Policy base path as written by `train`.
    #[arg(long)]
    policy: PathBuf,
    /// Reward used for the rollouts' reward column (does not affect statistics).
    #[arg(long)]
    reward: Option<PathBuf>,
    /// Test CSV (default: <data-dir>/test.csv).
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ComparisonArgs {
    /// Command to compare on; repeatable. Each must already be answered by a stored style.
    #[arg(long = "command", required = true)]
    commands: Vec<String>,
    /// Record answering every command instead of looking it up.
    #[arg(long)]
    record: Option<String>,
    /// Test events sampled per command.
    #[arg(long, default_value_t = 20)]
    events: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Built UI bundle served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Export the calibrated IDM driver instead of a policy.
    #[arg(long, conflicts_with = "policy")]
    idm: bool,
    #[arg(long)]
    event: String,
    /// Events CSV holding the event (default: <data-dir>/test.csv).
    #[arg(long)]
    events_file: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Ctx {
    data_dir: PathBuf,
    file: FileConfig,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.data_dir.join(name)
    }

    fn load(&self, explicit: Option<&PathBuf>, name: &str) -> Result<Dataset> {
        let p = explicit.cloned().unwrap_or_else(|| self.path(name));
        load_events(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    }

    fn train_cfg(&self, f: &TrainFlags) -> Result<stylecraft::rl::TrainConfig> {
        let mut cfg = self.file.pipeline.train_cfg.clone();
        if let Some(s) = f.steps {
            cfg.total_steps = s;
        }
        if let Some(s) = f.seeds {
            cfg.n_seeds = s;
        }
        if let Some(s) = f.seed {
            cfg.seed = s;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn llm(&self, f: &LlmFlags) -> Result<Box<dyn LanguageModel>> {
        connect(&self.model_cfg(f)).map_err(|e| CliError::Llm(e.to_string()))
    }

    fn model_cfg(&self, f: &LlmFlags) -> stylecraft::llm::ModelConfig {
        let mut cfg = self.file.llm.clone();
        match f.mode {
            Some(Mode::Scripted) => cfg.backend = Backend::Scripted,
            Some(Mode::Live) => cfg.backend = Backend::Live,
            None => {}
        }
        if let Some(r) = &f.rules {
            cfg.rules_path = Some(r.clone());
        }
        cfg
    }

    fn db(&self) -> Result<StyleDatabase> {
        let dir = self.path("db");
        StyleDatabase::load(&dir).map_err(|e| CliError::Data(format!("{}: {e} (run `stylecraft seed-db` first)", dir.display())))
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<String> {
    let s = serde_json::to_string_pretty(v).map_err(data_err)?;
    println!("{s}");
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn load_reward(path: &Path) -> Result<RewardProgram> {
    let src = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let expr = parse_source(&src).map_err(|d| CliError::Data(format!("{}: {d}", path.display())))?;
    Ok(RewardProgram::compile(&expr))
}

fn rl_err(e: RlError) -> CliError {
    match e {
        RlError::Config(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    }
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let ds = generate_synthetic(a.events, a.dt, a.horizon, a.seed).map_err(data_err)?;
    let out = a.out.clone().unwrap_or_else(|| ctx.path("events.csv"));
    ensure_dir(out.parent().unwrap_or(Path::new(".")))?;
    write_events(&out, &ds).map_err(data_err)?;
    eprintln!("wrote {} events to {}", ds.len(), out.display());
    Ok(())
}

fn cmd_split(ctx: &Ctx, a: &SplitArgs) -> Result<()> {
    let ds = ctx.load(a.input.as_ref(), "events.csv")?;
    let cfg = SplitConfig {
        test_fraction: a.test_fraction.or(ctx.file.split.test_fraction).unwrap_or(0.15),
        rng_seed: a.seed.or(ctx.file.split.seed).unwrap_or(0),
    };
    let (train, test) = split_train_test(&ds, &cfg).map_err(data_err)?;
    ensure_dir(&ctx.data_dir)?;
    write_events(ctx.path("train.csv"), &train).map_err(data_err)?;
    write_events(ctx.path("test.csv"), &test).map_err(data_err)?;
    println!("{} {}", train.len(), test.len());
    eprintln!("train {} / test {} events in {}", train.len(), test.len(), ctx.data_dir.display());
    Ok(())
}

fn cmd_seed_db(ctx: &Ctx, a: &SeedDbArgs) -> Result<()> {
    let train = ctx.load(None, "train.csv")?;
    let test = ctx.load(None, "test.csv")?;
    let cfg = ctx.train_cfg(&a.train)?;
    let llm = ctx.llm(&a.llm)?;
    eprintln!("training 8 seed styles, {} steps x {} seeds each", cfg.total_steps, cfg.n_seeds);
    let mut db = seed_database(llm.as_ref(), &train, &test, &cfg).map_err(pipeline_err)?;
    db.persist(ctx.path("db")).map_err(data_err)?;
    let ids: Vec<&str> = db.active().map(|r| r.id.as_str()).collect();
    println!("{}", ids.join("\n"));
    Ok(())
}

fn cmd_run(ctx: &Ctx, a: &RunArgs) -> Result<()> {
    let mut pcfg = ctx.file.pipeline.clone();
    pcfg.train_cfg = ctx.train_cfg(&a.train)?;
    if let Some(k) = a.k {
        pcfg.k = k;
    }
    if let Some(m) = a.m {
        pcfg.m = m;
    }
    if let Some(n) = a.n {
        pcfg.n = n;
    }
    if a.budget.is_some() {
        pcfg.training_budget_s = a.budget;
    }
    pcfg.validate().map_err(pipeline_err)?;
    let model_cfg = ctx.model_cfg(&a.llm);
    let llm = connect(&model_cfg).map_err(|e| CliError::Llm(e.to_string()))?;
    let received_at = a.received_at.unwrap_or(match model_cfg.backend {
        Backend::Scripted => 0,
        Backend::Live => {
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
        }
    });
    let mut db = ctx.db()?;
    let data = PipelineData { train: Arc::new(ctx.load(None, "train.csv")?), test: ctx.load(None, "test.csv")? };
    let cmd = UserCommand::new(a.text.clone(), received_at);
    let outcome = run_command(&cmd, &mut db, &data, llm.as_ref(), &pcfg, &NoObserver).map_err(|e| {
        let mut err = pipeline_err(e);
        if let (CliError::Llm(m), Some(audit)) = (&mut err, &model_cfg.audit_path) {
            m.push_str(&format!(" (audit log: {})", audit.display()));
        }
        err
    })?;
    if !a.dry_run {
        db.persist(ctx.path("db")).map_err(data_err)?;
    }
    let json = outcome.to_json();
    println!("{json}");
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    eprintln!("chosen style: {}", outcome.chosen_record_id);
    Ok(())
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let reward = load_reward(&a.reward)?;
    let cfg = ctx.train_cfg(&a.train)?;
    let train = ctx.load(None, "train.csv")?;
    let result = ppo_train(&reward, &train, &cfg).map_err(rl_err)?;
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        result.best_policy.save(out).map_err(rl_err)?;
    }
    print_json(&result)?;
    if result.diverged() {
        return Err(CliError::Diverged("every training batch of the best seed saturated the action bounds".into()));
    }
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let policy = PolicyParams::load(&a.policy).map_err(rl_err)?;
    let reward = match &a.reward {
        Some(p) => load_reward(p)?,
        None => RewardProgram::compile(&parse_source("0").expect("constant parses")),
    };
    let test = ctx.load(a.test.as_ref(), "test.csv")?;
    let subject = a.policy.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report = evaluate_policy(&policy, &reward, &test, &subject).map_err(pipeline_err)?;
    print_json(&report)?;
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    params: IdmParams,
    train_rmse: f64,
    test_rmse: f64,
    default_test_rmse: f64,
}

fn cmd_calibrate(ctx: &Ctx, a: &CalibrateArgs) -> Result<()> {
    let train = ctx.load(None, "train.csv")?;
    let test = ctx.load(None, "test.csv")?;
    let mut cfg = CalibrationConfig::default();
    if let Some(i) = a.iterations {
        cfg.iterations = i;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let cal = calibrate_detailed(&train, &cfg).map_err(data_err)?;
    let report = CalibrationReport {
        params: cal.params,
        train_rmse: cal.rmse,
        test_rmse: spacing_rmse(&cal.params, &test).0,
        default_test_rmse: spacing_rmse(&IdmParams::default(), &test).0,
    };
    let json = print_json(&report)?;
    write_file(&ctx.path("idm.json"), &json)?;
    Ok(())
}

fn idm_baseline(ctx: &Ctx) -> Result<IdmParams> {
    let p = ctx.path("idm.json");
    if !p.exists() {
        eprintln!("note: {} not found, using default IDM parameters", p.display());
        return Ok(IdmParams::default());
    }
    let raw = std::fs::read_to_string(&p).map_err(data_err)?;
    let v: serde_json::Value = serde_json::from_str(&raw).map_err(data_err)?;
    serde_json::from_value(v.get("params").cloned().unwrap_or(v)).map_err(data_err)
}

fn cmd_comparisons(ctx: &Ctx, a: &ComparisonArgs) -> Result<()> {
    let db = ctx.db()?;
    let test = ctx.load(None, "test.csv")?;
    let mut requests = Vec::new();
    let llm = if a.record.is_none() { Some(ctx.llm(&a.llm)?) } else { None };
    for c in &a.commands {
        let record_id = match (&a.record, &llm) {
            (Some(r), _) => r.clone(),
            (None, Some(llm)) => {
                let q = llm.embed(c).map_err(|e| CliError::Llm(e.to_string()))?;
                let hit = db.fuzzy_lookup(&q, llm.fuzzy_threshold()).map_err(data_err)?;
                hit.map(|(r, _)| r.id.clone()).ok_or_else(|| {
                    CliError::Data(format!("no stored style answers \"{c}\"; run it first or pass --record"))
                })?
            }
            (None, None) => unreachable!("a model is connected when no record is given"),
        };
        requests.push(BookRequest { command: c.clone(), record_id });
    }
    let book = ComparisonBook::generate(&db, &requests, &test, &idm_baseline(ctx)?, a.events, a.seed).map_err(data_err)?;
    ensure_dir(&ctx.data_dir)?;
    book.save(&ctx.path("comparisons.json")).map_err(data_err)?;
    println!("{}", book.comparisons.len());
    eprintln!("wrote {} comparisons to {}", book.comparisons.len(), ctx.path("comparisons.json").display());
    Ok(())
}

fn cmd_serve(ctx: &Ctx, a: &ServeArgs) -> Result<()> {
    use stylecraft_service::{router, serve, AppState, PipelineHost};
    let host = match (ctx.db(), ctx.load(None, "train.csv"), ctx.load(None, "test.csv")) {
        (Ok(db), Ok(train), Ok(test)) => Some(PipelineHost {
            db,
            db_dir: Some(ctx.path("db")),
            data: PipelineData { train: Arc::new(train), test },
            llm: connect(&ctx.model_cfg(&a.llm)).map_err(|e| e.to_string()),
            cfg: ctx.file.pipeline.clone(),
        }),
        (db, train, test) => {
            let why = [db.err(), train.err(), test.err()].into_iter().flatten().map(|e| e.message().to_string());
            eprintln!("note: /api/commands disabled: {}", why.collect::<Vec<_>>().join("; "));
            None
        }
    };
    ensure_dir(&ctx.data_dir)?;
    let state = AppState::from_dir(&ctx.data_dir, host).map_err(CliError::Data)?;
    let addr: SocketAddr =
        format!("{}:{}", a.host, a.port).parse().map_err(|e| CliError::Usage(format!("bad address: {e}")))?;
    let app = router(state, a.static_dir.as_deref());
    let rt = tokio::runtime::Runtime::new().map_err(data_err)?;
    eprintln!("listening on http://{addr}");
    rt.block_on(serve(addr, app)).map_err(data_err)
}

fn cmd_export(ctx: &Ctx, a: &ExportArgs) -> Result<()> {
    let ds = ctx.load(a.events_file.as_ref(), "test.csv")?;
    let event = ds.get(&a.event).ok_or_else(|| CliError::Data(format!("no event `{}`", a.event)))?;
    let clip = if a.idm {
        let r = idm_rollout(&idm_baseline(ctx)?, event).map_err(data_err)?;
        Clip::from_rollout(format!("{}-idm", a.event), &r, "baseline:idm")
    } else {
        let base = a.policy.as_ref().ok_or_else(|| CliError::Usage("pass --policy or --idm".into()))?;
        let policy = PolicyParams::load(base).map_err(rl_err)?;
        let zero = RewardProgram::compile(&parse_source("0").expect("constant parses"));
        let r = rollout(&policy, &zero, event, ActionMode::Mean, 0).map_err(data_err)?;
        Clip::from_rollout(format!("{}-policy", a.event), &r, base.display().to_string())
    };
    let json = print_json(&clip)?;
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(CliError::Usage)?,
        None => FileConfig::default(),
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().map_err(data_err)?;
    }
    let ctx = Ctx { data_dir: cli.data_dir, file };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::SeedDb(a) => cmd_seed_db(&ctx, a),
        Command::Run(a) => cmd_run(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::CalibrateIdm(a) => cmd_calibrate(&ctx, a),
        Command::MakeComparisons(a) => cmd_comparisons(&ctx, a),
        Command::Serve(a) => cmd_serve(&ctx, a),
        Command::ExportClip(a) => cmd_export(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
