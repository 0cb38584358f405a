use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hive_nav::goal::Goal;
use hive_nav::memory::{tokenize, MemoryStore};
use hive_nav::mlm::http::{HttpClient, HttpConfig};
use hive_nav::mlm::scripted::ScriptedConfig;
use hive_nav::mlm::stub::{StubMode, StubServer};
use hive_nav::mlm::BackendBundle;
use hive_nav::tasks::{
    default_seeds, run_task, table_markdown, Ablation, SpawnMode, TaskFamily, TaskSpec,
};
use hive_nav::world::{generate_world, Layout, WorldConfig};

const ENDPOINT_VAR: &str = "HIVE_NAV_ENDPOINT";

#[derive(Parser)]
#[command(name = "hive-nav", version, about = "Hierarchical multi-agent navigation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect generated worlds.
    #[command(subcommand)]
    World(WorldCommand),
    /// Inspect a JSONL memory store.
    #[command(subcommand)]
    Memory(MemoryCommand),
    /// Run trials of a task and write summary.json, table.md and trace.jsonl.
    Run(RunArgs),
    /// Serve the scripted backend over HTTP.
    StubServer {
        #[arg(long, default_value_t = 8088)]
        port: u16,
    },
}

#[derive(Subcommand)]
enum WorldCommand {
    /// Print one character per cell.
    Dump {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long, value_enum)]
        layout: Option<LayoutArg>,
        /// World config JSON; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// List stored entries.
    Inspect {
        #[arg(long)]
        file: PathBuf,
    },
    /// Rank entries against a text query.
    Query {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Freeform,
    DiamondGrid16,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Scripted,
    Http,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskFamily>,
    /// Goal file for goal search (implies --task goal-search).
    #[arg(long)]
    goal: Option<PathBuf>,
    /// World config JSON overriding the task's default world.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    agents: usize,
    /// Seed file: a JSON array or whitespace-separated integers.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Number of trials when no seed file is given (seeds 0..N).
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = BackendArg::Scripted)]
    backend: BackendArg,
    /// Endpoint for the http backend; falls back to $HIVE_NAV_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    /// Comma-separated ablations: dm (no dynamic map), ao (no auto-organizing).
    #[arg(long, default_value = "")]
    ablate: String,
    #[arg(long, value_parser = parse_spawn)]
    spawn: Option<SpawnMode>,
    #[arg(long, default_value_t = 100)]
    max_iters: u64,
    /// JSONL memory store every trial starts from.
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write every routed envelope to messages.jsonl.
    #[arg(long)]
    log_messages: bool,
}

fn parse_task(s: &str) -> Result<TaskFamily, String> {
    s.parse()
}

fn parse_spawn(s: &str) -> Result<SpawnMode, String> {
    s.parse()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Ok(v) = serde_json::from_str::<Vec<u64>>(text) {
        return Ok(v);
    }
    text.split_whitespace()
        .map(|t| t.parse::<u64>().with_context(|| format!("bad seed {t:?}")))
        .collect()
}

fn world_dump(
    seed: u64,
    width: Option<u32>,
    height: Option<u32>,
    layout: Option<LayoutArg>,
    config: Option<PathBuf>,
) -> Result<()> {
    let mut cfg: WorldConfig = match config {
        Some(p) => serde_json::from_str(&read(&p)?).context("parsing world config")?,
        None => WorldConfig::default(),
    };
    cfg.seed = seed;
    if let Some(w) = width {
        cfg.width = w;
    }
    if let Some(h) = height {
        cfg.height = h;
    }
    match layout {
        Some(LayoutArg::Freeform) => cfg.layout = Layout::Freeform,
        Some(LayoutArg::DiamondGrid16) => cfg.layout = Layout::DiamondGrid16,
        None => {}
    }
    print!("{}", generate_world(&cfg)?.dump());
    Ok(())
}

fn memory(cmd: MemoryCommand) -> Result<()> {
    match cmd {
        MemoryCommand::Inspect { file } => {
            let store = MemoryStore::load_jsonl(&file)?;
            println!("{} entries", store.len());
            for e in store.entries() {
                println!(
                    "#{} step {}: {} | {}",
                    e.id,
                    e.created_step,
                    e.task_text,
                    e.plan.summary()
                );
            }
        }
        MemoryCommand::Query { file, text, k } => {
            let store = MemoryStore::load_jsonl(&file)?;
            for r in store.rank(&tokenize(&text), k) {
                println!("{:.4} #{} {}", r.score.score, r.entry.id, r.entry.task_text);
            }
        }
    }
    Ok(())
}

fn bundle(args: &RunArgs) -> Result<BackendBundle> {
    Ok(match args.backend {
        BackendArg::Scripted => BackendBundle::scripted(ScriptedConfig::default()),
        BackendArg::Http => {
            let endpoint = match &args.endpoint {
                Some(e) => e.clone(),
                None => std::env::var(ENDPOINT_VAR)
                    .with_context(|| format!("--endpoint or ${ENDPOINT_VAR} is required"))?,
            };
            BackendBundle::http(HttpClient::new(HttpConfig::new(endpoint)))
        }
    })
}

fn run(args: RunArgs) -> Result<bool> {
    let family = match (args.task, &args.goal) {
        (Some(t), None) => t,
        (None | Some(TaskFamily::GoalSearch), Some(_)) => TaskFamily::GoalSearch,
        (Some(t), Some(_)) => bail!("--goal only applies to goal-search, not {t}"),
        (None, None) => bail!("one of --task or --goal is required"),
    };
    let mut spec = TaskSpec::for_family(family);
    if let Some(path) = &args.world {
        spec.world = serde_json::from_str(&read(path)?).context("parsing world config")?;
    }
    if let Some(path) = &args.goal {
        spec.goal = Some(Goal::from_json(&read(path)?)?);
    }
    spec.n_agents = args.agents;
    spec.seeds = match &args.seeds {
        Some(p) => parse_seeds(&read(p)?)?,
        None => default_seeds(args.trials),
    };
    spec.ablation = Ablation::parse_list(&args.ablate).map_err(anyhow::Error::msg)?;
    if let Some(s) = args.spawn {
        spec.spawn = s;
    }
    spec.max_iters = args.max_iters;
    spec.hierarchy.log_messages = args.log_messages;
    if let Some(p) = &args.memory {
        spec.memory = MemoryStore::load_jsonl(p)?;
    }
    let output = run_task(&spec, &bundle(&args)?)?;
    output.write(&args.out)?;
    print!("{}", table_markdown(std::slice::from_ref(&output.summary)));
    for t in output.summary.per_trial.iter().filter(|t| !t.completed) {
        eprintln!(
            "trial {} (seed {}) failed: {}",
            t.trial,
            t.seed,
            t.error.as_deref().unwrap_or("unknown error")
        );
    }
    Ok(output.all_completed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::World(WorldCommand::Dump {
            seed,
            width,
            height,
            layout,
            config,
        }) => world_dump(seed, width, height, layout, config).map(|_| true),
        Command::Memory(cmd) => memory(cmd).map(|_| true),
        Command::Run(args) => run(args),
        Command::StubServer { port } => StubServer::start(port, StubMode::Faithful)
            .map(|s| {
                println!("listening on {}", s.endpoint());
                s.wait();
                true
            })
            .map_err(Into::into),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
