use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use toc_bench::generate::{generate_suite, Category};
use toc_bench::report::{emit_report, BenchReport, ReportFormat};
use toc_bench::runner::{run_task, run_tasks, BenchEnv, Strategy, TaskTrace};
use toc_bench::setup::{build_backend, build_executor, ConfigError};
use toc_bench::suite::load_suite;
use toc_core::baselines::{Termination, DEFAULT_MAX_STEPS};
use toc_core::execution::ExecutorLimits;
use toc_core::gateway::Gateway;
use toc_core::model::TreeConfig;
use toc_core::prompt::{evolve_prompts, PromptPool};
use toc_core::tree::Pools;

#[derive(Parser)]
#[command(name = "toc", version, about = "Grow, run and benchmark trees of whole-program code nodes")]
struct Cli {
    /// Log progress to stderr
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task and print its trace as JSON
    Run {
        #[command(flatten)]
        common: Common,
        /// Task id within the suite
        #[arg(long)]
        task: String,
        /// Write the trace here instead of stdout
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a whole suite under one strategy
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
    /// Run the tree strategy over a grid of depths and widths
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        depths: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        widths: Vec<u32>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
    /// Ask a model for variants of a prompt and save the resulting pool
    EvolvePrompts {
        /// `scripted:TRANSCRIPT` or `remote:MODELS`
        #[arg(long)]
        backend: String,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Model id that writes the variants (default: first in the pool)
        #[arg(long)]
        model: Option<String>,
        /// Directory holding the starting pool (default: bundled pool)
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Id of the template to evolve
        #[arg(long, default_value = "root")]
        base: String,
        #[arg(long, default_value_t = 3)]
        count: usize,
        /// Output directory for the extended pool
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the generated task suites
    GenSuites {
        #[arg(long)]
        out: PathBuf,
        /// Tasks per suite
        #[arg(long, default_value_t = 10)]
        tasks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyKind {
    Toc,
    React,
    Codeact,
}

#[derive(Clone, Copy, ValueEnum)]
enum TerminationKind {
    AnswerTag,
    GtMatch,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, value_enum, default_value = "toc")]
    strategy: StrategyKind,
    /// Maximum layers (L)
    #[arg(long, default_value_t = 3)]
    depth: u32,
    /// Nodes per layer (M)
    #[arg(long, default_value_t = 3)]
    width: u32,
    /// Step limit for the multi-turn baselines
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: u32,
    #[arg(long, value_enum, default_value = "answer-tag")]
    termination: TerminationKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tasks run concurrently
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// `scripted:TRANSCRIPT` or `remote:MODELS`
    #[arg(long)]
    backend: String,
    /// Model pool file (JSON list) for scripted backends
    #[arg(long)]
    models: Option<PathBuf>,
    /// `scripted:TABLE` or `sandbox:COMMAND`
    #[arg(long, default_value = "sandbox:toc-worker")]
    executor: String,
    /// Prompt pool directory (default: bundled pool)
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Per-node execution timeout
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
}

enum Failure {
    Config(String),
    Protocol(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn prompt_pool(dir: Option<&Path>) -> Result<PromptPool, Failure> {
    match dir {
        Some(d) => PromptPool::load_dir(d).map_err(config_err),
        None => Ok(PromptPool::default_pool()),
    }
}

impl Common {
    fn strategy(&self) -> Result<Strategy, Failure> {
        Ok(match self.strategy {
            StrategyKind::Toc => {
                let config = TreeConfig {
                    timeout_ms: self.timeout_ms,
                    ..TreeConfig::with_shape(self.depth, self.width)
                };
                config.validate().map_err(config_err)?;
                Strategy::Toc(config)
            }
            StrategyKind::React => Strategy::React {
                max_steps: self.max_steps,
            },
            StrategyKind::Codeact => Strategy::CodeAct {
                max_steps: self.max_steps,
                termination: match self.termination {
                    TerminationKind::AnswerTag => Termination::AnswerTag,
                    TerminationKind::GtMatch => Termination::GtMatch,
                },
            },
        })
    }
}

/// Handles shared by every command that runs tasks.
struct Session {
    pools: Pools,
    gateway: Gateway,
    executor: Box<dyn toc_core::execution::Executor>,
    limits: ExecutorLimits,
    jobs: usize,
}

impl Session {
    fn open(common: &Common) -> Result<Self, Failure> {
        if common.max_steps == 0 {
            return Err(Failure::Config("--max-steps must be >= 1".into()));
        }
        let (gateway, models) = build_backend(&common.backend, common.models.as_deref())?;
        Ok(Self {
            pools: Pools::new(prompt_pool(common.prompts.as_deref())?, models),
            gateway,
            executor: build_executor(&common.executor)?,
            limits: ExecutorLimits::with_timeout(common.timeout_ms),
            jobs: common.jobs.max(1),
        })
    }

    fn env(&self) -> BenchEnv<'_> {
        BenchEnv {
            pools: &self.pools,
            executor: self.executor.as_ref(),
            gateway: &self.gateway,
            limits: self.limits,
            jobs: self.jobs,
        }
    }
}

fn write_output(report: &BenchReport, path: Option<&Path>, format: ReportFormat) -> Result<(), Failure> {
    match path {
        Some(p) => emit_report(report, p, format).map_err(|e| Failure::Config(format!("{}: {e}", p.display()))),
        None => {
            print!("{}", report.render(format));
            Ok(())
        }
    }
}

fn bench(common: &Common, strategies: &[Strategy], report: Option<&Path>, format: ReportFormat) -> Result<(), Failure> {
    let suite = load_suite(&common.suite).map_err(config_err)?;
    let session = Session::open(common)?;
    let mut rows = Vec::new();
    let mut protocol = None;
    for strategy in strategies {
        for result in run_tasks(&suite, strategy, &session.env(), common.seed) {
            if result.is_protocol_error() && protocol.is_none() {
                protocol = result.row.error.clone();
            }
            rows.push(result.row);
        }
    }
    write_output(&BenchReport::from_rows(rows), report, format)?;
    match protocol {
        Some(e) => Err(Failure::Protocol(e)),
        None => Ok(()),
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, task, trace } => {
            let suite = load_suite(&common.suite).map_err(config_err)?;
            let task = suite
                .task(&task)
                .ok_or_else(|| Failure::Config(format!("no task `{task}` in suite {}", suite.suite_id)))?;
            let strategy = common.strategy()?;
            let session = Session::open(&common)?;
            let result = run_task(task, &strategy, &session.env(), common.seed);
            let json = match &result.trace {
                TaskTrace::Tree(tree) => serde_json::to_string_pretty(tree),
                TaskTrace::Baseline(run) => serde_json::to_string_pretty(run),
                TaskTrace::Aborted(note) => serde_json::to_string_pretty(&serde_json::json!({"error": note})),
            }
            .expect("trace serializes");
            match trace {
                Some(p) => std::fs::write(&p, json + "\n").map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
                None => println!("{json}"),
            }
            if result.is_protocol_error() {
                return Err(Failure::Protocol(result.row.error.unwrap_or_default()));
            }
            Ok(())
        }
        Command::Bench { common, report, format } => {
            let strategy = common.strategy()?;
            bench(&common, &[strategy], report.as_deref(), format)
        }
        Command::Ablate {
            common,
            depths,
            widths,
            report,
            format,
        } => {
            let mut grid = Vec::new();
            for &l in &depths {
                for &m in &widths {
                    let config = TreeConfig {
                        timeout_ms: common.timeout_ms,
                        ..TreeConfig::with_shape(l, m)
                    };
                    config.validate().map_err(config_err)?;
                    grid.push(Strategy::Toc(config));
                }
            }
            bench(&common, &grid, report.as_deref(), format)
        }
        Command::EvolvePrompts {
            backend,
            models,
            model,
            prompts,
            base,
            count,
            out,
        } => {
            let (gateway, pool) = build_backend(&backend, models.as_deref())?;
            let model = match model {
                Some(id) => pool
                    .get(&id)
                    .ok_or_else(|| Failure::Config(format!("no model `{id}` in the pool")))?,
                None => &pool.models()[0],
            };
            let prompts = prompt_pool(prompts.as_deref())?;
            let template = prompts
                .templates()
                .iter()
                .find(|t| t.id == base)
                .ok_or_else(|| Failure::Config(format!("no template `{base}` in the pool")))?;
            let evolution = evolve_prompts(template, count, model, &gateway).map_err(config_err)?;
            for d in &evolution.discarded {
                eprintln!("discarded: {d}");
            }
            let mut templates = prompts.templates().to_vec();
            templates.extend(evolution.templates);
            let extended = PromptPool::new(templates).map_err(config_err)?;
            extended.save_dir(&out).map_err(config_err)?;
            println!("{} templates written to {}", extended.len(), out.display());
            Ok(())
        }
        Command::GenSuites { out, tasks, seed } => {
            std::fs::create_dir_all(&out).map_err(|e| Failure::Config(format!("{}: {e}", out.display())))?;
            for category in Category::ALL {
                let suite = generate_suite(category, tasks, seed);
                let path = out.join(format!("{}.json", category.as_str()));
                std::fs::write(&path, suite.to_json() + "\n")
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                println!("{} ({} tasks) -> {}", suite.suite_id, suite.tasks.len(), path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.verbose {
        tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Protocol(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
