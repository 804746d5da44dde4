use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use judge_core::backend::{build_backend, BackendConfig, MockRuleTable, ENV_BASE_URL};
use judge_core::metrics::Averaging;
use judge_core::runner::{run_evaluation, validate_tree, Ablations, Filters, RunConfig};
use judge_core::service::serve_assist;
use judge_core::verifiers::{ConsistencyMode, VerifierRouting};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "judge", version, about = "Judge GUI-testing agent trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Judge every run under a trajectories tree and write reports.
    Run(RunArgs),
    /// Serve the verifiers over HTTP.
    Serve(ServeArgs),
    /// Check case and trajectory bundles without judging.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConsistencyArg {
    Deterministic,
    Model,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendArg,
    /// Judge model name (http backend).
    #[arg(long)]
    model: Option<String>,
    /// Chat-completion base URL (http backend).
    #[arg(long, env = ENV_BASE_URL)]
    base_url: Option<String>,
    /// Replay responses from a cassette instead of the network.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Append live exchanges to a cassette.
    #[arg(long)]
    record: Option<PathBuf>,
    /// JSON rule table for the mock backend.
    #[arg(long)]
    mock_rules: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    /// Concurrent judge requests allowed by the backend.
    #[arg(long, default_value_t = 8)]
    budget: usize,
}

impl BackendArgs {
    fn config(&self) -> Result<BackendConfig> {
        let mut config = match self.backend {
            BackendArg::Mock => {
                let rules = match &self.mock_rules {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
                    }
                    None => MockRuleTable::default(),
                };
                BackendConfig::mock(rules)
            }
            BackendArg::Http => {
                let Some(model) = &self.model else {
                    bail!("--model is required with --backend http");
                };
                BackendConfig::http(self.base_url.as_deref().unwrap_or_default(), model)
            }
        };
        config.cassette = self.cassette.clone();
        config.record = self.record.clone();
        config.max_retries = self.max_retries;
        config.request_timeout_secs = self.timeout_secs;
        config.concurrency_budget = self.budget;
        config.validate()?;
        Ok(config)
    }
}

fn parse_k(s: &str) -> Result<Vec<usize>, String> {
    let mut ks = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Pass@k values, comma separated.
    #[arg(long, default_value = "1,3", value_parser = parse_k)]
    k: std::vec::Vec<usize>,
    #[arg(long, value_enum, default_value = "deterministic")]
    consistency: ConsistencyArg,
    /// Judge the whole trajectory as one segment.
    #[arg(long)]
    ablate_retrieval: bool,
    /// Use one merged verifier instead of the typed pair.
    #[arg(long)]
    unified_verifier: bool,
    /// Run both typed verifiers on every case.
    #[arg(long)]
    both_verifiers: bool,
    /// Only findings of the case's own fault mode count toward Detect.
    #[arg(long)]
    strict_fault_mode: bool,
    /// Macro-average the aggregate columns.
    #[arg(long)]
    macro_average: bool,
    /// Trajectories judged concurrently.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Exit nonzero when any run is unscored.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model glob filter (repeatable).
    #[arg(long = "filter-model")]
    filter_model: Vec<String>,
    /// Case glob filter (repeatable).
    #[arg(long = "filter-case")]
    filter_case: Vec<String>,
    /// Fault-mode glob filter, e.g. `ONR` or `IF.*` (repeatable).
    #[arg(long = "filter-fault-mode")]
    filter_fault_mode: Vec<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

async fn run(args: RunArgs) -> Result<ExitCode> {
    let mut config = RunConfig::new(&args.cases, &args.trajectories, &args.out, args.backend.config()?);
    config.k_values = args.k;
    config.consistency_mode = match args.consistency {
        ConsistencyArg::Deterministic => ConsistencyMode::Deterministic,
        ConsistencyArg::Model => ConsistencyMode::Model,
    };
    config.ablations = Ablations {
        no_retrieval: args.ablate_retrieval,
        unified_verifier: args.unified_verifier,
    };
    if args.both_verifiers {
        config.routing = VerifierRouting::Both;
    }
    config.strict_fault_mode = args.strict_fault_mode;
    if args.macro_average {
        config.averaging = Averaging::Macro;
    }
    config.concurrency = args.concurrency;
    config.seed = args.seed;
    config.filters = Filters {
        models: args.filter_model,
        cases: args.filter_case,
        fault_modes: args.filter_fault_mode,
    };

    let summary = run_evaluation(&config).await?;
    let units = summary.report.units.len();
    eprintln!(
        "judged {} run(s) over {units} unit(s); {} unscored; {} validation failure(s); reports in {}",
        summary.outcomes.len(),
        summary.unscored_runs,
        summary.validation_failures.len(),
        config.output_dir.display()
    );
    for f in &summary.validation_failures {
        eprintln!("invalid: {}: {}", f.path.display(), f.message);
    }
    Ok(ExitCode::from(summary.exit_code(args.strict) as u8))
}

async fn serve(args: ServeArgs) -> Result<ExitCode> {
    let backend = build_backend(&args.backend.config()?)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("bad listen address {}:{}", args.host, args.port))?;
    serve_assist(addr, backend).await?;
    Ok(ExitCode::SUCCESS)
}

fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let (cases, runs, failures) = validate_tree(&args.cases, args.trajectories.as_deref())?;
    for f in &failures {
        println!("invalid: {}: {}", f.path.display(), f.message);
    }
    println!("{cases} case(s), {runs} valid run(s), {} problem(s)", failures.len());
    Ok(if failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args).await,
        Command::Serve(args) => serve(args).await,
        Command::Validate(args) => validate(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
