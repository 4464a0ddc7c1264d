//! `advisor`: data generation, training, backtests, strategy comparison,
//! dialogue simulation and the HTTP service.
//!
//! Exit codes: 0 success, 1 assertion or experiment failure, 2 usage or
//! configuration error, 3 numerical abort (non-finite parameters or loss).

mod dialogue;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use advisor_core::config::RunConfig;
use advisor_core::experiment::StrategyName;
use advisor_core::market::{generate_universe, write_csv};
use advisor_core::pipeline::{run_backtest, run_compare, run_train};
use advisor_core::reward::COMPARISON_COLUMNS;
use advisor_core::Error as CoreError;
use advisor_service::{AdvisoryService, BackendSettings, SelectMode, ServiceSettings};
use clap::{Parser, Subcommand};
use serde::Deserialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Assertion(String),
    Numeric(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Assertion(_) => 1,
            Self::Usage(_) | Self::Other(_) => 2,
            Self::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Assertion(m) | Self::Numeric(m) | Self::Other(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. } => Self::Numeric(format!("numerical abort: {e}")),
            other => Self::Usage(other.to_string()),
        }
    }
}

impl From<advisor_service::ServiceError> for CliError {
    fn from(e: advisor_service::ServiceError) -> Self {
        match e {
            advisor_service::ServiceError::Core(c) => c.into(),
            other => Self::Usage(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "advisor", version, about = "Personalized portfolio advisor")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed (market and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic market as `date,asset_id,close` CSV.
    GenData {
        /// Defaults to `<out>/<run_id>/market.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a policy; writes a checkpoint and `loss_curve.csv`.
    Train {
        /// Train the risk-blind policy (no alignment term) instead.
        #[arg(long)]
        blind: bool,
    },
    /// Walk-forward backtest of one strategy on the out-of-sample period.
    Backtest {
        #[arg(long)]
        strategy: String,
    },
    /// Compare strategies; writes `comparison.csv`.
    Compare {
        /// Comma-separated subset of equal_weight,mvo,ppo,ppo_personalized.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Run a JSON-lines dialogue script and check expected directions.
    SimulateDialogue {
        #[arg(long)]
        script: PathBuf,
        /// Defaults to `<out>/<run_id>/dialogue.jsonl`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        /// Defaults to the config's `service.bind`, else 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<String>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs --config PATH".into()))?;
    let cfg = RunConfig::load(path)?;
    Ok(cfg.with_overrides(cli.seed, cli.out.clone()))
}

/// Like [`load_config`] but falls back to defaults when no config is given.
fn optional_config(cli: &Cli) -> Result<Option<RunConfig>, CliError> {
    cli.config.as_ref().map(|_| load_config(cli)).transpose()
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(io_err(dir)),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData { output } => {
            let cfg = load_config(&cli)?;
            let market = cfg
                .market_config()
                .ok_or_else(|| CliError::Usage("gen-data needs a synthetic market section".into()))?;
            let universe = generate_universe(&market)?;
            let path = output.clone().unwrap_or_else(|| cfg.run_dir().join("market.csv"));
            create_parent(&path)?;
            let file = File::create(&path).map_err(io_err(&path))?;
            write_csv(&universe, BufWriter::new(file))?;
            println!("{}", path.display());
        }
        Command::Train { blind } => {
            let cfg = load_config(&cli)?;
            let artifacts = run_train(&cfg, !blind, |rec| {
                if rec.update % 10 == 0 {
                    eprintln!(
                        "update {:>4}  total_loss {:>10.5}  mean_reward {:>9.5}",
                        rec.update, rec.total_loss, rec.mean_reward
                    );
                }
                true
            })?;
            println!("checkpoint {}", artifacts.checkpoint.display());
            println!("loss_curve {}", artifacts.loss_curve.display());
        }
        Command::Backtest { strategy } => {
            let cfg = load_config(&cli)?;
            let name = StrategyName::parse(strategy)?;
            let result = run_backtest(&cfg, name)?;
            std::fs::create_dir_all(cfg.run_dir()).map_err(io_err(&cfg.run_dir()))?;
            let path = cfg.run_dir().join(format!("backtest_{}.csv", name.as_str()));
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
                writeln!(w, "step,return,equity,exposure")?;
                for (i, r) in result.returns.iter().enumerate() {
                    writeln!(w, "{i},{r},{},{}", result.equity[i + 1], result.exposures[i])?;
                }
                w.flush()
            };
            write(&mut w).map_err(io_err(&path))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&result.report).map_err(|e| CliError::Other(e.to_string()))?
            );
            println!("equity {}", path.display());
        }
        Command::Compare { strategies } => {
            let cfg = load_config(&cli)?;
            let names = match strategies {
                Some(list) => list
                    .iter()
                    .map(|s| StrategyName::parse(s.trim()))
                    .collect::<Result<Vec<_>, _>>()?,
                None => cfg.strategies.clone(),
            };
            let out = run_compare(&cfg, &names, |n| eprintln!("running {}", n.as_str()))?;
            println!("{:<18}{}", "strategy", COMPARISON_COLUMNS.map(|c| format!("{c:>10}")).join(""));
            for row in &out.rows {
                let m = &row.report;
                println!(
                    "{:<18}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
                    row.strategy, m.annualized_return, m.sharpe, m.max_drawdown, m.info_ratio, m.calmar, m.uas
                );
            }
            println!("comparison {}", out.csv.display());
        }
        Command::SimulateDialogue { script, output } => {
            let cfg = optional_config(&cli)?;
            let text = std::fs::read_to_string(script).map_err(io_err(script))?;
            let (lexicon, head) = match &cfg {
                Some(c) => {
                    let lex = c.risk.lexicon()?;
                    let head = c.risk.head(&lex)?;
                    (lex, head)
                }
                None => {
                    let lex = Default::default();
                    let head = advisor_core::risk::RiskHeadParams::from_lexicon(&lex);
                    (lex, head)
                }
            };
            let path = output.clone().unwrap_or_else(|| {
                let dir = match &cfg {
                    Some(c) => c.run_dir(),
                    None => cli.out.clone().unwrap_or_else(|| PathBuf::from("runs")).join("run"),
                };
                dir.join("dialogue.jsonl")
            });
            create_parent(&path)?;
            let file = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            let outcome = dialogue::simulate(&text, &lexicon, &head, &mut w);
            w.flush().map_err(io_err(&path))?;
            outcome?;
            println!("{}", path.display());
        }
        Command::Serve { bind } => {
            let cfg = load_config(&cli)?;
            serve(&cli, cfg, bind.clone())?;
        }
    }
    Ok(())
}

fn default_true() -> bool {
    true
}

fn default_lookback() -> usize {
    60
}

fn default_jobs() -> usize {
    2
}

/// The optional `service` section of the run config.
#[derive(Debug, Deserialize)]
struct ServeSection {
    #[serde(default)]
    bind: Option<String>,
    #[serde(default)]
    journal: Option<PathBuf>,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    #[serde(default = "default_true")]
    fallback_enabled: bool,
    #[serde(default = "default_lookback")]
    lookback: usize,
    #[serde(default)]
    backend: BackendSettings,
    #[serde(default)]
    reply_mode: Option<SelectMode>,
    #[serde(default = "default_jobs")]
    max_concurrent_jobs: usize,
}

fn serve_section(path: &Path) -> Result<ServeSection, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let section = doc.get("service").cloned().unwrap_or_else(|| serde_json::json!({}));
    let mut s: ServeSection = serde_json::from_value(section)
        .map_err(|e| CliError::Usage(format!("invalid service section: {e}")))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut s.journal, &mut s.checkpoint].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(ck) = &s.checkpoint {
        if !ck.exists() {
            return Err(CliError::Usage(format!("checkpoint {} does not exist", ck.display())));
        }
    }
    Ok(s)
}

fn serve(cli: &Cli, cfg: RunConfig, bind: Option<String>) -> Result<(), CliError> {
    let section = serve_section(cli.config.as_deref().expect("config was loaded"))?;
    let lexicon = cfg.risk.lexicon()?;
    let head = cfg.risk.head(&lexicon)?;
    let mut settings = ServiceSettings::new(Arc::new(cfg.universe()?));
    settings.journal = Some(section.journal.unwrap_or_else(|| cfg.run_dir().join("journal.jsonl")));
    settings.checkpoint = section.checkpoint;
    settings.window = cfg.env.window;
    settings.fallback_enabled = section.fallback_enabled;
    settings.lookback = section.lookback;
    settings.lexicon = lexicon;
    settings.head = Some(head);
    settings.reply_mode = section.reply_mode.unwrap_or(SelectMode::Argmax);
    settings.backend = section.backend;
    settings.job_output_dir = cfg.output_dir.join("jobs");
    settings.max_concurrent_jobs = section.max_concurrent_jobs;
    let addr = bind.or(section.bind).unwrap_or_else(|| "127.0.0.1:8080".into());

    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    runtime.block_on(async move {
        let service = Arc::new(AdvisoryService::open(settings)?);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Other(e.to_string()))?;
        println!("listening on http://{local}");
        advisor_service::http::serve(listener, service, shutdown_signal())
            .await
            .map_err(|e| CliError::Other(e.to_string()))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
