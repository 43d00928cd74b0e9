//! Command-line front end.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arena_core::arena::{Arena, CycleRecord, FundRequest, RunOutcome};
use arena_core::config::{init_data_dir, open_arena, ArenaConfig, RunConfig};
use arena_core::gateway::GatewayMode;
use arena_core::market::{SampleSpec, Ticker};
use arena_core::portfolio::{ExecutionPolicy, FundConfig, FundId};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rust_decimal::Decimal;

use crate::api::{build_leaderboard, router, AppState};
use crate::error::ApiError;

#[derive(Debug, Parser)]
#[command(name = "arena", version, about = "Run LLM-managed paper funds against time-gated market data")]
pub struct Cli {
    /// Data directory holding config, datasets, fund logs and cassettes.
    #[arg(long, env = "ARENA_DATA_DIR", default_value = "data", global = true)]
    pub data_dir: PathBuf,
    /// Override the configured gateway mode.
    #[arg(long, env = "ARENA_MODE", global = true)]
    pub mode: Option<Mode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Live,
    Replay,
}

impl From<Mode> for GatewayMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Live => GatewayMode::Live,
            Mode::Replay => GatewayMode::Replay,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scaffold a data directory with a config and a sample dataset.
    Init(InitArgs),
    /// Manage funds.
    #[command(subcommand)]
    Fund(FundCommand),
    /// Replay a fund over a date range.
    Replay(ReplayArgs),
    /// Single cycles.
    #[command(subcommand)]
    Cycle(CycleCommand),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Print the fund ranking.
    Leaderboard(LeaderboardArgs),
    /// Write a fund's events and the model exchanges they reference.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Comma-separated tickers for the sample dataset.
    #[arg(long, value_delimiter = ',', default_value = "AAPL,MSFT,NVDA,AMZN,JPM")]
    pub tickers: Vec<String>,
    #[arg(long, default_value_t = 45)]
    pub days: usize,
    #[arg(long, default_value = "2025-01-02")]
    pub start: NaiveDate,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum FundCommand {
    /// Create a fund.
    Create(FundCreateArgs),
    /// List funds.
    List,
    /// Show one fund as JSON.
    Show {
        #[arg(long)]
        fund: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Policy {
    Close,
    NextOpen,
}

#[derive(Debug, Args)]
pub struct FundCreateArgs {
    #[arg(long)]
    pub name: String,
    /// Model spec id.
    #[arg(long, default_value = arena_core::config::MOCK_MODEL)]
    pub model: String,
    /// Comma-separated stock pool.
    #[arg(long, value_delimiter = ',', required = true)]
    pub pool: Vec<String>,
    #[arg(long, default_value = "100000")]
    pub cash: Decimal,
    #[arg(long)]
    pub fee_bps: Option<Decimal>,
    #[arg(long)]
    pub max_weight: Option<Decimal>,
    #[arg(long)]
    pub policy: Option<Policy>,
    #[arg(long)]
    pub memory_window: Option<usize>,
    #[arg(long)]
    pub inception: Option<NaiveDate>,
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, required_unless_present = "config")]
    pub fund: Option<String>,
    #[arg(long, required_unless_present = "config")]
    pub from: Option<NaiveDate>,
    #[arg(long, required_unless_present = "config")]
    pub to: Option<NaiveDate>,
    /// Run file naming the fund, range and options; creates the fund when missing.
    #[arg(long, conflicts_with = "fund")]
    pub config: Option<PathBuf>,
    /// Replay even when the model's knowledge cutoff is inside the range.
    #[arg(long)]
    pub allow_contaminated: bool,
}

#[derive(Debug, Subcommand)]
pub enum CycleCommand {
    /// Run one trading day.
    Run {
        #[arg(long)]
        fund: String,
        #[arg(long)]
        date: NaiveDate,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct LeaderboardArgs {
    #[arg(long)]
    pub rank_key: Option<String>,
    /// Emit JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub fund: String,
    /// Output directory; defaults to `<data>/exports/<fund>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn load_config(data_dir: &Path, mode: Option<Mode>) -> Result<ArenaConfig, ApiError> {
    let mut cfg = ArenaConfig::load(data_dir)?;
    if let Some(m) = mode {
        cfg.mode = m.into();
    }
    Ok(cfg)
}

pub fn open(data_dir: &Path, mode: Option<Mode>) -> Result<(Arena, ArenaConfig), ApiError> {
    let cfg = load_config(data_dir, mode)?;
    let arena = open_arena(data_dir, &cfg)?;
    Ok((arena, cfg))
}

fn fund_id(raw: &str) -> FundId {
    FundId::new(raw)
}

/// One line per completed cycle.
pub fn cycle_line(r: &CycleRecord) -> String {
    let actions: Vec<String> = r
        .decisions
        .iter()
        .map(|d| format!("{}:{}", d.ticker, serde_json::to_value(d.action).unwrap().as_str().unwrap_or("?")))
        .collect();
    format!(
        "{}  nav={}  cash={}  fills={}  skips={}  {}",
        r.trading_date,
        r.nav_snapshot.nav,
        r.nav_snapshot.cash,
        r.fills.len(),
        r.skips.len(),
        actions.join(" ")
    )
}

fn print_outcome(out: &mut impl Write, o: &RunOutcome) -> Result<(), ApiError> {
    for r in &o.records {
        writeln!(out, "{}", cycle_line(r)).map_err(io)?;
    }
    writeln!(out, "{} {} {} cycles", o.run.run_id, o.run.status, o.records.len()).map_err(io)?;
    match &o.error {
        Some(e) => Err(ApiError::from(e.clone())),
        None => Ok(()),
    }
}

fn io(e: std::io::Error) -> ApiError {
    ApiError::new("STORAGE_FAILURE", e.to_string())
}

/// Execute a parsed command, writing human output to `out`.
pub async fn run(cli: Cli, out: &mut (impl Write + Send)) -> Result<(), ApiError> {
    let dir = cli.data_dir.clone();
    match cli.command {
        Command::Init(a) => {
            let tickers = a
                .tickers
                .iter()
                .map(|t| Ticker::new(t).map_err(|e| ApiError::validation(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            if a.days == 0 {
                return Err(ApiError::validation("--days must be positive"));
            }
            let spec = SampleSpec { tickers, start: a.start, trading_days: a.days, seed: a.seed };
            let s = init_data_dir(&dir, &spec)?;
            writeln!(
                out,
                "initialized {} ({} facts, {} to {}){}",
                dir.display(),
                s.facts,
                s.first_day.map(|d| d.to_string()).unwrap_or_default(),
                s.last_day.map(|d| d.to_string()).unwrap_or_default(),
                if s.config_written { "" } else { "; kept existing config" }
            )
            .map_err(io)?;
        }
        Command::Fund(FundCommand::Create(a)) => {
            let (arena, _) = open(&dir, cli.mode)?;
            let mut config = FundConfig::default();
            if let Some(v) = a.fee_bps {
                config.fee_bps = v;
            }
            if let Some(v) = a.max_weight {
                config.max_position_weight = v;
            }
            if let Some(p) = a.policy {
                config.execution_policy = match p {
                    Policy::Close => ExecutionPolicy::Close,
                    Policy::NextOpen => ExecutionPolicy::NextOpen,
                };
            }
            if let Some(w) = a.memory_window {
                config.memory_window = w;
            }
            let req = FundRequest {
                name: a.name,
                model_spec: a.model,
                stock_pool: a.pool,
                initial_cash: a.cash,
                config,
                fund_id: a.id,
                inception: a.inception,
            };
            let state = arena.create_fund(&req)?;
            writeln!(out, "{}", state.fund.fund_id).map_err(io)?;
        }
        Command::Fund(FundCommand::List) => {
            let (arena, _) = open(&dir, cli.mode)?;
            for id in arena.fund_ids()? {
                let s = arena.summary(&arena.fund(&id)?);
                writeln!(
                    out,
                    "{}  {}  {}  nav={}  cycles={}  {}",
                    s.fund_id, s.name, s.model_spec_id, s.nav, s.cycles, s.status
                )
                .map_err(io)?;
            }
        }
        Command::Fund(FundCommand::Show { fund }) => {
            let (arena, _) = open(&dir, cli.mode)?;
            let s = arena.summary(&arena.fund(&fund_id(&fund))?);
            writeln!(out, "{}", serde_json::to_string_pretty(&s).unwrap()).map_err(io)?;
        }
        Command::Replay(a) => {
            let (arena, _) = open(&dir, cli.mode)?;
            let (id, from, to, allow) = match &a.config {
                Some(path) => {
                    let rc = RunConfig::load(path)?;
                    if let Some(spec) = &rc.model_spec {
                        arena.gateway().register_model(spec.clone());
                    }
                    let req = rc.fund_request();
                    let id = match arena.create_fund(&req) {
                        Ok(s) => s.fund.fund_id,
                        Err(arena_core::arena::ArenaError::FundExists(id)) => id,
                        Err(e) => return Err(e.into()),
                    };
                    (id, rc.from, rc.to, rc.allow_contaminated || a.allow_contaminated)
                }
                None => (
                    fund_id(a.fund.as_deref().unwrap_or_default()),
                    a.from.expect("required by clap"),
                    a.to.expect("required by clap"),
                    a.allow_contaminated,
                ),
            };
            let outcome = arena.run_replay(&id, from, to, allow).await?;
            print_outcome(out, &outcome)?;
        }
        Command::Cycle(CycleCommand::Run { fund, date }) => {
            let (arena, _) = open(&dir, cli.mode)?;
            let run = arena.prepare_cycle(&fund_id(&fund), date)?;
            let outcome = arena.execute_cycle(&run.run_id).await?;
            print_outcome(out, &outcome)?;
        }
        Command::Serve(a) => {
            let (arena, cfg) = open(&dir, cli.mode)?;
            let addr: SocketAddr = format!("{}:{}", a.bind, a.port)
                .parse()
                .map_err(|e| ApiError::validation(format!("bad bind address: {e}")))?;
            let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
                if e.kind() == std::io::ErrorKind::AddrInUse {
                    ApiError::new("PORT_IN_USE", format!("{addr}: {e}"))
                } else {
                    io(e)
                }
            })?;
            let local = listener.local_addr().map_err(io)?;
            writeln!(out, "listening on http://{local}").map_err(io)?;
            out.flush().map_err(io)?;
            let state = AppState { arena: Arc::new(arena), mode: cfg.mode, rank_key: cfg.rank_key };
            axum::serve(listener, router(state)).with_graceful_shutdown(shutdown()).await.map_err(io)?;
        }
        Command::Leaderboard(a) => {
            let (arena, cfg) = open(&dir, cli.mode)?;
            let key = a.rank_key.unwrap_or(cfg.rank_key);
            let board = build_leaderboard(&arena, &key)?;
            if a.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&board).unwrap()).map_err(io)?;
            } else {
                writeln!(out, "{}", render_leaderboard(&board)).map_err(io)?;
            }
        }
        Command::Export(a) => {
            let (arena, _) = open(&dir, cli.mode)?;
            let id = fund_id(&a.fund);
            let target = a.out.unwrap_or_else(|| dir.join("exports").join(id.as_str()));
            let s = arena.export_fund(&id, &target)?;
            writeln!(
                out,
                "exported {} events and {} exchanges to {}",
                s.events,
                s.exchanges,
                target.display()
            )
            .map_err(io)?;
            if s.missing_exchanges > 0 {
                writeln!(out, "warning: {} referenced exchanges not in any cassette", s.missing_exchanges)
                    .map_err(io)?;
            }
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

pub fn render_leaderboard(board: &crate::api::Leaderboard) -> String {
    let mut lines = vec![format!(
        "{:<4} {:<18} {:<16} {:>14} {:>12} {:>12} {:>10} {:>6}",
        "rank", "fund", "name", board.rank_key, "cum_return", "max_dd", "sharpe", "days"
    )];
    for e in &board.rows {
        let r = &e.row.report;
        let mut name = e.name.clone();
        name.truncate(16);
        lines.push(format!(
            "{:<4} {:<18} {:<16} {:>14} {:>12} {:>12} {:>10} {:>6}",
            e.row.rank,
            e.row.fund_id,
            name,
            fmt_opt(e.row.value),
            fmt_opt(r.cumulative_return),
            fmt_opt(r.max_drawdown),
            fmt_opt(r.sharpe),
            r.n_days
        ));
    }
    lines.join("\n")
}

async fn shutdown() {
    let _ = tokio::signal::ctrl_c().await;
}
