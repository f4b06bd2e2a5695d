use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use thinktank::analytics::{self, Format};
use thinktank::analyzer_http::HttpAnalyzerConfig;
use thinktank::hub::{AnalyzerKind, Hub, HubSettings};
use thinktank::logfile;
use thinktank::sim::{self, ScenarioSpec};
use thinktank_core::replay::replay;
use thinktank_core::session::{Event, SessionConfig};

#[derive(Parser)]
#[command(
    name = "thinktank",
    version,
    about = "Small-group deliberation sessions and pick analytics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzerArg {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the session server.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Session config used when a create request has no body.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mock")]
        analyzer: AnalyzerArg,
        /// Seed for every session created by this server.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scripted scenario and write its log.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score logged picks against outcomes.
    Analyze {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        quantile: f64,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
    /// Re-execute a log and check that it reproduces itself.
    Replay { log: PathBuf },
    /// Print the sentiment series of a log as CSV.
    ExportSeries { log: PathBuf },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Serve {
            port,
            config,
            log_dir,
            analyzer,
            seed,
        } => serve(port, config.as_deref(), log_dir, analyzer, seed),
        Command::Simulate { scenario, out } => {
            let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(&scenario)?)?;
            let log = sim::run_scenario(&spec)?;
            logfile::write_log(&out, &log)?;
            for rec in &log {
                if let Event::RoundFinalized { round, forecast } = &rec.event {
                    println!(
                        "round {round} ({}): wcf {:+.3} pick {:?}",
                        forecast.question_id, forecast.wcf, forecast.pick
                    );
                }
            }
            Ok(())
        }
        Command::Analyze {
            logs,
            outcomes,
            quantile,
            format,
        } => {
            let picks = analytics::picks_in_dir(&logs)?;
            let outcomes = analytics::read_outcomes(&outcomes)?;
            let report = analytics::analyze(&picks, &outcomes, quantile)?;
            let format = match format {
                FormatArg::Table => Format::Table,
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            };
            print!("{}", analytics::render(&report, format));
            Ok(())
        }
        Command::Replay { log } => {
            let records = logfile::read_log(&log)?;
            let engine = replay(&records)?;
            println!("replayed {} records: identical", records.len());
            for o in engine.outcomes() {
                println!(
                    "round {}: wcf {:+.3} pick {:?}, {} insights registered",
                    o.round,
                    o.forecast.wcf,
                    o.forecast.pick,
                    o.matching.registry.len()
                );
            }
            Ok(())
        }
        Command::ExportSeries { log } => {
            print!("{}", analytics::series_csv(&logfile::read_log(&log)?));
            Ok(())
        }
    }
}

fn serve(
    port: u16,
    config: Option<&Path>,
    log_dir: Option<PathBuf>,
    analyzer: AnalyzerArg,
    seed: Option<u64>,
) -> CliResult {
    let default_config = match config {
        Some(p) => {
            let c: SessionConfig = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            c.validate()?;
            Some(c)
        }
        None => None,
    };
    let analyzer = match analyzer {
        AnalyzerArg::Mock => AnalyzerKind::Mock,
        AnalyzerArg::Http => {
            AnalyzerKind::Http(HttpAnalyzerConfig::from_env().ok_or("ANALYZER_URL is not set")?)
        }
    };
    let hub = Arc::new(Hub::new(HubSettings {
        log_dir,
        analyzer,
        default_config,
        seed,
        ..HubSettings::default()
    }));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        thinktank::server::serve(listener, hub).await
    })?;
    Ok(())
}
