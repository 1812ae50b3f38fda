//! Command-line front end for ask/tell campaigns.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 1 anything
//! else (I/O, corrupt state, occupied port).

use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bogo::campaign::{CampaignConfig, CampaignStore};
use bogo::diagnostics::{report_to_table, write_csv};
use bogo::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bogo", version, about = "Bayesian optimization campaigns")]
struct Cli {
    /// Directory holding campaign state.
    #[arg(long, global = true, env = "BOGO_DIR", default_value = "bogo-campaigns")]
    dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a campaign from a JSON or TOML config file.
    Create {
        #[arg(long)]
        config: PathBuf,
        /// Campaign id (random if omitted).
        #[arg(long)]
        id: Option<String>,
    },
    /// Record an observation.
    Tell {
        id: String,
        /// Comma-separated design point.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        y: f64,
        #[arg(long)]
        tag: Option<String>,
        /// Only apply if the campaign is at this revision.
        #[arg(long)]
        if_match: Option<u64>,
    },
    /// Print the next suggested design point.
    Ask { id: String },
    /// Print the campaign state.
    Show { id: String },
    /// Leave-one-out diagnostics as CSV.
    Diagnose {
        id: String,
        #[arg(long)]
        refit_per_fold: bool,
        /// Estimate hyperparameters once instead of per fold.
        #[arg(long, conflicts_with = "refit_per_fold")]
        no_refit_per_fold: bool,
    },
    /// Posterior slice along one axis as CSV.
    Curve {
        id: String,
        #[arg(long, default_value_t = 0)]
        axis: usize,
        #[arg(long, default_value_t = 100)]
        resolution: usize,
        /// Comma-separated values for the fixed coordinates.
        #[arg(long, allow_hyphen_values = true)]
        slice: Option<String>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn parse_point(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("not a number: {s:?}")))
        })
        .collect()
}

fn read_config(path: &Path) -> Result<CampaignConfig> {
    let text = fs::read_to_string(path)?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    writeln!(std::io::stdout(), "{text}")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Serve { host, port } = cli.command {
        let runtime = tokio::runtime::Runtime::new()?;
        return runtime.block_on(bogo::campaign::server::serve(cli.dir, SocketAddr::new(host, port)));
    }
    let store = CampaignStore::open(&cli.dir)?;
    match cli.command {
        Command::Create { config, id } => {
            let config = read_config(&config)?;
            let state = match id {
                Some(id) => store.create_with_id(&id, config)?,
                None => store.create(config)?,
            };
            print_json(&state)
        }
        Command::Tell {
            id,
            x,
            y,
            tag,
            if_match,
        } => {
            let state = store.tell(&id, parse_point(&x)?, y, tag, if_match)?;
            print_json(&serde_json::json!({ "id": state.id, "n": state.n(), "revision": state.revision }))
        }
        Command::Ask { id } => print_json(&store.ask(&id)?),
        Command::Show { id } => print_json(&store.state(&id)?),
        Command::Diagnose {
            id,
            refit_per_fold,
            no_refit_per_fold,
        } => {
            let refit = match (refit_per_fold, no_refit_per_fold) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            };
            let report = store.diagnose(&id, refit)?;
            write_csv(&report_to_table(&report), std::io::stdout().lock())?;
            eprintln!(
                "coverage {:.4} over {} site(s), refit_per_fold={}",
                report.coverage,
                report.records.len(),
                report.refit_per_fold
            );
            Ok(())
        }
        Command::Curve {
            id,
            axis,
            resolution,
            slice,
        } => {
            let slice = slice.as_deref().map(parse_point).transpose()?;
            let rows = store.curve(&id, axis, slice.as_deref(), resolution)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "x,mean,lower,upper,acquisition")?;
            for r in rows {
                writeln!(out, "{},{},{},{},{}", r.x, r.mean, r.lower, r.upper, r.acquisition)?;
            }
            Ok(())
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error [{}]: {err}", err.kind());
            ExitCode::from(err.exit_code())
        }
    }
}
